"""Command-line entry point wiring the toolkit into the two workflows.

Subcommands: cluster, purity, annotate-export, fractions, knn-eval, survival,
serve. Every command is deterministic given config + seed (serve excluded);
seeds are echoed into all outputs. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, cohort, figures, knn, survival
from .clustering import AnnotationTree, assign, cluster_purity, fit_minibatch_kmeans, purity_coverage_sweep
from .config import ProjectConfig
from .datastore import align, load_clinical, load_embeddings, load_manifest
from .errors import HistokitError

MODEL_FILE = "model.json"
ASSIGNMENTS_FILE = "assignments.csv"
TREE_FILE = "tree.json"


def _fmt(value) -> str:
    return repr(float(value))


def _positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {raw!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _k_list(raw: str) -> list[int]:
    try:
        values = [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list: {raw!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"k values must be >= 1: {raw!r}")
    return values


def _load_config(args) -> ProjectConfig:
    if getattr(args, "config", None):
        config = ProjectConfig.load(args.config, check_paths=False)
    else:
        config = ProjectConfig()
    overrides = {
        "embeddings": ("paths", "embeddings"),
        "manifest": ("paths", "manifest"),
        "clinical": ("paths", "clinical"),
        "tree": ("paths", "tree"),
        "out": ("paths", "output_dir"),
        "k": ("clustering", "k"),
        "batch_size": ("clustering", "batch_size"),
        "max_iters": ("clustering", "max_iters"),
        "seed": ("clustering", "seed"),
        "normalize": ("clustering", "normalize"),
        "penalizer": ("survival", "penalizer"),
        "l1_ratio": ("survival", "l1_ratio"),
        "horizon": ("survival", "horizon_years"),
        "test_fraction": ("survival", "test_fraction"),
        "splits": ("survival", "n_splits"),
        "n_selected": ("survival", "n_selected"),
        "importance_fits": ("survival", "importance_fits"),
        "covariates": ("survival", "covariates"),
        "survival_seed": ("survival", "seed"),
        "host": ("serve", "host"),
        "port": ("serve", "port"),
        "tile_root": ("serve", "tile_root"),
        "ui_root": ("serve", "ui_root"),
        "labels": ("serve", "labels"),
    }
    for arg_name, (section, key) in overrides.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(getattr(config, section), key, value)
    config.check_input_paths()
    return config


def _out_dir(config: ProjectConfig) -> Path:
    out = Path(config.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tree_path(config: ProjectConfig, out: Path) -> Path:
    return Path(config.paths.tree) if config.paths.tree else out / TREE_FILE


def _load_aligned(config: ProjectConfig):
    config.require("embeddings", "manifest")
    embeddings = load_embeddings(config.paths.embeddings)
    manifest = load_manifest(config.paths.manifest)
    dataset = align(embeddings, manifest)
    X = dataset.embeddings.values.astype(np.float64)
    if config.clustering.normalize:
        norms = np.sqrt((X * X).sum(axis=1, keepdims=True))
        norms[norms == 0] = 1.0
        X = X / norms
    return X, manifest


def _write_assignments(path: Path, manifest, assignments) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tile_id", "cluster"])
        for tile_id, cluster in zip(manifest.tile_ids, assignments):
            writer.writerow([tile_id, int(cluster)])


def _read_assignments(path: Path, manifest) -> np.ndarray:
    if not path.exists():
        raise HistokitError(f"assignments file not found: {path} (run `histokit cluster` first)")
    ids, clusters = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "tile_id" not in reader.fieldnames \
                or "cluster" not in reader.fieldnames:
            raise HistokitError(f"{path}: expected header tile_id,cluster")
        for row in reader:
            ids.append(row["tile_id"])
            clusters.append(int(row["cluster"]))
    if tuple(ids) != manifest.tile_ids:
        raise HistokitError(f"{path}: tile ids do not match the manifest order")
    return np.asarray(clusters, dtype=np.int64)


# -- commands -----------------------------------------------------------------


def cmd_cluster(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    X, manifest = _load_aligned(config)
    c = config.clustering
    model = fit_minibatch_kmeans(
        X, k=c.k, batch_size=c.batch_size, max_iters=c.max_iters, seed=c.seed
    )
    assignments = assign(model, X)
    doc = model.to_json_dict()
    doc["normalize"] = c.normalize
    (out / MODEL_FILE).write_text(json.dumps(doc), encoding="utf-8")
    _write_assignments(out / ASSIGNMENTS_FILE, manifest, assignments)
    tree = AnnotationTree.from_assignments(assignments, k=c.k, seed=c.seed)
    labels = manifest.labels
    if any(lab is not None for lab in labels):
        tree.recompute_purity(labels)
    tree.save(_tree_path(config, out))
    print(
        f"cluster: k={c.k} seed={c.seed} inertia={model.inertia:.6g} "
        f"iterations={model.iterations_run} -> {out}"
    )
    return 0


def cmd_purity(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    config.require("manifest")
    manifest = load_manifest(config.paths.manifest)
    labels = manifest.labels
    if not any(lab is not None for lab in labels):
        raise HistokitError("manifest carries no ground-truth labels; purity is undefined")

    if args.k_sweep:
        X, manifest = _load_aligned(config)
        c = config.clustering
        per_k = {}
        for k in args.k_sweep:
            model = fit_minibatch_kmeans(
                X, k=k, batch_size=c.batch_size, max_iters=c.max_iters, seed=c.seed
            )
            per_k[k] = assign(model, X)
        coverages = purity_coverage_sweep(per_k, labels, tau=args.tau)
        with open(out / "coverage_sweep.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "coverage", "tau", "seed"])
            for k in sorted(coverages):
                writer.writerow([k, _fmt(coverages[k]), _fmt(args.tau), c.seed])
        figures.save_coverage_sweep(coverages, args.tau, out / "coverage_sweep.png")
        for k in sorted(coverages):
            print(f"purity sweep: k={k} coverage={coverages[k]:.4f} (tau={args.tau:g})")
        return 0

    assignments = _read_assignments(out / ASSIGNMENTS_FILE, manifest)
    report = cluster_purity(assignments, labels, tau=args.tau)
    with open(out / "purity.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "size", "labeled", "majority_label", "purity"])
        for c in report.clusters:
            writer.writerow(
                [
                    c.cluster,
                    c.size,
                    c.labeled,
                    c.majority_label or "",
                    "" if c.purity is None else _fmt(c.purity),
                ]
            )
    summary = {
        "tau": args.tau,
        "coverage": report.coverage,
        "n_tiles": report.n_tiles,
        "n_labeled": report.n_labeled,
        "clusters_without_labels": list(report.flagged_unlabeled_clusters),
    }
    (out / "purity_summary.json").write_text(json.dumps(summary), encoding="utf-8")
    figures.save_purity_bars(report, out / "purity.png")
    print(f"purity: coverage={report.coverage:.4f} at tau={args.tau:g} over {report.n_tiles} tiles")
    return 0


def cmd_annotate_export(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    config.require("manifest")
    manifest = load_manifest(config.paths.manifest)
    tree_path = _tree_path(config, out)
    if not tree_path.exists():
        raise HistokitError(f"annotation tree not found: {tree_path}")
    tree = AnnotationTree.load(tree_path)
    if tree.n_tiles != len(manifest):
        raise HistokitError(
            f"tree covers {tree.n_tiles} tiles but manifest has {len(manifest)}"
        )
    rows = tree.export_annotations()
    target = out / "annotations.csv"
    with open(target, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tile_id", "label", "node_id", "purity"])
        for tile_row, label, node_id, purity in rows:
            writer.writerow(
                [
                    manifest.tile_ids[tile_row],
                    label or "",
                    node_id,
                    "" if purity is None else _fmt(purity),
                ]
            )
    labeled = sum(1 for r in rows if r[1] is not None)
    print(f"annotate-export: {labeled}/{len(rows)} tiles labeled -> {target}")
    return 0


def cmd_fractions(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    config.require("manifest")
    manifest = load_manifest(config.paths.manifest)
    assignments = _read_assignments(out / ASSIGNMENTS_FILE, manifest)
    model_path = out / MODEL_FILE
    if args.k is not None:
        k = args.k
    elif model_path.exists():
        k = int(json.loads(model_path.read_text(encoding="utf-8"))["k"])
    else:
        k = int(assignments.max()) + 1
    result = cohort.cluster_fractions(assignments, manifest, k=k)
    target = out / "fractions.csv"
    with open(target, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id"] + [f"frac_{j}" for j in range(k)] + ["tile_count"])
        for i, pid in enumerate(result.patient_ids):
            writer.writerow(
                [pid] + [_fmt(v) for v in result.fractions[i]] + [int(result.tile_counts[i])]
            )
    print(f"fractions: {len(result.patient_ids)} patients x {k} clusters -> {target}")
    return 0


def _read_fractions(path: Path) -> cohort.ClusterFractions:
    if not path.exists():
        raise HistokitError(f"fractions file not found: {path} (run `histokit fractions` first)")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        frac_cols = [c for c in names if c.startswith("frac_")]
        if "patient_id" not in names or not frac_cols or "tile_count" not in names:
            raise HistokitError(f"{path}: expected header patient_id,frac_*,tile_count")
        frac_cols.sort(key=lambda c: int(c.split("_", 1)[1]))
        ids, rows, counts = [], [], []
        for row in reader:
            ids.append(row["patient_id"])
            rows.append([float(row[c]) for c in frac_cols])
            counts.append(int(row["tile_count"]))
    return cohort.ClusterFractions(
        patient_ids=tuple(ids),
        fractions=np.asarray(rows),
        tile_counts=np.asarray(counts),
        k=len(frac_cols),
    )


def cmd_knn_eval(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    train_emb = load_embeddings(args.train_embeddings)
    train_manifest = load_manifest(args.train_manifest)
    align(train_emb, train_manifest)
    eval_emb = load_embeddings(args.eval_embeddings)
    eval_manifest = load_manifest(args.eval_manifest)
    align(eval_emb, eval_manifest)

    def binarize(embeddings, manifest):
        keep, labels = [], []
        for i, record in enumerate(manifest.records):
            if record.label is None:
                continue
            keep.append(i)
            labels.append(1 if record.label == args.positive_label else 0)
        if not keep:
            raise HistokitError("no labeled tiles to evaluate")
        return embeddings.values[keep].astype(np.float64), np.asarray(labels)

    ref_X, ref_y = binarize(train_emb, train_manifest)
    query_X, query_y = binarize(eval_emb, eval_manifest)
    builder = knn.subsampling_index_builder(
        ref_X, ref_y, fraction=args.subsample, metric=args.metric
    )
    summary = knn.repeated_eval(
        builder, query_X, query_y, k=args.k, runs=args.runs, seed=args.seed
    )
    doc = summary.to_json_dict()
    doc.update(
        {
            "metric": args.metric,
            "subsample": args.subsample,
            "seed": args.seed,
            "positive_label": args.positive_label,
            "n_reference": int(len(ref_y)),
            "n_queries": int(len(query_y)),
        }
    )
    payload = json.dumps(doc)
    (out / "knn_eval.json").write_text(payload, encoding="utf-8")
    print(payload)
    return 0


def _coefficient_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variable", "coefficient", "exp_coefficient", "se_coefficient",
             "ci_lower_95", "ci_upper_95", "p"]
        )
        for r in rows:
            writer.writerow(
                [r["variable"]] + [_fmt(r[k]) for k in
                                   ("coefficient", "exp_coefficient", "se_coefficient",
                                    "ci_lower_95", "ci_upper_95", "p")]
            )


def _model_curve_csvs(out: Path, name: str, report, metrics) -> None:
    summary = metrics.summary()
    with open(out / f"td_auc_{name}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "auc"])
        for t, v in zip(report.td_times, summary["td_auc_mean"]):
            writer.writerow([_fmt(t), "" if np.isnan(v) else _fmt(v)])
    with open(out / f"net_benefit_{name}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "nb_model", "nb_all", "nb_none"])
        for p, nb, nba in zip(report.nb_thresholds, summary["net_benefit_mean"],
                              report.nb_treat_all):
            writer.writerow([_fmt(p), _fmt(nb), _fmt(nba), _fmt(0.0)])


def cmd_survival(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    config.require("clinical")
    clinical = load_clinical(config.paths.clinical)
    s = config.survival
    include_fractions = not args.no_fractions
    covariate_set = s.covariates

    fractions = None
    selected = None
    selection_doc = None
    if include_fractions:
        fractions = _read_fractions(out / "fractions.csv")
        fits = cohort.cluster_importance_fits(
            fractions,
            clinical,
            n_fits=s.importance_fits,
            test_fraction=s.test_fraction,
            seed=s.seed,
            penalizer=s.penalizer,
            l1_ratio=s.l1_ratio,
        )
        selection = cohort.select_clusters(fits.coefficients, m=s.n_selected)
        selected = selection.clusters
        selection_doc = {
            "selected_clusters": list(selected),
            "importance_scores": [float(v) for v in selection.scores],
            "degenerate": selection.degenerate,
            "importance_fits": int(fits.coefficients.shape[0]),
            "importance_fits_failed": fits.n_failed,
        }

    baseline = cohort.build_design_matrix(
        clinical, fractions, selected, covariate_set, include_fractions=False
    )
    augmented = None
    if include_fractions:
        augmented = cohort.build_design_matrix(
            clinical, fractions, selected, covariate_set, include_fractions=True
        )

    spec = cohort.SplitSpec(test_fraction=s.test_fraction, n_splits=s.n_splits, seed=s.seed)
    splits = cohort.stratified_splits(baseline.events, spec)
    if args.export_splits:
        with open(out / "splits.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["split", "patient_id", "role", "seed"])
            for i, (train_idx, test_idx) in enumerate(splits):
                for idx in train_idx:
                    writer.writerow([i, baseline.patient_ids[idx], "train", s.seed])
                for idx in test_idx:
                    writer.writerow([i, baseline.patient_ids[idx], "test", s.seed])
    report = survival.head_to_head(
        baseline,
        augmented,
        splits,
        penalizer=s.penalizer,
        l1_ratio=s.l1_ratio,
        horizon=s.horizon_years,
    )

    doc = report.to_json_dict()
    doc.update(
        {
            "covariate_set": covariate_set,
            "penalizer": s.penalizer,
            "l1_ratio": s.l1_ratio,
            "test_fraction": s.test_fraction,
            "seed": s.seed,
            "patients": len(baseline.patient_ids),
            "events": int(baseline.events.sum()),
            "excluded_missing_covariates": list(baseline.excluded_missing),
            "clinical_only_patients": list(baseline.clinical_only),
            "imaging_only_patients": list(baseline.imaging_only),
        }
    )
    if selection_doc:
        doc.update(selection_doc)
    if report.win_fraction is not None:
        doc["win_fraction"] = report.win_fraction
    (out / "survival_report.json").write_text(json.dumps(doc), encoding="utf-8")

    with open(out / "concordance_splits.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if augmented is not None:
            writer.writerow(["split", "concordance_baseline", "concordance_augmented"])
            for i, (b, a) in enumerate(
                zip(report.baseline.concordance, report.augmented.concordance)
            ):
                writer.writerow([i, _fmt(b), _fmt(a)])
        else:
            writer.writerow(["split", "concordance_baseline"])
            for i, b in enumerate(report.baseline.concordance):
                writer.writerow([i, _fmt(b)])

    _model_curve_csvs(out, "baseline", report, report.baseline)
    base_fit = survival.fit_coxph(baseline, penalizer=s.penalizer, l1_ratio=s.l1_ratio)
    _coefficient_csv(
        out / "coefficients_baseline.csv",
        survival.coefficient_table(
            base_fit, baseline.matrix, baseline.durations, baseline.events
        ),
    )

    td_curves = {"baseline": report.baseline.summary()["td_auc_mean"]}
    nb_curves = {
        "baseline": report.baseline.summary()["net_benefit_mean"],
        "treat all": report.nb_treat_all,
        "treat none": report.nb_treat_none,
    }
    if augmented is not None:
        _model_curve_csvs(out, "augmented", report, report.augmented)
        idx = np.arange(len(augmented.patient_ids))
        Xa, _ = survival.standardized_fraction_columns(augmented, idx, idx)
        aug_fit = survival.fit_coxph(
            Xa, augmented.durations, augmented.events,
            penalizer=s.penalizer, l1_ratio=s.l1_ratio,
            column_names=augmented.column_names,
        )
        _coefficient_csv(
            out / "coefficients_augmented.csv",
            survival.coefficient_table(aug_fit, Xa, augmented.durations, augmented.events),
        )
        td_curves["augmented"] = report.augmented.summary()["td_auc_mean"]
        nb_curves = {
            "baseline": nb_curves["baseline"],
            "augmented": report.augmented.summary()["net_benefit_mean"],
            "treat all": report.nb_treat_all,
            "treat none": report.nb_treat_none,
        }
        figures.save_head_to_head(
            report.baseline.concordance,
            report.augmented.concordance,
            report.win_fraction,
            out / "head_to_head.png",
        )

    figures.save_td_auc(report.td_times, td_curves, out / "td_auc.png")
    figures.save_net_benefit(
        report.nb_thresholds, nb_curves, s.horizon_years, out / "net_benefit.png"
    )
    km = survival.kaplan_meier(baseline.durations, baseline.events)
    figures.save_km_curves(
        {"cohort": (km.times, km.survival)}, out / "kaplan_meier.png", horizon=s.horizon_years
    )

    if report.win_fraction is not None:
        print(
            f"survival: win_fraction={report.win_fraction:.3f} over "
            f"{report.n_splits_total - report.n_splits_excluded} splits "
            f"({report.n_splits_excluded} excluded) -> {out}"
        )
    else:
        print(
            f"survival: baseline concordance "
            f"{report.baseline.summary()['concordance_mean']:.3f} -> {out}"
        )
    return 0


def cmd_serve(args) -> int:
    from .server import ReviewApp, serve_forever

    config = _load_config(args)
    out = _out_dir(config)
    config.require("manifest")
    manifest = load_manifest(config.paths.manifest)
    tree_path = _tree_path(config, out)
    if not tree_path.exists():
        raise HistokitError(f"annotation tree not found: {tree_path} (run `histokit cluster`)")
    tree = AnnotationTree.load(tree_path)
    embeddings = None
    if config.paths.embeddings:
        X, manifest = _load_aligned(config)
        embeddings = X
    app = ReviewApp(
        tree=tree,
        tree_path=tree_path,
        manifest=manifest,
        embeddings=embeddings,
        tile_root=config.serve.tile_root,
        ui_root=config.serve.ui_root or None,
        sample_size=config.serve.sample_size,
        labels=config.serve.label_vocabulary(),
    )
    serve_forever(app, config.serve.host, config.serve.port)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histokit",
        description="Cluster-based annotation of tile embeddings and multimodal survival models.",
    )
    parser.add_argument("--version", action="version", version=f"histokit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="project config (INI); flags override it")
        p.add_argument("--embeddings", help="embedding matrix (.emb1 or .csv)")
        p.add_argument("--manifest", help="tile manifest CSV")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("cluster", help="fit mini-batch k-means and write assignments + tree")
    common(p)
    p.add_argument("--k", type=_positive_int, help="number of clusters (default 32)")
    p.add_argument("--batch-size", dest="batch_size", type=_positive_int)
    p.add_argument("--max-iters", dest="max_iters", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", action="store_const", const=True, default=None,
                   help="L2-normalize rows before clustering")
    p.add_argument("--tree", help="annotation tree output path")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("purity", help="per-cluster label purity and coverage")
    common(p)
    p.add_argument("--tau", type=float, default=0.9, help="purity threshold (default 0.9)")
    p.add_argument("--k", dest="k_sweep", type=_k_list, metavar="K[,K...]",
                   help="refit per k and report coverage per k (sweep); "
                        "without it, existing assignments are scored")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_purity)

    p = sub.add_parser("annotate-export", help="export per-tile labels from the annotation tree")
    common(p)
    p.add_argument("--tree", help="annotation tree path")
    p.set_defaults(func=cmd_annotate_export)

    p = sub.add_parser("fractions", help="per-patient cluster fractions")
    common(p)
    p.add_argument("--k", type=_positive_int, help="cluster count (default: from model.json)")
    p.set_defaults(func=cmd_fractions)

    p = sub.add_parser("knn-eval", help="KNN classifier evaluation with repeated AUROC")
    p.add_argument("-c", "--config", help="project config (INI)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--train-embeddings", required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--eval-embeddings", required=True)
    p.add_argument("--eval-manifest", required=True)
    p.add_argument("--positive-label", default="cancer")
    p.add_argument("--k", type=_positive_int, default=20)
    p.add_argument("--runs", type=_positive_int, default=5)
    p.add_argument("--subsample", type=float, default=0.8)
    p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_knn_eval)

    p = sub.add_parser("survival", help="cluster selection, head-to-head Cox evaluation, reports")
    common(p)
    p.add_argument("--clinical", help="clinical CSV")
    p.add_argument("--covariates", choices=list(cohort.COVARIATE_SETS),
                   help="baseline covariate set (default capra_s)")
    p.add_argument("--no-fractions", action="store_true",
                   help="baseline model only, no cluster-fraction columns")
    p.add_argument("--penalizer", type=float)
    p.add_argument("--l1-ratio", dest="l1_ratio", type=float)
    p.add_argument("--horizon", type=float, help="net-benefit horizon in years (default 15)")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--splits", type=_positive_int, help="number of stratified splits")
    p.add_argument("--n-selected", dest="n_selected", type=_positive_int)
    p.add_argument("--importance-fits", dest="importance_fits", type=_positive_int)
    p.add_argument("--seed", dest="survival_seed", type=int)
    p.add_argument("--export-splits", dest="export_splits", action="store_true",
                   help="write splits.csv listing every train/test assignment for audit")
    p.set_defaults(func=cmd_survival)

    p = sub.add_parser("serve", help="run the annotation review HTTP service")
    common(p)
    p.add_argument("--clinical", help="clinical CSV (unused by serve; accepted for config parity)")
    p.add_argument("--tree", help="annotation tree path")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--tile-root", dest="tile_root")
    p.add_argument("--ui-root", dest="ui_root")
    p.add_argument("--labels", help="comma-separated label vocabulary for the review UI")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HistokitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
