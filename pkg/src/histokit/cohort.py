"""Patient-level aggregation: cluster fractions, design matrices and stratified splits.

Patients are always ordered by sorted patient_id; joining never imputes, it
excludes with an explicit report. Fraction columns carry their own names so
the survival fitters can z-score them with train-split statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datastore import ClinicalTable, TileManifest
from .errors import CohortError
from .survival import ConvergenceError, fit_coxph

GLEASON_COLUMNS = ("gg1", "gg2", "gg3", "gg4", "gg5")
COVARIATE_SETS = ("gleason", "capra_s", "mskcc_s")
DEFAULT_TEST_FRACTION = 0.25
DEFAULT_N_SPLITS = 1000
DEFAULT_SELECTED = 6
DEFAULT_IMPORTANCE_FITS = 50


@dataclass(frozen=True)
class ClusterFractions:
    """Per-patient proportions of tiles over k clusters; rows sorted by patient_id."""

    patient_ids: tuple[str, ...]
    fractions: np.ndarray  # (n_patients, k)
    tile_counts: np.ndarray  # (n_patients,)
    k: int

    def row(self, patient_id: str) -> np.ndarray:
        return self.fractions[self.patient_ids.index(patient_id)]


def cluster_fractions(assignments, manifest: TileManifest, k: int) -> ClusterFractions:
    """Count each patient's tiles per cluster and normalize to fractions."""
    assignments = np.asarray(assignments, dtype=np.int64)
    if len(assignments) != len(manifest):
        raise CohortError(
            f"{len(assignments)} assignments vs {len(manifest)} manifest rows"
        )
    if assignments.size and (assignments.max() >= k or assignments.min() < 0):
        raise CohortError(f"assignment outside [0, {k})")
    patients = sorted(set(manifest.patient_ids))
    index = {p: i for i, p in enumerate(patients)}
    counts = np.zeros((len(patients), k), dtype=np.int64)
    for a, pid in zip(assignments, manifest.patient_ids):
        counts[index[pid], a] += 1
    totals = counts.sum(axis=1)
    fractions = counts / totals[:, None]
    return ClusterFractions(
        patient_ids=tuple(patients),
        fractions=fractions,
        tile_counts=totals,
        k=k,
    )


@dataclass(frozen=True)
class SelectionResult:
    clusters: tuple[int, ...]  # ranked by importance, best first
    scores: np.ndarray  # mean |coefficient| per cluster over the resampled fits
    degenerate: bool  # all scores zero; fell back to lowest indices


def select_clusters(coefficients, m: int = DEFAULT_SELECTED) -> SelectionResult:
    """Pick the m clusters with highest mean absolute coefficient over resampled fits.

    ``coefficients`` is an (n_fits, k) array of elastic-net Cox coefficients
    for the k (standardized) fraction columns. Ties resolve to lower indices.
    """
    coefficients = np.atleast_2d(np.asarray(coefficients, dtype=np.float64))
    k = coefficients.shape[1]
    if m > k:
        raise CohortError(f"cannot select m={m} of k={k} clusters")
    scores = np.abs(coefficients).mean(axis=0)
    degenerate = bool(np.all(scores == 0))
    order = np.argsort(-scores, kind="stable")
    return SelectionResult(
        clusters=tuple(int(i) for i in order[:m]),
        scores=scores,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = DEFAULT_TEST_FRACTION
    n_splits: int = DEFAULT_N_SPLITS
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise CohortError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.n_splits < 1:
            raise CohortError(f"n_splits must be >= 1, got {self.n_splits}")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_splits(events, spec: SplitSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Event-stratified train/test index splits, deterministic per (seed, split index).

    Each test set holds round(test_fraction * n) subjects with an event count
    of round(n_test * event_rate), keeping the test event proportion within
    one subject of the cohort's.
    """
    events = np.asarray(events, dtype=np.int64)
    n = len(events)
    ev_idx = np.where(events == 1)[0]
    ne_idx = np.where(events == 0)[0]
    if len(ev_idx) < 2 or len(ne_idx) < 2:
        raise CohortError("need at least 2 events and 2 non-events to stratify")
    n_test = _round_half_up(spec.test_fraction * n)
    e_test = _round_half_up(n_test * len(ev_idx) / n)
    ne_test = n_test - e_test
    if e_test < 1 or e_test >= len(ev_idx) or ne_test < 1 or ne_test >= len(ne_idx):
        raise CohortError(
            f"too few events to stratify: {len(ev_idx)} events / {len(ne_idx)} non-events "
            f"with test_fraction {spec.test_fraction}"
        )
    splits = []
    for i in range(spec.n_splits):
        rng = np.random.default_rng([spec.seed, i])
        test = np.sort(
            np.concatenate(
                [
                    rng.choice(ev_idx, size=e_test, replace=False),
                    rng.choice(ne_idx, size=ne_test, replace=False),
                ]
            )
        )
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        splits.append((np.where(mask)[0], test))
    return splits


@dataclass(frozen=True)
class DesignMatrix:
    """Covariate block (plus optional fraction block), aligned with durations/events.

    ``excluded_missing`` lists patients dropped for missing covariate values;
    ``clinical_only``/``imaging_only`` report the join mismatches. Nothing is
    imputed.
    """

    patient_ids: tuple[str, ...]
    column_names: tuple[str, ...]
    matrix: np.ndarray
    durations: np.ndarray
    events: np.ndarray
    fraction_cols: tuple[str, ...] = ()
    excluded_missing: tuple[str, ...] = ()
    clinical_only: tuple[str, ...] = ()
    imaging_only: tuple[str, ...] = ()

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)


def _gleason_one_hot(record, patient_id: str) -> list[float] | None:
    values = []
    for col in GLEASON_COLUMNS:
        v = record.covariates.get(col)
        if v is None:
            return None
        values.append(float(v))
    if sorted(values) != [0.0, 0.0, 0.0, 0.0, 1.0]:
        return None  # malformed one-hot treated as missing, reported upstream
    return values[1:]  # GG1 is the reference level


def build_design_matrix(
    clinical: ClinicalTable,
    fractions: ClusterFractions | None,
    selected: Sequence[int] | None,
    covariate_set: str,
    include_fractions: bool,
) -> DesignMatrix:
    """Assemble the survival design for one covariate set, optionally with fractions.

    Gleason grade is encoded one-hot with GG1 as the reference (columns
    GG2..GG5); capra_s / mskcc_s use the single clinical column. Patients are
    ordered by sorted patient_id.
    """
    if covariate_set not in COVARIATE_SETS:
        raise CohortError(f"unknown covariate set {covariate_set!r}, expected {COVARIATE_SETS}")
    if include_fractions and fractions is None:
        raise CohortError("include_fractions requires cluster fractions")
    if include_fractions and selected is None:
        raise CohortError("include_fractions requires a cluster selection")

    clinical_ids = set(clinical.patient_ids)
    if fractions is not None:
        imaging_ids = set(fractions.patient_ids)
        shared = sorted(clinical_ids & imaging_ids)
        clinical_only = tuple(sorted(clinical_ids - imaging_ids))
        imaging_only = tuple(sorted(imaging_ids - clinical_ids))
    else:
        shared = sorted(clinical_ids)
        clinical_only = ()
        imaging_only = ()
    if not shared:
        raise CohortError("no patients shared between clinical table and imaging data")

    if covariate_set == "gleason":
        clin_names = ("GG2", "GG3", "GG4", "GG5")
    elif covariate_set == "capra_s":
        clin_names = ("CAPRA-S",)
    else:
        clin_names = ("MSKCC-S",)
    frac_names: tuple[str, ...] = ()
    if include_fractions:
        frac_names = tuple(f"Cluster {int(c)}" for c in selected)

    rows, durations, events, kept, excluded = [], [], [], [], []
    for pid in shared:
        record = clinical.by_id(pid)
        if covariate_set == "gleason":
            clin_values = _gleason_one_hot(record, pid)
        else:
            key = covariate_set
            raw = record.covariates.get(key)
            clin_values = None if raw is None else [float(raw)]
        if clin_values is None:
            excluded.append(pid)
            continue
        values = list(clin_values)
        if include_fractions:
            frac_row = fractions.row(pid)
            values.extend(float(frac_row[int(c)]) for c in selected)
        rows.append(values)
        durations.append(record.duration_years)
        events.append(record.event)
        kept.append(pid)
    if not rows:
        raise CohortError(
            f"no patient has complete {covariate_set} covariates among the joined cohort"
        )
    return DesignMatrix(
        patient_ids=tuple(kept),
        column_names=clin_names + frac_names,
        matrix=np.asarray(rows, dtype=np.float64),
        durations=np.asarray(durations, dtype=np.float64),
        events=np.asarray(events, dtype=np.int64),
        fraction_cols=frac_names,
        excluded_missing=tuple(excluded),
        clinical_only=clinical_only,
        imaging_only=imaging_only,
    )


@dataclass(frozen=True)
class ImportanceFits:
    coefficients: np.ndarray  # (n_valid_fits, k)
    n_failed: int


def cluster_importance_fits(
    fractions: ClusterFractions,
    clinical: ClinicalTable,
    n_fits: int = DEFAULT_IMPORTANCE_FITS,
    test_fraction: float = DEFAULT_TEST_FRACTION,
    seed: int = 0,
    penalizer: float = 0.001,
    l1_ratio: float = 0.5,
) -> ImportanceFits:
    """Elastic-net Cox coefficients for all k fraction columns over resampled fits.

    Each fit uses the train side of a stratified split, with fraction columns
    z-scored by train statistics so coefficient magnitudes are comparable.
    Fits that fail to converge are dropped and counted.
    """
    shared = sorted(set(fractions.patient_ids) & set(clinical.patient_ids))
    if not shared:
        raise CohortError("no patients shared between fractions and clinical table")
    frac = np.asarray([fractions.row(p) for p in shared])
    durations = np.asarray([clinical.by_id(p).duration_years for p in shared])
    events = np.asarray([clinical.by_id(p).event for p in shared], dtype=np.int64)
    spec = SplitSpec(test_fraction=test_fraction, n_splits=n_fits, seed=seed)
    rows = []
    failed = 0
    for train_idx, _ in stratified_splits(events, spec):
        X = frac[train_idx].copy()
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        X = (X - mean) / std
        try:
            model = fit_coxph(
                X, durations[train_idx], events[train_idx],
                penalizer=penalizer, l1_ratio=l1_ratio,
            )
        except ConvergenceError:
            failed += 1
            continue
        rows.append(model.coefficients)
    if not rows:
        raise CohortError("every importance fit failed to converge")
    return ImportanceFits(coefficients=np.vstack(rows), n_failed=failed)
