"""Shared test oracles: deliberately plain, loop-based implementations."""

import numpy as np


def make_blobs(n_per, centers, scale=1.0, seed=0):
    """Isotropic Gaussian blobs around the given centers."""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    xs, labels = [], []
    for i, c in enumerate(centers):
        xs.append(rng.normal(loc=c, scale=scale, size=(n_per, centers.shape[1])))
        labels.extend([i] * n_per)
    X = np.vstack(xs)
    labels = np.asarray(labels)
    perm = rng.permutation(len(labels))
    return X[perm], labels[perm]


def _comb2(x):
    return x * (x - 1) / 2.0


def adjusted_rand_index(a, b):
    """Pair-counting ARI from the contingency table."""
    a = np.asarray(a)
    b = np.asarray(b)
    av = np.unique(a)
    bv = np.unique(b)
    table = np.zeros((len(av), len(bv)))
    for i, x in enumerate(av):
        for j, y in enumerate(bv):
            table[i, j] = np.sum((a == x) & (b == y))
    sum_cells = _comb2(table).sum()
    sum_rows = _comb2(table.sum(axis=1)).sum()
    sum_cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(len(a))
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


def nearest_centroid_bruteforce(X, centroids):
    """Exhaustive nearest-centroid scan; ties to the lowest centroid index."""
    out = np.empty(len(X), dtype=np.int64)
    for i, x in enumerate(X):
        best, best_d = 0, None
        for j, c in enumerate(centroids):
            d = float(((x - c) ** 2).sum())
            if best_d is None or d < best_d:
                best, best_d = j, d
        out[i] = best
    return out


def zscore(v):
    v = np.asarray(v, dtype=float)
    s = v.std()
    return (v - v.mean()) / s if s else v * 0.0


def make_patient_cohort(
    n=200,
    k=8,
    seed=3,
    signal_beta=1.3,
    covariate_beta=0.6,
    base_rate=0.03,
    follow_up=25.0,
):
    """Patient-level cohort: Dirichlet cluster fractions where fraction 0 drives
    an exponential hazard alongside a capra-like clinical covariate."""
    rng = np.random.default_rng(seed)
    fractions = rng.dirichlet(np.ones(k), size=n)
    capra = np.clip(rng.normal(5.0, 2.0, size=n), 0.0, 12.0)
    lp = signal_beta * zscore(fractions[:, 0]) + covariate_beta * zscore(capra)
    rate = base_rate * np.exp(lp)
    raw_t = rng.exponential(1.0 / rate)
    durations = np.minimum(raw_t, follow_up)
    events = (raw_t <= follow_up).astype(int)
    durations = np.maximum(durations, 1e-6)
    return fractions, capra, durations, events


def make_tile_cohort(
    n_patients=200,
    tiles_per_patient=50,
    dim=16,
    n_blobs=4,
    seed=7,
    signal_beta=1.5,
    covariate_beta=0.6,
    base_rate=0.03,
    follow_up=25.0,
):
    """Tile-level cohort with embeddings: blob 0's per-patient tile fraction
    carries the hazard signal. Returns (X, manifest_rows, clinical_rows, blob_of_tile)."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 6.0, size=(n_blobs, dim))
    mix = rng.dirichlet(np.ones(n_blobs), size=n_patients)
    X_rows, manifest_rows, blob_of_tile = [], [], []
    frac0 = np.zeros(n_patients)
    tile_no = 0
    for p in range(n_patients):
        pid = f"p{p:03d}"
        counts = rng.multinomial(tiles_per_patient, mix[p])
        frac0[p] = counts[0] / tiles_per_patient
        for b in range(n_blobs):
            for _ in range(counts[b]):
                X_rows.append(centers[b] + rng.normal(size=dim))
                manifest_rows.append((f"t{tile_no:06d}", f"s{p:03d}", pid))
                blob_of_tile.append(b)
                tile_no += 1
    X = np.asarray(X_rows, dtype=np.float32)
    capra = np.clip(rng.normal(5.0, 2.0, size=n_patients), 0.0, 12.0)
    lp = signal_beta * zscore(frac0) + covariate_beta * zscore(capra)
    rate = base_rate * np.exp(lp)
    raw_t = rng.exponential(1.0 / rate)
    durations = np.maximum(np.minimum(raw_t, follow_up), 1e-6)
    events = (raw_t <= follow_up).astype(int)
    clinical_rows = [
        (f"p{p:03d}", float(durations[p]), int(events[p]), float(capra[p]))
        for p in range(n_patients)
    ]
    return X, manifest_rows, clinical_rows, np.asarray(blob_of_tile)


def lloyd(X, init, max_iters=300):
    """Full-batch Lloyd iterations from a given initialization."""
    centroids = np.array(init, dtype=float, copy=True)
    prev = None
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        a = d2.argmin(axis=1)
        if prev is not None and np.array_equal(a, prev):
            break
        for j in range(len(centroids)):
            members = X[a == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        prev = a
    return centroids, a
