"""k-means on representations and the ACC / NMI / ARI clustering scores."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list

    @property
    def k(self) -> int:
        return len(self.centroids)


def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding."""
    n = len(x)
    centroids = [x[rng.integers(n)]]
    closest = _sq_dists(x, centroids[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        # all remaining points coincide with a centroid: fall back to uniform
        i = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centroids.append(x[i])
        closest = np.minimum(closest, _sq_dists(x, x[i][None])[:, 0])
    return np.array(centroids)


def _lloyd(x, centroids, max_iter):
    labels = None
    history = []
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        new_labels = d.argmin(1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = centroids.copy()
        point_cost = d[np.arange(len(x)), labels]
        for j in range(len(centroids)):
            members = labels == j
            if members.any():
                centroids[j] = x[members].mean(0)
            else:
                # re-seed at the point farthest from its own centroid
                far = int(point_cost.argmax())
                centroids[j] = x[far]
                point_cost[far] = 0.0
        history.append(float(_sq_dists(x, centroids)[np.arange(len(x)), labels].sum()))
    inertia = float(_sq_dists(x, centroids)[np.arange(len(x)), labels].sum())
    return labels, centroids, inertia, it, history


def kmeans(features, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; the lowest-inertia restart wins."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be an (N, d) matrix")
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the number of points {len(x)}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    best = None
    for r_seed in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(r_seed)
        labels, centroids, inertia, n_iter, history = _lloyd(x, kmeans_plusplus(x, k, rng), max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centroids, inertia, n_iter, history)
    return best


# -- metrics ---------------------------------------------------------------

def _check(truth, pred):
    truth = np.asarray(truth).ravel()
    pred = np.asarray(pred).ravel()
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.size} vs {pred.size}")
    if truth.size == 0:
        raise ValueError("empty partitions")
    return truth, pred


def contingency(truth, pred) -> np.ndarray:
    """Counts table, rows = true classes, columns = predicted clusters (sorted label order)."""
    truth, pred = _check(truth, pred)
    _, t = np.unique(truth, return_inverse=True)
    _, p = np.unique(pred, return_inverse=True)
    table = np.zeros((t.max() + 1, p.max() + 1), dtype=np.int64)
    np.add.at(table, (t, p), 1)
    return table


def accuracy(truth, pred) -> float:
    """Fraction correct under the best one-to-one cluster-to-class mapping."""
    table = contingency(truth, pred)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return table[rows, cols].sum() / table.sum()


def cluster_mapping(truth, pred) -> dict:
    """Optimal cluster -> class mapping used by :func:`accuracy`."""
    truth, pred = _check(truth, pred)
    classes, clusters = np.unique(truth), np.unique(pred)
    rows, cols = linear_sum_assignment(contingency(truth, pred), maximize=True)
    return {clusters[c].item(): classes[r].item() for r, c in zip(rows, cols)}


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(truth, pred) -> float:
    """Mutual information over the arithmetic mean of the two entropies.

    Two single-cluster partitions score 1; otherwise a zero entropy on
    either side scores 0.
    """
    table = contingency(truth, pred).astype(np.float64)
    h_t, h_p = _entropy(table.sum(1)), _entropy(table.sum(0))
    if h_t == 0 and h_p == 0:
        return 1.0
    if h_t == 0 or h_p == 0:
        return 0.0
    n = table.sum()
    nz = table > 0
    outer = np.outer(table.sum(1), table.sum(0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return float(np.clip(mi / ((h_t + h_p) / 2), 0.0, 1.0))


def _comb2(x):
    return x * (x - 1) / 2


def ari(truth, pred) -> float:
    """Adjusted Rand index (permutation model). Degenerate equal-trivial cases score 1."""
    table = contingency(truth, pred).astype(np.float64)
    n = table.sum()
    index = _comb2(table).sum()
    a = _comb2(table.sum(1)).sum()
    b = _comb2(table.sum(0)).sum()
    expected = a * b / _comb2(n) if n > 1 else 0.0
    max_index = (a + b) / 2
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def evaluate(features, truth, k: int | None = None, seed: int = 0, restarts: int = 10) -> dict:
    """k-means on ``features`` scored against ``truth``; k defaults to the class count."""
    truth = np.asarray(truth)
    k = k or len(np.unique(truth))
    result = kmeans(features, k, seed, restarts)
    return {"acc": float(accuracy(truth, result.labels)), "nmi": nmi(truth, result.labels),
            "ari": ari(truth, result.labels), "k": k, "seed": seed, "restarts": restarts,
            "inertia": result.inertia}
