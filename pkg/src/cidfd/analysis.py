"""Similarity diagnostics and 2-D projections of learned representations."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# (same background?, same target?) for the four pair types, in display order
PAIR_TYPES = {
    "same_bg_diff_tg": (True, False),
    "diff_bg_same_tg": (False, True),
    "same_bg_same_tg": (True, True),
    "diff_bg_diff_tg": (False, False),
}


@dataclass
class PairTypeStats:
    """Per-instance mean cosine similarity to partners of each pair type.

    ``means[t]`` has one entry per instance, NaN where the instance has no
    partner of type ``t``; ``counts[t]`` holds the partner counts.
    """

    means: dict
    counts: dict
    bin_edges: np.ndarray
    histograms: dict = field(default_factory=dict)

    def valid(self, pair_type) -> np.ndarray:
        m = self.means[pair_type]
        return m[~np.isnan(m)]

    def summary(self) -> dict:
        return {t: {"mean": float(self.valid(t).mean()) if self.valid(t).size else None,
                    "instances": int(self.valid(t).size)} for t in PAIR_TYPES}


def _unit_rows(features):
    x = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("zero feature vector has no cosine similarity")
    return x / norms


def pair_similarity_stats(features, target_labels, background_labels, bins: int = 50,
                          block_size: int = 1024) -> PairTypeStats:
    """Average similarity of each instance to the others, split by pair type.

    Self-pairs are excluded. Similarities are accumulated in row blocks of
    ``block_size`` so memory stays O(block_size * N).
    """
    if target_labels is None or background_labels is None:
        raise ValueError("pair-type statistics need both target and background labels")
    x = _unit_rows(features)
    t = np.asarray(target_labels)
    b = np.asarray(background_labels)
    n = len(x)
    if len(t) != n or len(b) != n:
        raise ValueError("label vectors must match the number of feature rows")

    sums = {k: np.zeros(n) for k in PAIR_TYPES}
    counts = {k: np.zeros(n, dtype=np.int64) for k in PAIR_TYPES}
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        sim = x[start:stop] @ x.T
        same_t = t[start:stop, None] == t[None, :]
        same_b = b[start:stop, None] == b[None, :]
        not_self = np.ones_like(same_t)
        not_self[np.arange(stop - start), np.arange(start, stop)] = False
        for name, (want_b, want_t) in PAIR_TYPES.items():
            mask = (same_b == want_b) & (same_t == want_t) & not_self
            sums[name][start:stop] = np.where(mask, sim, 0.0).sum(1)
            counts[name][start:stop] = mask.sum(1)

    means = {}
    for name in PAIR_TYPES:
        with np.errstate(invalid="ignore", divide="ignore"):
            means[name] = np.where(counts[name] > 0, sums[name] / counts[name], np.nan)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    stats = PairTypeStats(means, counts, edges)
    for name in PAIR_TYPES:
        stats.histograms[name] = np.histogram(np.clip(stats.valid(name), -1, 1), bins=edges)[0]
    return stats


def similarity_gap(stats: PairTypeStats) -> float:
    """Mean (different background, same target) minus mean (same background, different target)."""
    return float(stats.valid("diff_bg_same_tg").mean() - stats.valid("same_bg_diff_tg").mean())


def _pca(x, seed):
    centered = x - x.mean(0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, np.abs(x).max()):
        raise ValueError("cannot project rank-0 data (all rows identical)")
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    # fix the sign of each axis so the output is reproducible
    signs = np.sign(comps[np.arange(2), np.abs(comps).argmax(1)])
    signs[signs == 0] = 1
    return centered @ (comps * signs[:, None]).T


PROJECTIONS = {"pca": _pca}


def project_2d(features, method: str = "pca", seed: int = 0) -> np.ndarray:
    """N x 2 embedding for scatter plots.

    ``method`` names an entry of ``PROJECTIONS``; register a callable
    ``fn(x, seed) -> (N, 2)`` there to plug in UMAP or similar.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("need at least two feature rows")
    if method not in PROJECTIONS:
        raise ValueError(f"unknown projection {method!r}; known: {sorted(PROJECTIONS)}")
    return PROJECTIONS[method](x, seed)


def _label(arr, i):
    return "" if arr is None else int(arr[i])


def export_projection(points, path, target_labels=None, background_labels=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "target_label", "background_label"])
        for i, (px, py) in enumerate(np.asarray(points).reshape(-1, 2)):
            w.writerow([repr(float(px)), repr(float(py)), _label(target_labels, i),
                        _label(background_labels, i)])
    return path


def export_histograms(stats: PairTypeStats | None, path) -> Path:
    """Histogram CSV plus a ``.bins.json`` sidecar with the bin edges and per-type summaries."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_type", "bin_left", "bin_right", "count"])
        if stats is not None:
            for name in PAIR_TYPES:
                edges = stats.bin_edges
                for left, right, c in zip(edges[:-1], edges[1:], stats.histograms[name]):
                    w.writerow([name, repr(float(left)), repr(float(right)), int(c)])
    sidecar = {"bin_edges": [] if stats is None else stats.bin_edges.tolist(),
               "pair_types": list(PAIR_TYPES),
               "summary": {} if stats is None else stats.summary()}
    path.with_suffix(".bins.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def export_plot_data(data, path, target_labels=None, background_labels=None) -> Path:
    """Dispatch on the payload: PairTypeStats (or None) -> histogram CSV, array -> projection CSV."""
    if data is None or isinstance(data, PairTypeStats):
        return export_histograms(data, path)
    return export_projection(data, path, target_labels, background_labels)
