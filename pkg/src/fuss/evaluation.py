"""Scoring for unsupervised segmentation: optimally matched mIoU, paired
significance tests over per-image scores, and centroid discriminability.

Predicted cluster ids carry no semantics, so IoU is computed after a single
optimal cluster-to-class matching over the pooled confusion matrix of the
whole evaluation set; the matching is then held fixed for per-image scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata
from scipy.stats import t as t_dist

from .clustering import CentroidMatrix
from .errors import DataError
from .tensors import SegmentationMask


def confusion(
    preds: list[SegmentationMask],
    truths: list[SegmentationMask],
) -> np.ndarray:
    """Count matrix: entry (i, j) is the number of pixels predicted i with truth j."""
    if len(preds) != len(truths) or not preds:
        raise DataError("prediction and truth sets must be nonempty and equal-length")
    n_pred = preds[0].num_classes
    n_truth = truths[0].num_classes
    counts = np.zeros((n_pred, n_truth), dtype=np.int64)
    for p, t in zip(preds, truths):
        if p.labels.shape != t.labels.shape:
            raise DataError(
                f"mask shapes differ: {p.labels.shape} vs {t.labels.shape}"
            )
        flat = n_truth * p.labels.ravel() + t.labels.ravel()
        counts += np.bincount(flat, minlength=n_pred * n_truth).reshape(n_pred, n_truth)
    return counts


def _optimal_total(matrix: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return float(matrix[rows, cols].sum())


def _lex_smallest_max_assignment(score: np.ndarray, tol: float = 1e-9) -> list[tuple[int, int]]:
    """Maximum-total assignment; among optima the lexicographically smallest
    (scanning rows in order, preferring the smallest column, preferring a
    match over no match) so results are fully deterministic."""
    n_rows, n_cols = score.shape
    best = _optimal_total(score)
    pairs: list[tuple[int, int]] = []
    free_cols = list(range(n_cols))
    fixed = 0.0
    for i in range(n_rows):
        if len(pairs) == min(n_rows, n_cols):
            break
        remaining_rows = list(range(i + 1, n_rows))
        chosen = None
        for j in free_cols:
            candidate_fixed = fixed + score[i, j]
            rest_cols = [c for c in free_cols if c != j]
            if remaining_rows and rest_cols:
                rest = score[np.ix_(remaining_rows, rest_cols)]
                candidate_total = candidate_fixed + _optimal_total(rest)
            else:
                candidate_total = candidate_fixed
            if math.isclose(candidate_total, best, rel_tol=0.0, abs_tol=tol):
                chosen = j
                break
        if chosen is None:
            # leaving this row unmatched must itself be optimal
            continue
        pairs.append((i, chosen))
        free_cols.remove(chosen)
        fixed += score[i, chosen]
    return pairs


def hungarian_match(counts: np.ndarray) -> list[tuple[int, int]]:
    """Optimal predicted-to-truth assignment maximizing matched pixels.

    Returns (pred, truth) pairs covering min(n_pred, n_truth) classes, with a
    deterministic lexicographic tie-break.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.size == 0:
        raise DataError(f"confusion matrix must be 2-d and nonempty, got {counts.shape}")
    if counts.min() < 0:
        raise DataError("confusion matrix must be nonnegative")
    return _lex_smallest_max_assignment(counts)


@dataclass
class IouReport:
    """Matched IoU over an evaluation set plus the per-image score series."""

    per_class: dict[int, float]
    miou: float
    per_image: list[float] = field(default_factory=list)
    matching: list[tuple[int, int]] = field(default_factory=list)


def _class_ious(
    counts: np.ndarray, matching: list[tuple[int, int]]
) -> dict[int, float]:
    pred_of = {t: p for p, t in matching}
    pred_sums = counts.sum(axis=1)
    truth_sums = counts.sum(axis=0)
    ious: dict[int, float] = {}
    for t in range(counts.shape[1]):
        p = pred_of.get(t)
        tp = counts[p, t] if p is not None else 0
        fp = pred_sums[p] - tp if p is not None else 0
        fn = truth_sums[t] - tp
        denom = tp + fp + fn
        if denom > 0:
            ious[t] = float(tp / denom)
    return ious


def _miou_matching(counts: np.ndarray) -> list[tuple[int, int]]:
    """Pixel-total-optimal matching, refined so that ties in matched pixels are
    broken by the larger per-class IoU sum.

    The refinement keeps the score invariant under relabeling of predicted
    cluster ids: tied matchings are ranked by confusion-matrix content before
    any index-based tie-break applies. Counts are integers, so scaling them by
    more than the maximal IoU-sum difference keeps the pixel total dominant.
    """
    counts = np.asarray(counts, dtype=np.float64)
    m = min(counts.shape)
    pred_sums = counts.sum(axis=1, keepdims=True)
    truth_sums = counts.sum(axis=0, keepdims=True)
    union = pred_sums + truth_sums - counts
    iou = np.divide(counts, union, out=np.zeros_like(counts), where=union > 0)
    return _lex_smallest_max_assignment(counts * (m + 1) + iou, tol=1e-9)


def miou(preds: list[SegmentationMask], truths: list[SegmentationMask]) -> IouReport:
    """Match clusters to classes once over the whole set, then score.

    Classes absent from both prediction and truth are dropped from the mean
    rather than counted as perfect. The per-image series reuses the global
    matching so paired tests across methods stay comparable.
    """
    counts = confusion(preds, truths)
    matching = _miou_matching(counts)
    per_class = _class_ious(counts, matching)
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    per_image = []
    for p, t in zip(preds, truths):
        img_counts = confusion([p], [t])
        img_ious = _class_ious(img_counts, matching)
        per_image.append(float(np.mean(list(img_ious.values()))) if img_ious else 0.0)
    return IouReport(per_class=per_class, miou=mean, per_image=per_image, matching=matching)


@dataclass
class PairedTestResult:
    statistic: float | None
    p_value: float | None
    sample_count: int
    degenerate: bool = False
    method: str = ""


def paired_ttest(a, b) -> PairedTestResult:
    """Two-sided paired t-test on per-image score series."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise DataError("need two equal-length 1-d series with n >= 2")
    diff = a - b
    sd = float(diff.std(ddof=1))
    n = diff.size
    if sd == 0.0:
        return PairedTestResult(None, None, n, degenerate=True, method="t")
    t_stat = float(diff.mean() / (sd / math.sqrt(n)))
    p = float(2.0 * t_dist.sf(abs(t_stat), df=n - 1))
    return PairedTestResult(t_stat, p, n, method="t")


def _wilcoxon_exact_p(doubled_ranks: np.ndarray, w_doubled: int) -> float:
    """Exact two-sided p via the sign-flip distribution of the positive rank sum.

    Works on ranks doubled to integers so midranks from ties stay exact. The
    count of sign patterns per achievable sum is built by convolution, which
    enumerates all 2^n patterns implicitly.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    denom = counts.sum()
    p_le = counts[: w_doubled + 1].sum() / denom
    p_ge = counts[w_doubled:].sum() / denom
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def wilcoxon_signed_rank(a, b, method: str = "auto", exact_limit: int = 20) -> PairedTestResult:
    """Wilcoxon signed-rank test on paired series, two-sided.

    Zero differences are discarded. Up to ``exact_limit`` effective pairs the
    p-value comes from the exact sign-flip distribution (ties handled through
    midranks); larger samples use the normal approximation with tie correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("need two equal-length 1-d series")
    diff = a - b
    diff = diff[diff != 0.0]
    n = diff.size
    if n == 0:
        return PairedTestResult(None, None, 0, degenerate=True, method="wilcoxon")
    ranks = rankdata(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    if method == "auto":
        method = "exact" if n <= exact_limit else "approx"
    if method == "exact":
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        w_doubled = int(round(2.0 * w_plus))
        p = _wilcoxon_exact_p(doubled, w_doubled)
        return PairedTestResult(w_plus, p, n, method="wilcoxon-exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts) / 48.0).sum())
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        return PairedTestResult(w_plus, None, n, degenerate=True, method="wilcoxon-approx")
    centered = w_plus - mean
    # continuity correction keeps the approximation close to the exact tail
    centered -= 0.5 * np.sign(centered)
    z = centered / math.sqrt(var)
    p = float(math.erfc(abs(z) / math.sqrt(2.0)))
    return PairedTestResult(w_plus, min(1.0, p), n, method="wilcoxon-approx")


@dataclass
class SignificanceReport:
    """Joint result of both paired tests over matched per-image series."""

    t_statistic: float | None
    t_pvalue: float | None
    w_statistic: float | None
    w_pvalue: float | None
    sample_count: int
    degenerate: bool

    @staticmethod
    def from_series(a, b) -> "SignificanceReport":
        t_res = paired_ttest(a, b)
        w_res = wilcoxon_signed_rank(a, b)
        return SignificanceReport(
            t_statistic=t_res.statistic,
            t_pvalue=t_res.p_value,
            w_statistic=w_res.statistic,
            w_pvalue=w_res.p_value,
            sample_count=t_res.sample_count,
            degenerate=t_res.degenerate or w_res.degenerate,
        )

    def to_dict(self) -> dict:
        return {
            "t_statistic": self.t_statistic,
            "t_pvalue": self.t_pvalue,
            "w_statistic": self.w_statistic,
            "w_pvalue": self.w_pvalue,
            "sample_count": self.sample_count,
            "degenerate": self.degenerate,
        }


@dataclass
class DiscriminabilityReport:
    """Pairwise centroid distance structure in the native embedding space."""

    distances: np.ndarray
    min_distance: float
    mean_distance: float

    def to_dict(self) -> dict:
        return {
            "distances": self.distances.tolist(),
            "min_distance": self.min_distance,
            "mean_distance": self.mean_distance,
        }


def discriminability(m: CentroidMatrix) -> DiscriminabilityReport:
    """Full Euclidean pairwise distance matrix plus min/mean off-diagonal values."""
    if m.num_classes < 2:
        raise DataError("need at least two centroids")
    diff = m.rows[:, None, :] - m.rows[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    off = dist[~np.eye(m.num_classes, dtype=bool)]
    return DiscriminabilityReport(
        distances=dist,
        min_distance=float(off.min()),
        mean_distance=float(off.mean()),
    )
