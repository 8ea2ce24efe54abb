"""Semantic prototype management: pixel-to-centroid scoring, mask assignment,
the clustering objective, and its hand-derived centroid gradient.

Assignments come from raw inner-product scores (a config switch enables
cosine scoring instead) and are treated as constants when differentiating,
mirroring incremental mini-batch clustering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .head import AdamState, adam_step
from .tensors import FeatureMap, SegmentationMask, cosine_matrix, flatten, normalize_rows


@dataclass(frozen=True)
class CentroidMatrix:
    """One prototype row per semantic class; the row count is fixed per experiment."""

    rows: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.rows, dtype=np.float64)
        if arr.ndim != 2:
            raise ConfigurationError(f"centroid matrix must be rank 2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("centroid matrix contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "rows", arr)

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def init_centroids(num_classes: int, dim: int, seed) -> CentroidMatrix:
    """Random unit-norm rows, deterministic under the seed."""
    rng = np.random.default_rng(seed)
    return CentroidMatrix(normalize_rows(rng.standard_normal((num_classes, dim))))


def score(h: FeatureMap, m: CentroidMatrix, normalized: bool = False) -> np.ndarray:
    """Per-pixel similarity scores against every centroid, shape (H, W, |C|).

    Default is the raw inner product; ``normalized`` switches to cosine.
    """
    if h.dim != m.dim:
        raise ConfigurationError(f"feature dim {h.dim} != centroid dim {m.dim}")
    pixels = flatten(h)
    if normalized:
        scores = cosine_matrix(pixels, m.rows)
    else:
        scores = pixels @ m.rows.T
    return scores.reshape(h.height, h.width, m.num_classes)


def assign(scores: np.ndarray) -> SegmentationMask:
    """Label each pixel with its best-scoring centroid; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise ConfigurationError(f"score tensor must be rank 3, got {scores.shape}")
    return SegmentationMask(np.argmax(scores, axis=2), num_classes=scores.shape[2])


def predict_mask(h: FeatureMap, m: CentroidMatrix, normalized: bool = False) -> SegmentationMask:
    return assign(score(h, m, normalized=normalized))


def _assign_pixels(pixels: np.ndarray, m: CentroidMatrix, normalized: bool) -> np.ndarray:
    if normalized:
        scores = cosine_matrix(pixels, m.rows)
    else:
        scores = pixels @ m.rows.T
    return np.argmax(scores, axis=1)


def _inter_cosine_sum(m: CentroidMatrix) -> float:
    cos = cosine_matrix(m.rows, m.rows)
    return float(cos.sum() - np.trace(cos))


def cluster_loss(
    batch: list[FeatureMap],
    m: CentroidMatrix,
    lam: float,
    normalized_scores: bool = False,
) -> tuple[float, list[SegmentationMask]]:
    """Intra-cluster variance plus lam-weighted inter-centroid cosine similarity.

    Assignments are recomputed from the (detached) features of the batch; the
    inter term sums cosines over all ordered centroid pairs c != c'.
    """
    if lam < 0:
        raise ConfigurationError("lambda must be >= 0")
    masks = []
    intra = 0.0
    for fmap in batch:
        pixels = flatten(fmap)
        labels = _assign_pixels(pixels, m, normalized_scores)
        masks.append(
            SegmentationMask(labels.reshape(fmap.height, fmap.width), m.num_classes)
        )
        intra += float(((pixels - m.rows[labels]) ** 2).sum())
    return intra + lam * _inter_cosine_sum(m), masks


def cluster_loss_grad(
    batch: list[FeatureMap],
    m: CentroidMatrix,
    lam: float,
    normalized_scores: bool = False,
) -> np.ndarray:
    """Gradient of the clustering objective w.r.t. the centroid rows.

    Hard assignments are held fixed, so the intra term contributes
    2 * (m_c - pixel) per assigned pixel; rows with no assigned pixels feel
    only the inter-centroid term. Zero-norm rows get zero inter gradient.
    """
    grad = np.zeros_like(m.rows)
    for fmap in batch:
        pixels = flatten(fmap)
        labels = _assign_pixels(pixels, m, normalized_scores)
        counts = np.bincount(labels, minlength=m.num_classes).astype(np.float64)
        sums = np.zeros_like(m.rows)
        np.add.at(sums, labels, pixels)
        grad += 2.0 * (counts[:, None] * m.rows - sums)

    if lam > 0 and m.num_classes > 1:
        norms = np.linalg.norm(m.rows, axis=1)
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        unit = normalize_rows(m.rows)
        cos = np.clip(unit @ unit.T, -1.0, 1.0)
        np.fill_diagonal(cos, 0.0)
        others = unit.sum(axis=0)[None, :] - unit
        # each unordered pair appears twice in the ordered sum
        grad += 2.0 * lam * (
            others * inv[:, None] - cos.sum(axis=1)[:, None] * m.rows * (inv**2)[:, None]
        )
    return grad


def centroid_step(m: CentroidMatrix, grad: np.ndarray, state: AdamState) -> CentroidMatrix:
    """Adam update on the centroid rows (shared optimizer implementation)."""
    new = adam_step({"rows": m.rows}, {"rows": grad}, state)
    return CentroidMatrix(new["rows"])


def kmeans_objective(pixels: np.ndarray, m: CentroidMatrix, labels: np.ndarray) -> float:
    """Sum of squared distances to the assigned centroid (reference objective)."""
    return float(((pixels - m.rows[labels]) ** 2).sum())
