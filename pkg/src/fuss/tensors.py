"""Dense tensor containers and the cosine-similarity primitives everything else builds on.

All simulator arithmetic is float64; containers freeze their backing arrays so
instances can be shared across concurrent client tasks without copying.
Memory layout is row-major (height, then width, then channel) project-wide.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

COSINE_EPS = 1e-6


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FeatureMap:
    """A dense height x width x dim pixel embedding tensor."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ConfigurationError(f"feature map must be rank 3, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("feature map contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def num_pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class SegmentationMask:
    """A height x width integer label map."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64)
        if arr.ndim != 2:
            raise DataError(f"mask must be rank 2, got shape {arr.shape}")
        if self.num_classes < 1:
            raise DataError("num_classes must be >= 1")
        if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
            raise DataError(
                f"mask labels must lie in [0, {self.num_classes}), "
                f"found range [{arr.min()}, {arr.max()}]"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class SimilarityTensor:
    """Pairwise cosine similarities between two feature maps, indexed (h, w, m, n)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ConfigurationError(f"similarity tensor must be rank 4, got {arr.shape}")
        if arr.size and (arr.min() < -1.0 - COSINE_EPS or arr.max() > 1.0 + COSINE_EPS):
            raise DataError("similarity values outside the cosine bound [-1, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


def cosine_similarity(a, b, return_degenerate: bool = False):
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Zero-norm inputs yield 0 rather than NaN so that losses stay finite under
    random initialization; set ``return_degenerate`` to also get a flag telling
    whether that rule fired.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigurationError(f"vectors must share one dimension, got {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    degenerate = na == 0.0 or nb == 0.0
    if degenerate:
        value = 0.0
    else:
        value = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    if return_degenerate:
        return value, degenerate
    return value


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise l2 normalization; zero rows stay zero (degenerate rule)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarities between rows of ``a`` and rows of ``b``."""
    out = normalize_rows(a) @ normalize_rows(b).T
    return np.clip(out, -1.0, 1.0)


def flatten(fmap: FeatureMap) -> np.ndarray:
    """Reshape a feature map into an (H*W, D) pixel matrix, row-major."""
    return fmap.data.reshape(fmap.num_pixels, fmap.dim)


def unflatten(matrix: np.ndarray, height: int, width: int) -> FeatureMap:
    """Inverse of :func:`flatten`; restores the spatial layout bit-exactly."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != height * width:
        raise ConfigurationError(
            f"cannot unflatten shape {matrix.shape} into {height}x{width} map"
        )
    return FeatureMap(matrix.reshape(height, width, matrix.shape[1]))


def similarity_tensor(f1: FeatureMap, f2: FeatureMap) -> SimilarityTensor:
    """Cosine similarity tensor between every pixel pair of two maps.

    Entry (h, w, m, n) is the cosine similarity of f1[h, w] and f2[m, n].
    """
    if f1.dim != f2.dim:
        raise ConfigurationError(f"feature dims differ: {f1.dim} vs {f2.dim}")
    sims = cosine_matrix(flatten(f1), flatten(f2))
    return SimilarityTensor(sims.reshape(f1.height, f1.width, f2.height, f2.width))
