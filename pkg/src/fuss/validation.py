"""Input validation helpers for the estimator layer."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .tensors import FeatureMap, SegmentationMask


def check_feature_stack(X) -> list[FeatureMap]:
    """Coerce input into a list of feature maps.

    Accepts a rank-4 array (n_scenes, height, width, dim), a list of rank-3
    arrays, or a list of FeatureMap instances.
    """
    if isinstance(X, np.ndarray):
        if X.ndim != 4:
            raise DataError(f"expected (n, H, W, D) array, got shape {X.shape}")
        return [FeatureMap(X[i]) for i in range(X.shape[0])]
    if isinstance(X, (list, tuple)) and X:
        out = []
        for item in X:
            out.append(item if isinstance(item, FeatureMap) else FeatureMap(np.asarray(item)))
        if len({m.dim for m in out}) != 1:
            raise DataError("all feature maps must share one embedding dimension")
        return out
    raise DataError("X must be a rank-4 array or a nonempty list of feature maps")


def check_mask_stack(y, num_classes: int | None = None) -> list[SegmentationMask]:
    """Coerce labels into segmentation masks with a shared class space."""
    if isinstance(y, np.ndarray):
        if y.ndim != 3:
            raise DataError(f"expected (n, H, W) label array, got shape {y.shape}")
        items = [y[i] for i in range(y.shape[0])]
    elif isinstance(y, (list, tuple)) and y:
        items = list(y)
    else:
        raise DataError("y must be a rank-3 array or a nonempty list of masks")
    masks = []
    if num_classes is None:
        num_classes = 1
        for item in items:
            arr = item.labels if isinstance(item, SegmentationMask) else np.asarray(item)
            num_classes = max(num_classes, int(arr.max()) + 1)
    for item in items:
        if isinstance(item, SegmentationMask):
            masks.append(SegmentationMask(item.labels, num_classes))
        else:
            masks.append(SegmentationMask(np.asarray(item), num_classes))
    return masks
