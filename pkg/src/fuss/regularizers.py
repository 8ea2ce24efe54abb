"""Optional local-loss add-ons: proximal anchoring to the global head and a
cross-round contrastive term on pooled segmentation embeddings."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .head import HeadParams, ParamDict
from .tensors import cosine_similarity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str = "none"  # none | fedprox | fedmoon
    mu: float = 0.01
    tau: float = 0.5
    moon_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "fedprox", "fedmoon"):
            raise ConfigurationError(f"unknown regularizer kind {self.kind!r}")
        if self.mu < 0:
            raise ConfigurationError("mu must be >= 0")
        if self.tau <= 0:
            raise ConfigurationError("tau must be > 0")
        if self.moon_weight < 0:
            raise ConfigurationError("moon weight must be >= 0")


def fedprox_term(
    local: HeadParams, global_: HeadParams, mu: float
) -> tuple[float, ParamDict]:
    """Proximal penalty (mu/2) * ||theta - theta_bar||^2 and its gradient."""
    loss = 0.0
    grads: ParamDict = {}
    local_d = local.as_dict()
    global_d = global_.as_dict()
    for name, p in local_d.items():
        diff = p - global_d[name]
        loss += float((diff**2).sum())
        grads[name] = mu * diff
    return 0.5 * mu * loss, grads


def _cos_grad(z: np.ndarray, other: np.ndarray) -> tuple[float, np.ndarray]:
    nz = np.linalg.norm(z)
    no = np.linalg.norm(other)
    cos = float(np.clip(np.dot(z, other) / (nz * no), -1.0, 1.0))
    grad = other / (nz * no) - cos * z / (nz * nz)
    return cos, grad


def fedmoon_term(
    z_local: np.ndarray,
    z_global: np.ndarray,
    z_prev: np.ndarray,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Contrastive alignment of the local embedding with the global one against
    the previous round's local embedding; returns loss and the gradient w.r.t.
    the local embedding.

    Zero-norm inputs (the degenerate first round) skip the term with a warning.
    """
    z = np.asarray(z_local, dtype=np.float64)
    zg = np.asarray(z_global, dtype=np.float64)
    zp = np.asarray(z_prev, dtype=np.float64)
    if not (z.shape == zg.shape == zp.shape) or z.ndim != 1:
        raise ConfigurationError("embedding vectors must share one dimension")
    if min(np.linalg.norm(z), np.linalg.norm(zg), np.linalg.norm(zp)) == 0.0:
        logger.warning("zero-norm embedding, skipping contrastive term")
        return 0.0, np.zeros_like(z)
    cos_pos, grad_pos = _cos_grad(z, zg)
    cos_neg, grad_neg = _cos_grad(z, zp)
    delta = (cos_neg - cos_pos) / tau
    # log(1 + exp(delta)) evaluated stably
    loss = math.log1p(math.exp(-abs(delta))) + max(delta, 0.0)
    sig = 1.0 / (1.0 + math.exp(-delta))
    grad = (sig / tau) * (grad_neg - grad_pos)
    return loss, grad


def moon_loss_value(z_local, z_global, z_prev, tau: float) -> float:
    """Loss-only evaluation used by finite-difference checks."""
    c1 = cosine_similarity(np.asarray(z_local, float), np.asarray(z_global, float))
    c2 = cosine_similarity(np.asarray(z_local, float), np.asarray(z_prev, float))
    delta = (c2 - c1) / tau
    return math.log1p(math.exp(-abs(delta))) + max(delta, 0.0)
