"""Trainable projection head: forward pass, correlation-distillation loss,
hand-derived gradients, Adam, and support-image selection.

The head is pointwise (1x1): two linear layers with a rectifier between them
plus a parallel linear skip from input to output. Gradients are derived by
hand through the cosine normalization chain; there is no autodiff anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .tensors import FeatureMap, SimilarityTensor, cosine_matrix, flatten, normalize_rows

logger = logging.getLogger(__name__)

ParamDict = dict[str, np.ndarray]

_warned_pools: set[tuple] = set()


def _warn_once(key: tuple, message: str, *args) -> None:
    # support pools are static within a round, so repeat warnings are noise
    if key not in _warned_pools:
        _warned_pools.add(key)
        logger.warning(message, *args)


@dataclass(frozen=True)
class HeadParams:
    """Weights of the two-layer pointwise projection with linear skip.

    Output dimension must not exceed the input dimension; production configs
    keep it strictly smaller.
    """

    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (output, hidden)
    b2: np.ndarray  # (output,)
    w_skip: np.ndarray  # (output, input)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "w_skip"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"head parameter {name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        hidden, d_in = self.w1.shape
        d_out = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (d_out, hidden):
            raise ConfigurationError("inconsistent head parameter shapes")
        if self.b2.shape != (d_out,) or self.w_skip.shape != (d_out, d_in):
            raise ConfigurationError("inconsistent head parameter shapes")
        if d_out > d_in:
            raise ConfigurationError(
                f"output dim {d_out} must not exceed input dim {d_in}"
            )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]

    def as_dict(self) -> ParamDict:
        return {
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
            "w_skip": self.w_skip,
        }

    @staticmethod
    def from_dict(params: ParamDict) -> "HeadParams":
        return HeadParams(
            w1=params["w1"],
            b1=params["b1"],
            w2=params["w2"],
            b2=params["b2"],
            w_skip=params["w_skip"],
        )


def init_head_params(input_dim: int, hidden_dim: int, output_dim: int, seed) -> HeadParams:
    """Scaled Gaussian initialization, deterministic under the seed."""
    rng = np.random.default_rng(seed)
    return HeadParams(
        w1=rng.standard_normal((hidden_dim, input_dim)) / np.sqrt(input_dim),
        b1=np.zeros(hidden_dim),
        w2=rng.standard_normal((output_dim, hidden_dim)) / np.sqrt(hidden_dim),
        b2=np.zeros(output_dim),
        w_skip=rng.standard_normal((output_dim, input_dim)) / np.sqrt(input_dim),
    )


def zero_grads_like(params: HeadParams) -> ParamDict:
    return {name: np.zeros_like(arr) for name, arr in params.as_dict().items()}


def _forward_pixels(params: HeadParams, pixels: np.ndarray):
    pre = pixels @ params.w1.T + params.b1
    hidden = np.maximum(pre, 0.0)
    out = hidden @ params.w2.T + params.b2 + pixels @ params.w_skip.T
    return out, pre, hidden


def forward(params: HeadParams, zmap: FeatureMap) -> FeatureMap:
    """Project a feature map pixel by pixel into the segmentation embedding space."""
    if zmap.dim != params.input_dim:
        raise ConfigurationError(
            f"feature dim {zmap.dim} does not match head input dim {params.input_dim}"
        )
    out, _, _ = _forward_pixels(params, flatten(zmap))
    return FeatureMap(out.reshape(zmap.height, zmap.width, params.output_dim))


def project_pixels(params: HeadParams, pixels: np.ndarray) -> np.ndarray:
    """Head forward pass on an (N, input_dim) pixel matrix."""
    out, _, _ = _forward_pixels(params, np.asarray(pixels, dtype=np.float64))
    return out


def _backward_pixels(
    params: HeadParams, pixels: np.ndarray, pre: np.ndarray, hidden: np.ndarray,
    out_grad: np.ndarray,
) -> ParamDict:
    grad_hidden = (out_grad @ params.w2) * (pre > 0.0)
    return {
        "w1": grad_hidden.T @ pixels,
        "b1": grad_hidden.sum(axis=0),
        "w2": out_grad.T @ hidden,
        "b2": out_grad.sum(axis=0),
        "w_skip": out_grad.T @ pixels,
    }


def head_backward(params: HeadParams, pixels: np.ndarray, out_grad: np.ndarray) -> ParamDict:
    """Parameter gradients given per-pixel gradients on the head output."""
    out, pre, hidden = _forward_pixels(params, pixels)
    return _backward_pixels(params, pixels, pre, hidden, out_grad)


def corr_loss(a: SimilarityTensor, q: SimilarityTensor, bias: float) -> float:
    """Correlation-distillation objective: -sum((A - bias) * Q).

    ``bias`` suppresses weak correspondences: entries of A below it push the
    corresponding projected similarities negative instead of positive.
    """
    if a.shape != q.shape:
        raise ConfigurationError(f"similarity tensor shapes differ: {a.shape} vs {q.shape}")
    return float(-np.sum((a.data - bias) * q.data))


def _cosine_pair_grads(u: np.ndarray, v: np.ndarray, weight: np.ndarray):
    """Gradients of sum(weight * cos(u_p, v_s)) w.r.t. the rows of u and v.

    Zero-norm rows follow the degenerate rule: cosine 0 and zero gradient.
    """
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    uhat = normalize_rows(u)
    vhat = normalize_rows(v)
    cos = uhat @ vhat.T
    inv_nu = np.divide(1.0, nu, out=np.zeros_like(nu), where=nu > 0)
    inv_nv = np.divide(1.0, nv, out=np.zeros_like(nv), where=nv > 0)
    grad_u = (weight @ vhat) * inv_nu[:, None] - (
        (weight * cos).sum(axis=1) * inv_nu**2
    )[:, None] * u
    grad_v = (weight.T @ uhat) * inv_nv[:, None] - (
        (weight * cos).sum(axis=0) * inv_nv**2
    )[:, None] * v
    return cos, grad_u, grad_v


def corr_loss_and_grad(
    params: HeadParams,
    z_query: FeatureMap,
    z_support: FeatureMap,
    bias: float,
) -> tuple[float, ParamDict]:
    """Loss and analytic head-parameter gradient for one query/support pair.

    The backbone similarity tensor is a constant; gradients flow through both
    the query-side and support-side projections because the same head produces
    both embeddings.
    """
    if z_query.dim != params.input_dim or z_support.dim != params.input_dim:
        raise ConfigurationError("feature dims do not match head input dim")
    zq = flatten(z_query)
    zs = flatten(z_support)
    a = cosine_matrix(zq, zs)

    uq, pre_q, hid_q = _forward_pixels(params, zq)
    us, pre_s, hid_s = _forward_pixels(params, zs)
    weight = -(a - bias)
    cos, grad_u, grad_v = _cosine_pair_grads(uq, us, weight)
    loss = float((weight * cos).sum())

    grads = _backward_pixels(params, zq, pre_q, hid_q, grad_u)
    grads_s = _backward_pixels(params, zs, pre_s, hid_s, grad_v)
    for name in grads:
        grads[name] += grads_s[name]
    return loss, grads


@dataclass
class AdamState:
    """Per-parameter-tree Adam accumulators plus hyperparameters."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: ParamDict = field(default_factory=dict)
    v: ParamDict = field(default_factory=dict)

    @staticmethod
    def for_params(params: ParamDict, learning_rate: float, **kwargs) -> "AdamState":
        state = AdamState(learning_rate=learning_rate, **kwargs)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(params: ParamDict, grads: ParamDict, state: AdamState) -> ParamDict:
    """One Adam update with bias correction; mutates ``state``, returns new params."""
    if set(params) != set(grads):
        raise ConfigurationError("gradient keys do not match parameter keys")
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    out: ParamDict = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient shape mismatch for {name}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        out[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


@dataclass(frozen=True)
class BatchSpec:
    """How local mini-batches are assembled each step."""

    queries_per_step: int = 2
    random_supports: int = 2
    bias: float = 0.2
    corr_weight: float = 1.0
    cluster_weight: float = 1.0

    def __post_init__(self):
        if self.queries_per_step < 1:
            raise ConfigurationError("need at least one query per step")
        if self.random_supports < 0:
            raise ConfigurationError("random support count must be >= 0")
        if not 0.0 <= self.bias <= 1.0:
            raise ConfigurationError("bias must lie in [0, 1]")


def select_supports(
    query_index: int,
    pooled_features: np.ndarray,
    spec: BatchSpec,
    rng: np.random.Generator,
) -> list[int]:
    """Pick one nearest neighbor plus random supports for a query scene.

    ``pooled_features`` holds one mean-pooled backbone feature vector per scene
    in the client's pool. The nearest neighbor maximizes cosine similarity to
    the query (the query itself is excluded); remaining supports are drawn
    uniformly without replacement. Too small a pool clamps the count.
    """
    n = pooled_features.shape[0]
    if not 0 <= query_index < n:
        raise ConfigurationError(f"query index {query_index} outside pool of {n}")
    if n < 2:
        _warn_once(("solo", n), "support selection with a single-scene pool yields no supports")
        return []
    sims = cosine_matrix(pooled_features[query_index : query_index + 1], pooled_features)[0]
    sims[query_index] = -np.inf
    nn = int(np.argmax(sims))
    candidates = [i for i in range(n) if i not in (query_index, nn)]
    wanted = spec.random_supports
    if wanted > len(candidates):
        _warn_once(
            ("clamp", n, wanted),
            "support pool too small: clamping random supports from %d to %d",
            wanted, len(candidates),
        )
        wanted = len(candidates)
    extra = (
        [int(i) for i in rng.choice(len(candidates), size=wanted, replace=False)]
        if wanted
        else []
    )
    return [nn] + [candidates[i] for i in extra]
