"""Server side of the federation: averaging of head parameters and centroids,
and the pooled-prototype strategies that re-cluster or diversity-select the
global centroid matrix instead of trusting row indices to mean the same class
on every client.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import CentroidMatrix
from .errors import ConfigurationError, ProtocolError
from .head import HeadParams

STRATEGIES = ("fedavg", "fedcc_kmeans", "fedcc_maximin")


@dataclass(frozen=True)
class ClientUpdate:
    """What a client sends after a local round: head, centroids, sample count."""

    client_id: int
    head: HeadParams
    centroids: CentroidMatrix
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ProtocolError("sample_count must be >= 1")


@dataclass(frozen=True)
class AggregationPolicy:
    """Which pieces get aggregated and how.

    ``weighted`` scales client contributions by dataset size; ``aggregate_encoder``
    and ``aggregate_centroids`` are the ablation switches, at least one of which
    must be on (turning both off is the no-aggregation baseline, which skips the
    server step entirely rather than instantiating a policy).
    """

    strategy: str = "fedavg"
    weighted: bool = True
    aggregate_encoder: bool = True
    aggregate_centroids: bool = True
    seed: int = 0
    pin_first_maximin: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown aggregation strategy {self.strategy!r}")
        if not (self.aggregate_encoder or self.aggregate_centroids):
            raise ConfigurationError(
                "at least one of encoder/centroid aggregation must be enabled"
            )


def _sorted_updates(updates: list[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise ProtocolError("cannot aggregate an empty update list")
    out = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in out]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate client ids in updates: {ids}")
    return out


def _weights(updates: list[ClientUpdate], weighted: bool) -> np.ndarray:
    if weighted:
        counts = np.array([u.sample_count for u in updates], dtype=np.float64)
        return counts / counts.sum()
    return np.full(len(updates), 1.0 / len(updates))


def fedavg_heads(updates: list[ClientUpdate], weighted: bool) -> HeadParams:
    """Elementwise weighted mean of head parameters across clients."""
    updates = _sorted_updates(updates)
    alphas = _weights(updates, weighted)
    ref = updates[0].head.as_dict()
    acc = {name: np.zeros_like(arr) for name, arr in ref.items()}
    for alpha, update in zip(alphas, updates):
        for name, arr in update.head.as_dict().items():
            if arr.shape != acc[name].shape:
                raise ProtocolError(f"head parameter {name} shape mismatch across clients")
            acc[name] = acc[name] + alpha * arr
    return HeadParams.from_dict(acc)


def fedavg_centroids(updates: list[ClientUpdate], weighted: bool) -> CentroidMatrix:
    """Row-index-aligned weighted mean of the client centroid matrices."""
    updates = _sorted_updates(updates)
    alphas = _weights(updates, weighted)
    shape = updates[0].centroids.rows.shape
    acc = np.zeros(shape)
    for alpha, update in zip(alphas, updates):
        if update.centroids.rows.shape != shape:
            raise ProtocolError("centroid matrix shape mismatch across clients")
        acc += alpha * update.centroids.rows
    return CentroidMatrix(acc)


def pool_centroids(updates: list[ClientUpdate]) -> np.ndarray:
    """Stack every client's centroid rows, clients in ascending id order."""
    updates = _sorted_updates(updates)
    return np.concatenate([u.centroids.rows for u in updates], axis=0)


def _kmeans_pp_init(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pool.shape[0]
    centers = np.empty((k, pool.shape[1]))
    centers[0] = pool[rng.integers(n)]
    dist_sq = ((pool - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = dist_sq.sum()
        if total == 0.0:
            centers[i] = pool[rng.integers(n)]
        else:
            centers[i] = pool[rng.choice(n, p=dist_sq / total)]
        dist_sq = np.minimum(dist_sq, ((pool - centers[i]) ** 2).sum(axis=1))
    return centers


def _pairwise_sq(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _lloyd(pool: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    k = centers.shape[0]
    labels = np.zeros(pool.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        dists = _pairwise_sq(pool, centers)
        labels = np.argmin(dists, axis=1)
        new_centers = centers.copy()
        for c in range(k):
            mask = labels == c
            if mask.any():
                new_centers[c] = pool[mask].mean(axis=0)
            else:
                nearest = _pairwise_sq(pool, new_centers).min(axis=1)
                new_centers[c] = pool[int(np.argmax(nearest))]
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum()))
        centers = new_centers
        if shift < tol:
            break
    labels = np.argmin(_pairwise_sq(pool, centers), axis=1)
    objective = float(((pool - centers[labels]) ** 2).sum())
    return centers, labels, objective


def _swap_refine(pool: np.ndarray, centers: np.ndarray, labels: np.ndarray, k: int):
    """Single-point reassignment local search after Lloyd.

    Lloyd stops at Voronoi-stationary solutions; moving one point between
    clusters (with both means updated) often still improves the objective on
    small pools. Applies best-improving moves until none remains.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, pool.shape[1]))
    np.add.at(sums, labels, pool)
    for _ in range(200):
        best_delta, best_move = -1e-12, None
        means = sums / np.maximum(counts, 1.0)[:, None]
        for i in range(pool.shape[0]):
            src = labels[i]
            if counts[src] <= 1:
                continue
            x = pool[i]
            lost = counts[src] / (counts[src] - 1.0) * float(((x - means[src]) ** 2).sum())
            for dst in range(k):
                if dst == src:
                    continue
                gained = counts[dst] / (counts[dst] + 1.0) * float(
                    ((x - means[dst]) ** 2).sum()
                )
                delta = gained - lost
                if delta < best_delta:
                    best_delta, best_move = delta, (i, dst)
        if best_move is None:
            break
        i, dst = best_move
        src = labels[i]
        labels[i] = dst
        counts[src] -= 1.0
        counts[dst] += 1.0
        sums[src] -= pool[i]
        sums[dst] += pool[i]
    centers = centers.copy()
    for c in range(k):
        if counts[c] > 0:
            centers[c] = sums[c] / counts[c]
    objective = float(((pool - centers[labels]) ** 2).sum())
    return centers, labels, objective


def kmeans(
    pool: np.ndarray,
    k: int,
    seed,
    max_iter: int = 100,
    tol: float = 1e-8,
    init: np.ndarray | None = None,
    restarts: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """Best of ``restarts`` seeded k-means++ inits, each run to convergence.

    Lloyd runs until the total center shift drops below ``tol`` or ``max_iter``
    is hit; an empty cluster is reseeded at the pool point farthest from its
    nearest center before the next assignment pass. Restarts draw from one
    seeded stream, so the result is deterministic; explicit ``init`` centers
    disable them.
    """
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] < k:
        raise ConfigurationError(f"need at least {k} pool rows, got {pool.shape}")
    rng = np.random.default_rng(seed)
    if init is not None:
        centers = np.asarray(init, dtype=np.float64).copy()
        if centers.shape != (k, pool.shape[1]):
            raise ConfigurationError(f"init centers must have shape ({k}, {pool.shape[1]})")
        centers, labels, _ = _lloyd(pool, centers, max_iter, tol)
        return centers, labels
    best = None
    for _ in range(max(1, restarts)):
        centers, labels, objective = _lloyd(
            pool, _kmeans_pp_init(pool, k, rng), max_iter, tol
        )
        centers, labels, objective = _swap_refine(pool, centers, labels, k)
        if best is None or objective < best[2] - 1e-15:
            best = (centers, labels, objective)
    return best[0], best[1]


def fedcc_kmeans(pool: np.ndarray, num_classes: int, seed) -> CentroidMatrix:
    """Re-cluster the pooled client prototypes; each output row is a cluster mean.

    Rows are ordered by descending cluster population (stable on ties) so the
    result is deterministic; clients re-assign pixels by similarity, so the
    ordering itself carries no semantics.
    """
    centers, labels = kmeans(pool, num_classes, seed)
    pops = np.bincount(labels, minlength=num_classes)
    order = np.argsort(-pops, kind="stable")
    return CentroidMatrix(centers[order])


def maximin_select(
    pool: np.ndarray,
    count: int,
    seed,
    pin_first_index: int | None = None,
) -> np.ndarray:
    """Greedy farthest-point selection: each pick maximizes its minimum
    Euclidean distance to everything already selected.

    Returns the selected pool indices in selection order. Ties resolve to the
    lowest pool index; the first pick is seeded-random unless pinned.
    """
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] < count:
        raise ConfigurationError(f"need at least {count} pool rows, got {pool.shape}")
    if pin_first_index is not None:
        first = int(pin_first_index)
        if not 0 <= first < pool.shape[0]:
            raise ConfigurationError(f"pinned first index {first} out of range")
    else:
        first = int(np.random.default_rng(seed).integers(pool.shape[0]))
    chosen = [first]
    min_dist = np.linalg.norm(pool - pool[first], axis=1)
    for _ in range(1, count):
        nxt = int(np.argmax(min_dist))  # argmax takes the lowest index on ties
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pool - pool[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


def fedcc_maximin(
    pool: np.ndarray,
    num_classes: int,
    seed,
    pin_first_index: int | None = None,
) -> CentroidMatrix:
    """Diversity-preserving aggregation: selected pool rows verbatim, never averages."""
    idx = maximin_select(pool, num_classes, seed, pin_first_index)
    return CentroidMatrix(np.asarray(pool, dtype=np.float64)[idx])


def aggregate(
    updates: list[ClientUpdate],
    policy: AggregationPolicy,
    round_index: int = 0,
) -> tuple[HeadParams | None, CentroidMatrix | None]:
    """Run one server aggregation step under the given policy.

    The head is averaged only when encoder aggregation is on; centroids only
    when centroid aggregation is on, using the policy strategy. A component
    that is not aggregated comes back as None and clients keep their local
    copy for the next round.
    """
    updates = _sorted_updates(updates)
    head = fedavg_heads(updates, policy.weighted) if policy.aggregate_encoder else None
    centroids = None
    if policy.aggregate_centroids:
        if policy.strategy == "fedavg":
            centroids = fedavg_centroids(updates, policy.weighted)
        else:
            pool = pool_centroids(updates)
            num_classes = updates[0].centroids.num_classes
            seed = [policy.seed, round_index]  # round-scoped stream
            if policy.strategy == "fedcc_kmeans":
                centroids = fedcc_kmeans(pool, num_classes, seed)
            else:
                pin = 0 if policy.pin_first_maximin else None
                centroids = fedcc_maximin(pool, num_classes, seed, pin_first_index=pin)
    return head, centroids
