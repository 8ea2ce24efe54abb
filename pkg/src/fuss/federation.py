"""Round orchestration: local training on each client, the server barrier,
and global-model broadcast, all deterministic under one experiment seed.

Every client draws randomness from a stream derived from (experiment seed,
client id, round), so execution order and threading cannot change results;
the server sorts updates by client id before aggregating.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregationPolicy, ClientUpdate, aggregate
from .clustering import (
    CentroidMatrix,
    cluster_loss,
    cluster_loss_grad,
    centroid_step,
    init_centroids,
    predict_mask,
)
from .errors import ConfigurationError, FussError
from .head import (
    AdamState,
    BatchSpec,
    HeadParams,
    adam_step,
    corr_loss_and_grad,
    forward,
    head_backward,
    init_head_params,
    project_pixels,
    select_supports,
    zero_grads_like,
)
from .regularizers import RegularizerConfig, fedmoon_term, fedprox_term
from .synth import SyntheticScene
from .tensors import flatten
from .evaluation import IouReport, discriminability, miou

logger = logging.getLogger(__name__)

# fixed stream labels so every consumer of the experiment seed is independent
_STREAM_HEAD_INIT = 101
_STREAM_CENTROID_INIT = 102
_STREAM_CLIENT_ROUND = 103


@dataclass
class RoundPlan:
    """Everything a client needs to run one local round."""

    round_index: int
    local_steps: int
    batch: BatchSpec
    corr_lr: float
    cluster_lr: float
    cluster_lambda: float
    experiment_seed: int
    corr_reduction: str = "mean"  # mean | sum over query/support pairs
    normalized_scores: bool = False
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class ClientState:
    """A client's private data and model, owned by exactly one task per round."""

    client_id: int
    scenes: list[SyntheticScene]
    head: HeadParams
    centroids: CentroidMatrix
    prev_head: HeadParams | None = None
    pooled_features: np.ndarray | None = None

    def __post_init__(self):
        if self.pooled_features is None and self.scenes:
            self.pooled_features = np.stack(
                [flatten(s.features).mean(axis=0) for s in self.scenes]
            )


@dataclass
class ClientRoundStats:
    client_id: int
    corr_loss: float
    cluster_loss: float
    reg_loss: float
    head_shift: float
    centroid_shift: float


def _param_distance(a: HeadParams, b: HeadParams) -> float:
    total = 0.0
    bd = b.as_dict()
    for name, arr in a.as_dict().items():
        total += float(((arr - bd[name]) ** 2).sum())
    return float(np.sqrt(total))


class _EpochDeck:
    """Deterministic shuffled cycling over a client's scene indices."""

    def __init__(self, size: int, rng: np.random.Generator):
        self._size = size
        self._rng = rng
        self._deck: list[int] = []

    def draw(self, count: int) -> list[int]:
        out = []
        for _ in range(count):
            if not self._deck:
                self._deck = [int(i) for i in self._rng.permutation(self._size)]
            out.append(self._deck.pop(0))
        return out


def local_round(
    state: ClientState,
    plan: RoundPlan,
    global_head: HeadParams | None,
    global_centroids: CentroidMatrix | None,
    audit: dict[str, set[int]] | None = None,
) -> tuple[ClientUpdate, ClientRoundStats]:
    """Run one client's local training and return its update.

    The broadcast components (when present) replace the local ones before
    training; optimizers start fresh each round. Each step applies a
    correlation-loss step to the head, then recomputes the batch embeddings
    with the updated head and applies a clustering step to the centroids.
    """
    if not state.scenes:
        raise ConfigurationError(f"client {state.client_id} has no scenes")
    head = global_head if global_head is not None else state.head
    centroids = global_centroids if global_centroids is not None else state.centroids
    received_head, received_centroids = head, centroids

    rng = np.random.default_rng(
        [plan.experiment_seed, _STREAM_CLIENT_ROUND, state.client_id, plan.round_index]
    )
    deck = _EpochDeck(len(state.scenes), rng)
    adam_kwargs = dict(beta1=plan.adam_beta1, beta2=plan.adam_beta2, eps=plan.adam_eps)
    head_opt = AdamState.for_params(head.as_dict(), plan.corr_lr, **adam_kwargs)
    centroid_opt = AdamState.for_params(
        {"rows": centroids.rows}, plan.cluster_lr, **adam_kwargs
    )
    reg = plan.regularizer

    def note_access(index: int) -> None:
        if audit is not None:
            audit.setdefault(state.scenes[index].scene_id, set()).add(state.client_id)

    corr_hist: list[float] = []
    cluster_hist: list[float] = []
    reg_hist: list[float] = []

    for _ in range(plan.local_steps):
        queries = deck.draw(plan.batch.queries_per_step)
        grads = zero_grads_like(head)
        batch_indices: list[int] = []
        pair_count = 0
        corr_total = 0.0
        for q in queries:
            note_access(q)
            if q not in batch_indices:
                batch_indices.append(q)
            supports = select_supports(q, state.pooled_features, plan.batch, rng)
            for s in supports:
                note_access(s)
                if s not in batch_indices:
                    batch_indices.append(s)
                loss, pair_grads = corr_loss_and_grad(
                    head, state.scenes[q].features, state.scenes[s].features,
                    plan.batch.bias,
                )
                corr_total += loss
                for name in grads:
                    grads[name] += pair_grads[name]
                pair_count += 1
        if pair_count and plan.corr_reduction == "mean":
            for name in grads:
                grads[name] /= pair_count
            corr_total /= pair_count
        if plan.batch.corr_weight != 1.0:
            for name in grads:
                grads[name] *= plan.batch.corr_weight

        reg_loss = 0.0
        if reg.kind == "fedprox" and reg.mu > 0 and global_head is not None:
            prox_loss, prox_grads = fedprox_term(head, received_head, reg.mu)
            reg_loss += prox_loss
            for name in grads:
                grads[name] += prox_grads[name]
        elif reg.kind == "fedmoon" and reg.moon_weight > 0:
            if state.prev_head is not None and global_head is not None:
                query_pixels = np.concatenate(
                    [flatten(state.scenes[q].features) for q in queries]
                )
                z_local = project_pixels(head, query_pixels).mean(axis=0)
                z_global = project_pixels(received_head, query_pixels).mean(axis=0)
                z_prev = project_pixels(state.prev_head, query_pixels).mean(axis=0)
                moon_loss, z_grad = fedmoon_term(z_local, z_global, z_prev, reg.tau)
                reg_loss += reg.moon_weight * moon_loss
                per_pixel = np.tile(
                    reg.moon_weight * z_grad / query_pixels.shape[0],
                    (query_pixels.shape[0], 1),
                )
                moon_grads = head_backward(head, query_pixels, per_pixel)
                for name in grads:
                    grads[name] += moon_grads[name]

        new_params = adam_step(head.as_dict(), grads, head_opt)
        head = HeadParams.from_dict(new_params)

        batch_maps = [
            forward(head, state.scenes[i].features) for i in batch_indices
        ]
        c_loss, _ = cluster_loss(
            batch_maps, centroids, plan.cluster_lambda, plan.normalized_scores
        )
        c_grad = cluster_loss_grad(
            batch_maps, centroids, plan.cluster_lambda, plan.normalized_scores
        )
        if plan.batch.cluster_weight != 1.0:
            c_grad = c_grad * plan.batch.cluster_weight
        centroids = centroid_step(centroids, c_grad, centroid_opt)

        if not np.isfinite(corr_total) or not np.isfinite(c_loss):
            raise FussError(
                f"non-finite loss on client {state.client_id}, "
                f"round {plan.round_index}: corr={corr_total}, cluster={c_loss}"
            )
        corr_hist.append(corr_total)
        cluster_hist.append(c_loss)
        reg_hist.append(reg_loss)

    state.prev_head = head
    state.head = head
    state.centroids = centroids

    update = ClientUpdate(
        client_id=state.client_id,
        head=head,
        centroids=centroids,
        sample_count=len(state.scenes),
    )
    stats = ClientRoundStats(
        client_id=state.client_id,
        corr_loss=float(np.mean(corr_hist)) if corr_hist else 0.0,
        cluster_loss=float(np.mean(cluster_hist)) if cluster_hist else 0.0,
        reg_loss=float(np.mean(reg_hist)) if reg_hist else 0.0,
        head_shift=_param_distance(head, received_head),
        centroid_shift=float(
            np.linalg.norm(centroids.rows - received_centroids.rows)
        ),
    )
    return update, stats


def evaluate_model(
    head: HeadParams,
    centroids: CentroidMatrix,
    scenes: list[SyntheticScene],
    normalized_scores: bool = False,
) -> IouReport:
    """Hungarian-matched mIoU of a (head, centroids) pair on labeled scenes."""
    preds = [
        predict_mask(forward(head, s.features), centroids, normalized_scores)
        for s in scenes
    ]
    return miou(preds, [s.truth for s in scenes])


@dataclass
class RunReport:
    """Complete record of a federation run; deterministic given the config."""

    config: dict
    rounds: list[dict]
    final: dict
    audit_log: list[dict]
    privacy_ok: bool

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config,
            "rounds": self.rounds,
            "final": self.final,
            "audit_log": self.audit_log,
            "privacy_ok": self.privacy_ok,
        }


def _evaluate_round(
    states: list[ClientState],
    global_head: HeadParams | None,
    global_centroids: CentroidMatrix | None,
    val_scenes: list[SyntheticScene],
    normalized_scores: bool,
) -> dict:
    """Global-model scores when both components exist, else per-client spread."""
    if not val_scenes:
        return {"mode": "none"}
    if global_head is not None and global_centroids is not None:
        report = evaluate_model(global_head, global_centroids, val_scenes, normalized_scores)
        return {"mode": "global", "miou": report.miou}
    per_client = {}
    for state in states:
        head = global_head if global_head is not None else state.head
        cent = global_centroids if global_centroids is not None else state.centroids
        report = evaluate_model(head, cent, val_scenes, normalized_scores)
        per_client[state.client_id] = report.miou
    values = list(per_client.values())
    return {
        "mode": "per_client",
        "miou": float(np.mean(values)),
        "best": float(np.max(values)),
        "worst": float(np.min(values)),
        "per_client": {str(k): v for k, v in per_client.items()},
    }


def _final_per_image(
    states: list[ClientState],
    global_head: HeadParams | None,
    global_centroids: CentroidMatrix | None,
    val_scenes: list[SyntheticScene],
    normalized_scores: bool,
) -> tuple[dict, list[dict]]:
    """Final evaluation block plus the per-image IoU series for paired testing.

    With no single global model the per-image value is the mean over client
    models for that image, keeping the series comparable across reports.
    """
    summary = _evaluate_round(
        states, global_head, global_centroids, val_scenes, normalized_scores
    )
    if global_head is not None and global_centroids is not None:
        report = evaluate_model(global_head, global_centroids, val_scenes, normalized_scores)
        series = report.per_image
        summary["per_class_iou"] = {str(k): v for k, v in sorted(report.per_class.items())}
        summary["matching"] = [[int(p), int(t)] for p, t in report.matching]
        summary["discriminability"] = discriminability(global_centroids).to_dict()
    else:
        all_series = []
        for state in states:
            head = global_head if global_head is not None else state.head
            cent = global_centroids if global_centroids is not None else state.centroids
            report = evaluate_model(head, cent, val_scenes, normalized_scores)
            all_series.append(report.per_image)
        series = [float(np.mean(vals)) for vals in zip(*all_series)]
    per_image = [
        {"image_id": scene.scene_id, "iou": value}
        for scene, value in zip(val_scenes, series)
    ]
    return summary, per_image


def run_rounds(
    states: list[ClientState],
    plans: list[RoundPlan],
    policy: AggregationPolicy | None,
    initial_head: HeadParams,
    initial_centroids: CentroidMatrix,
    val_scenes: list[SyntheticScene],
    normalized_scores: bool = False,
    threads: int = 1,
) -> tuple[list[dict], list[dict], HeadParams | None, CentroidMatrix | None, dict]:
    """Drive the round loop over prebuilt client states; returns round records,
    audit entries, the last broadcast pair, and the scene-access audit."""
    audit: dict[str, set[int]] = {}
    global_head: HeadParams | None = initial_head
    global_centroids: CentroidMatrix | None = initial_centroids
    rounds: list[dict] = []
    audit_log: list[dict] = []

    for plan in plans:
        def run_one(state: ClientState):
            return local_round(state, plan, global_head, global_centroids, audit)

        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run_one, states))
        else:
            results = [run_one(state) for state in states]
        updates = [r[0] for r in results]
        stats = {r[1].client_id: r[1] for r in results}

        prev_centroids = global_centroids
        if policy is not None:
            new_head, new_centroids = aggregate(updates, policy, plan.round_index)
            strategy = policy.strategy
        else:
            new_head, new_centroids = None, None
            strategy = "local_only"

        centroid_shift = None
        if new_centroids is not None and prev_centroids is not None:
            centroid_shift = float(np.linalg.norm(new_centroids.rows - prev_centroids.rows))

        global_head, global_centroids = new_head, new_centroids
        evaluation = _evaluate_round(
            states, global_head, global_centroids, val_scenes, normalized_scores
        )
        rounds.append(
            {
                "round": plan.round_index,
                "clients": [
                    {
                        "client_id": cid,
                        "corr_loss": stats[cid].corr_loss,
                        "cluster_loss": stats[cid].cluster_loss,
                        "reg_loss": stats[cid].reg_loss,
                        "head_shift": stats[cid].head_shift,
                        "centroid_shift": stats[cid].centroid_shift,
                    }
                    for cid in sorted(stats)
                ],
                "global_centroid_shift": centroid_shift,
                "validation": evaluation,
            }
        )
        audit_log.append(
            {
                "round": plan.round_index,
                "strategy": strategy,
                "sample_counts": {str(u.client_id): u.sample_count for u in updates},
                "global_centroid_shift": centroid_shift,
                "client_centroid_shifts": {
                    str(cid): stats[cid].centroid_shift for cid in sorted(stats)
                },
            }
        )
    return rounds, audit_log, global_head, global_centroids, audit


def check_privacy(audit: dict[str, set[int]], owners: dict[str, int]) -> bool:
    """True iff every audited scene read came from the scene's owner."""
    for scene_id, readers in audit.items():
        owner = owners.get(scene_id)
        if owner is None or readers - {owner}:
            return False
    return True


def build_initial_model(
    seed: int, input_dim: int, hidden_dim: int, output_dim: int, num_classes: int
) -> tuple[HeadParams, CentroidMatrix]:
    """Seeded common initialization broadcast to all clients before round one."""
    head = init_head_params(
        input_dim, hidden_dim, output_dim, seed=[seed, _STREAM_HEAD_INIT]
    )
    centroids = init_centroids(num_classes, output_dim, seed=[seed, _STREAM_CENTROID_INIT])
    return head, centroids
