"""Scikit-learn compatible facade over the functional core.

Both estimators take backbone feature stacks as X (shape (n, H, W, D') or a
list of feature maps) and are fully unsupervised: y is accepted only by
``score``, which reports optimally matched mIoU against ground-truth masks.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .clustering import predict_mask
from .errors import ConfigurationError
from .evaluation import miou
from .federation import ClientState, RoundPlan, build_initial_model, local_round, run_rounds
from .head import BatchSpec, forward
from .regularizers import RegularizerConfig
from .synth import SyntheticScene
from .validation import check_feature_stack, check_mask_stack


class FussSegmenter(BaseEstimator):
    """Single-site trainer: projection head plus prototype clustering.

    fit learns the head with the correlation-distillation loss and the
    centroids with the clustering loss; predict assigns every pixel of new
    feature maps to a learned prototype.
    """

    def __init__(
        self,
        num_classes: int = 4,
        output_dim: int = 8,
        hidden_dim: int = 0,
        steps: int = 60,
        queries_per_step: int = 2,
        random_supports: int = 2,
        bias: float = 0.2,
        corr_lr: float = 5e-4,
        cluster_lr: float = 5e-3,
        cluster_lambda: float = 0.1,
        normalized_scores: bool = False,
        seed: int = 0,
    ):
        self.num_classes = num_classes
        self.output_dim = output_dim
        self.hidden_dim = hidden_dim
        self.steps = steps
        self.queries_per_step = queries_per_step
        self.random_supports = random_supports
        self.bias = bias
        self.corr_lr = corr_lr
        self.cluster_lr = cluster_lr
        self.cluster_lambda = cluster_lambda
        self.normalized_scores = normalized_scores
        self.seed = seed

    def _plan(self, steps: int) -> RoundPlan:
        return RoundPlan(
            round_index=1,
            local_steps=steps,
            batch=BatchSpec(
                queries_per_step=self.queries_per_step,
                random_supports=self.random_supports,
                bias=self.bias,
            ),
            corr_lr=self.corr_lr,
            cluster_lr=self.cluster_lr,
            cluster_lambda=self.cluster_lambda,
            experiment_seed=self.seed,
            normalized_scores=self.normalized_scores,
            regularizer=RegularizerConfig(kind="none"),
        )

    def fit(self, X, y=None):
        maps = check_feature_stack(X)
        input_dim = maps[0].dim
        if self.output_dim >= input_dim:
            raise ConfigurationError(
                f"output_dim {self.output_dim} must be smaller than the "
                f"feature dimension {input_dim}"
            )
        head, centroids = build_initial_model(
            self.seed, input_dim, self.hidden_dim or input_dim,
            self.output_dim, self.num_classes,
        )
        scenes = [
            SyntheticScene(features=m, truth=None, scene_id=f"fit-{i:05d}")
            for i, m in enumerate(maps)
        ]
        state = ClientState(client_id=0, scenes=scenes, head=head, centroids=centroids)
        update, _ = local_round(state, self._plan(self.steps), head, centroids)
        self.head_ = update.head
        self.centroids_ = update.centroids
        self.n_features_in_ = input_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "head_"):
            raise NotFittedError("call fit before predict/transform/score")

    def transform(self, X) -> np.ndarray:
        """Project feature maps into the learned segmentation embedding space."""
        self._check_fitted()
        maps = check_feature_stack(X)
        return np.stack([forward(self.head_, m).data for m in maps])

    def predict(self, X) -> np.ndarray:
        """Per-pixel prototype assignments, shape (n, H, W)."""
        self._check_fitted()
        maps = check_feature_stack(X)
        return np.stack(
            [
                predict_mask(forward(self.head_, m), self.centroids_,
                             self.normalized_scores).labels
                for m in maps
            ]
        )

    def score(self, X, y) -> float:
        """Optimally matched mIoU against ground-truth masks."""
        preds = self.predict(X)
        truths = check_mask_stack(y)
        pred_masks = check_mask_stack(list(preds), num_classes=self.num_classes)
        return miou(pred_masks, truths).miou


class FederatedFussSegmenter(BaseEstimator):
    """Multi-client trainer running full aggregation rounds.

    Scenes are dealt to clients round-robin unless ``client_ids`` is passed to
    fit; after fitting, the estimator exposes the global model (head and
    centroids) and predicts exactly like the single-site segmenter.
    """

    def __init__(
        self,
        num_clients: int = 4,
        rounds: int = 10,
        strategy: str = "fedcc_maximin",
        weighted: bool = True,
        aggregate_encoder: bool = True,
        aggregate_centroids: bool = True,
        num_classes: int = 4,
        output_dim: int = 8,
        hidden_dim: int = 0,
        local_steps: int = 0,
        queries_per_step: int = 2,
        random_supports: int = 2,
        bias: float = 0.2,
        corr_lr: float = 5e-4,
        cluster_lr: float = 5e-3,
        cluster_lambda: float = 0.1,
        normalized_scores: bool = False,
        regularizer: str = "none",
        prox_mu: float = 0.01,
        moon_tau: float = 0.5,
        moon_weight: float = 1.0,
        seed: int = 0,
    ):
        self.num_clients = num_clients
        self.rounds = rounds
        self.strategy = strategy
        self.weighted = weighted
        self.aggregate_encoder = aggregate_encoder
        self.aggregate_centroids = aggregate_centroids
        self.num_classes = num_classes
        self.output_dim = output_dim
        self.hidden_dim = hidden_dim
        self.local_steps = local_steps
        self.queries_per_step = queries_per_step
        self.random_supports = random_supports
        self.bias = bias
        self.corr_lr = corr_lr
        self.cluster_lr = cluster_lr
        self.cluster_lambda = cluster_lambda
        self.normalized_scores = normalized_scores
        self.regularizer = regularizer
        self.prox_mu = prox_mu
        self.moon_tau = moon_tau
        self.moon_weight = moon_weight
        self.seed = seed

    def fit(self, X, y=None, client_ids=None):
        from .aggregation import AggregationPolicy

        maps = check_feature_stack(X)
        input_dim = maps[0].dim
        if self.output_dim >= input_dim:
            raise ConfigurationError(
                f"output_dim {self.output_dim} must be smaller than the "
                f"feature dimension {input_dim}"
            )
        if client_ids is None:
            client_ids = [i % self.num_clients for i in range(len(maps))]
        client_ids = np.asarray(client_ids)
        if client_ids.shape != (len(maps),):
            raise ConfigurationError("client_ids must give one client per scene")
        scenes = [
            SyntheticScene(features=m, truth=None, scene_id=f"fit-{i:05d}")
            for i, m in enumerate(maps)
        ]
        groups = [
            [s for s, c in zip(scenes, client_ids) if c == cid]
            for cid in range(self.num_clients)
        ]
        if any(not g for g in groups):
            raise ConfigurationError("every client needs at least one scene")
        head, centroids = build_initial_model(
            self.seed, input_dim, self.hidden_dim or input_dim,
            self.output_dim, self.num_classes,
        )
        states = [
            ClientState(client_id=i, scenes=g, head=head, centroids=centroids)
            for i, g in enumerate(groups)
        ]
        steps = self.local_steps or max(
            -(-len(g) // self.queries_per_step) for g in groups
        )
        batch = BatchSpec(
            queries_per_step=self.queries_per_step,
            random_supports=self.random_supports,
            bias=self.bias,
        )
        reg = RegularizerConfig(
            kind=self.regularizer, mu=self.prox_mu,
            tau=self.moon_tau, moon_weight=self.moon_weight,
        )
        plans = [
            RoundPlan(
                round_index=r,
                local_steps=steps,
                batch=batch,
                corr_lr=self.corr_lr,
                cluster_lr=self.cluster_lr,
                cluster_lambda=self.cluster_lambda,
                experiment_seed=self.seed,
                normalized_scores=self.normalized_scores,
                regularizer=reg,
            )
            for r in range(1, self.rounds + 1)
        ]
        policy = None
        if self.strategy != "local_only":
            policy = AggregationPolicy(
                strategy=self.strategy,
                weighted=self.weighted,
                aggregate_encoder=self.aggregate_encoder,
                aggregate_centroids=self.aggregate_centroids,
                seed=self.seed,
            )
        _, _, g_head, g_cent, _ = run_rounds(
            states, plans, policy, head, centroids, [], self.normalized_scores
        )
        # fall back to the first client's model when a component stays local
        self.head_ = g_head if g_head is not None else states[0].head
        self.centroids_ = g_cent if g_cent is not None else states[0].centroids
        self.client_states_ = states
        self.n_features_in_ = input_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "head_"):
            raise NotFittedError("call fit before predict/transform/score")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        maps = check_feature_stack(X)
        return np.stack(
            [
                predict_mask(forward(self.head_, m), self.centroids_,
                             self.normalized_scores).labels
                for m in maps
            ]
        )

    def score(self, X, y) -> float:
        preds = self.predict(X)
        truths = check_mask_stack(y)
        pred_masks = check_mask_stack(list(preds), num_classes=self.num_classes)
        return miou(pred_masks, truths).miou
