"""Declarative experiment configuration: schema validation, defaults with
provenance flags, and the resolved-config echo that reproduces a run.

Unknown keys are rejected outright. Defaults carry a provenance tag; values
that do not come from the published training recipe are listed under the
``provenance`` block of the resolved config so nobody mistakes them for
established hyperparameters.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigurationError

# provenance tags: "paper" for published recipe values, "artifact" for values
# this simulator had to invent (desk-scale sizes, unstated hyperparameters),
# "structural" for plumbing fields that are not hyperparameters at all
_P = "paper"
_A = "artifact"
_S = "structural"


def _field(default, provenance, check, desc=""):
    return {"default": default, "provenance": provenance, "check": check, "desc": desc}


def _is_type(*types):
    def check(v):
        return isinstance(v, types) and not isinstance(v, bool)

    return check


def _is_bool(v):
    return isinstance(v, bool)


def _is_str(*allowed):
    def check(v):
        return isinstance(v, str) and (not allowed or v in allowed)

    return check


def _positive(v):
    return _is_type(int, float)(v) and v > 0


def _nonneg(v):
    return _is_type(int, float)(v) and v >= 0


def _pos_int(v):
    return _is_type(int)(v) and v > 0


def _nonneg_int(v):
    return _is_type(int)(v) and v >= 0


SCHEMA: dict[str, dict[str, dict]] = {
    "": {
        "schema_version": _field(1, _S, lambda v: v == 1, "config document version"),
        "seed": _field(0, _S, _nonneg_int, "experiment master seed"),
    },
    "data": {
        "source": _field("synthetic", _S, _is_str("synthetic", "manifest")),
        "manifest": _field("", _S, _is_str(), "dataset manifest path when source=manifest"),
        "num_scenes": _field(48, _A, _pos_int),
        "height": _field(16, _A, _pos_int),
        "width": _field(16, _A, _pos_int),
        "feature_dim": _field(32, _A, _pos_int, "backbone feature dimension"),
        "num_classes": _field(4, _A, _pos_int, "ground-truth class count"),
        "spread": _field(0.05, _A, _nonneg),
        "separability_ceiling": _field(0.1, _A, _positive),
        "layout": _field("dominant", _A, _is_str("dominant", "random")),
        "dominant_fraction": _field(0.7, _A, _positive),
        "num_domains": _field(1, _A, _pos_int),
        "domain_offset_scale": _field(0.0, _A, _nonneg),
    },
    "data.partition": {
        "mode": _field("dirichlet", _A, _is_str("dirichlet", "silo")),
        "num_clients": _field(4, _A, _pos_int),
        "alpha": _field(0.5, _P, _positive, "Dirichlet concentration"),
        "empty_client_policy": _field("resample", _A, _is_str("resample", "accept")),
        "max_resamples": _field(10, _A, _nonneg_int),
    },
    "model": {
        "input_dim": _field(32, _A, _pos_int, "desk-scale stand-in for 768"),
        "hidden_dim": _field(0, _A, _nonneg_int, "0 means same as input_dim"),
        "output_dim": _field(8, _A, _pos_int, "desk-scale stand-in for 70"),
        "num_classes": _field(4, _A, _pos_int, "number of prototypes"),
        "normalized_scores": _field(False, _P, _is_bool, "cosine instead of inner product"),
    },
    "training": {
        "rounds": _field(10, _P, _nonneg_int, "global aggregation rounds"),
        "local_steps": _field(0, _A, _nonneg_int, "0 means auto (one epoch)"),
        "queries_per_step": _field(2, _A, _pos_int),
        "random_supports": _field(2, _A, _nonneg_int),
        "bias": _field(0.2, _A, _nonneg, "weak-correspondence cutoff"),
        "corr_lr": _field(5e-4, _P, _positive),
        "cluster_lr": _field(5e-3, _P, _positive),
        "lambda": _field(0.1, _A, _nonneg, "inter-cluster similarity weight"),
        "corr_reduction": _field("mean", _A, _is_str("mean", "sum")),
        "adam_beta1": _field(0.9, _A, _positive),
        "adam_beta2": _field(0.999, _A, _positive),
        "adam_eps": _field(1e-8, _A, _positive),
    },
    "aggregation": {
        "strategy": _field(
            "fedavg", _P,
            _is_str("fedavg", "fedcc_kmeans", "fedcc_maximin", "local_only"),
        ),
        "weighted": _field(True, _P, _is_bool),
        "aggregate_encoder": _field(True, _P, _is_bool),
        "aggregate_centroids": _field(True, _P, _is_bool),
        "pin_first_maximin": _field(False, _A, _is_bool),
    },
    "regularizer": {
        "kind": _field("none", _P, _is_str("none", "fedprox", "fedmoon")),
        "mu": _field(0.01, _A, _nonneg),
        "tau": _field(0.5, _A, _positive),
        "moon_weight": _field(1.0, _A, _nonneg),
    },
    "evaluation": {
        "num_scenes": _field(16, _A, _pos_int),
        "seed_offset": _field(7919, _A, _pos_int, "offsets the validation stream"),
    },
}

_SECTION_CHILDREN = {
    "": ["data", "model", "training", "aggregation", "regularizer", "evaluation"],
    "data": ["partition"],
}


def _section_dict(raw: dict, path: str, errors: list[str]) -> dict:
    fields = SCHEMA[path]
    children = _SECTION_CHILDREN.get(path, [])
    out: dict[str, Any] = {}
    for key, value in raw.items():
        if path == "" and key == "provenance":
            continue  # resolved configs carry this block; it is informational
        dotted = f"{path}.{key}" if path else key
        if key in children:
            if not isinstance(value, dict):
                errors.append(f"{dotted}: expected an object")
            continue
        if key not in fields:
            errors.append(f"{dotted}: unknown key")
            continue
        if not fields[key]["check"](value):
            errors.append(f"{dotted}: invalid value {value!r}")
            continue
        out[key] = value
    for key, spec in fields.items():
        out.setdefault(key, copy.deepcopy(spec["default"]))
    for child in children:
        child_path = f"{path}.{child}" if path else child
        child_raw = raw.get(child, {})
        out[child] = _section_dict(
            child_raw if isinstance(child_raw, dict) else {}, child_path, errors
        )
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully resolved experiment description."""

    values: dict

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config root must be a JSON object")
        errors: list[str] = []
        resolved = _section_dict(raw, "", errors)
        _cross_validate(resolved, errors)
        if errors:
            raise ConfigurationError("invalid config:\n  " + "\n  ".join(errors))
        return ExperimentConfig(values=resolved)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        return ExperimentConfig.from_dict(raw)

    def __getitem__(self, key: str):
        node: Any = self.values
        for part in key.split("."):
            node = node[part]
        return node

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Return a new config with dotted-key overrides applied and revalidated."""
        raw = copy.deepcopy(self.values)
        for dotted, value in overrides.items():
            node = raw
            parts = dotted.split(".")
            for part in parts[:-1]:
                node = node[part]
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(raw)

    def resolved(self) -> dict:
        """Config echo with every default materialized plus the provenance block."""
        out = copy.deepcopy(self.values)
        non_paper: dict[str, Any] = {}
        for path, fields in SCHEMA.items():
            for key, spec in fields.items():
                if spec["provenance"] == _A:
                    dotted = f"{path}.{key}" if path else key
                    non_paper[dotted] = self[dotted]
        out["provenance"] = {
            "non_paper_defaults": dict(sorted(non_paper.items())),
            "note": "values listed here are artifact choices, not published settings",
        }
        return out


def _cross_validate(cfg: dict, errors: list[str]) -> None:
    model = cfg["model"]
    data = cfg["data"]
    training = cfg["training"]
    if data["source"] == "synthetic" and model["input_dim"] != data["feature_dim"]:
        errors.append(
            f"model.input_dim ({model['input_dim']}) must equal "
            f"data.feature_dim ({data['feature_dim']})"
        )
    if data["source"] == "manifest" and not data["manifest"]:
        errors.append("data.manifest: required when data.source is 'manifest'")
    hidden = model["hidden_dim"] or model["input_dim"]
    if model["output_dim"] >= model["input_dim"]:
        errors.append(
            f"model.output_dim ({model['output_dim']}) must be smaller than "
            f"model.input_dim ({model['input_dim']})"
        )
    if hidden < 1:
        errors.append("model.hidden_dim must be positive after resolution")
    if data["source"] == "synthetic" and data["num_classes"] > data["feature_dim"]:
        errors.append("data.num_classes cannot exceed data.feature_dim")
    if not 0.5 < data["dominant_fraction"] < 1.0:
        errors.append("data.dominant_fraction must be in (0.5, 1)")
    if training["bias"] > 1.0:
        errors.append("training.bias must lie in [0, 1]")
    agg = cfg["aggregation"]
    if agg["strategy"] != "local_only":
        if not (agg["aggregate_encoder"] or agg["aggregate_centroids"]):
            errors.append(
                "aggregation: enable encoder or centroid aggregation, "
                "or use strategy 'local_only'"
            )


def effective_hidden_dim(cfg: ExperimentConfig) -> int:
    return cfg["model.hidden_dim"] or cfg["model.input_dim"]


def effective_local_steps(cfg: ExperimentConfig, client_sizes: list[int]) -> int:
    """Resolve auto local steps: enough steps for the largest client's epoch."""
    queries = cfg["training.queries_per_step"]
    need = max(-(-size // queries) for size in client_sizes) if client_sizes else 1
    configured = cfg["training.local_steps"]
    if configured == 0:
        return need
    if configured < need:
        raise ConfigurationError(
            f"training.local_steps={configured} is below a full epoch "
            f"({need} steps) for the largest client"
        )
    return configured
