"""On-disk interchange: scene datasets, partition manifests, and the client
update wire format (JSON manifests plus portable tensor files)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .aggregation import ClientUpdate
from .clustering import CentroidMatrix
from .errors import DataError
from .head import HeadParams
from .synth import SyntheticScene
from .tensor_io import DTYPE_FLOAT32, DTYPE_INT32, read_tensor, write_tensor
from .tensors import FeatureMap, SegmentationMask

DATASET_MANIFEST = "dataset.json"
UPDATE_MANIFEST = "update.json"


def save_scene(scene: SyntheticScene, out_dir: Path, stem: str) -> dict:
    """Write one scene's feature and mask files; returns its manifest entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_file = f"{stem}.features.fuss"
    write_tensor(out_dir / feature_file, scene.features.data, DTYPE_FLOAT32)
    entry = {
        "scene_id": scene.scene_id,
        "features": feature_file,
        "domain_id": scene.domain_id,
    }
    if scene.truth is not None:
        mask_file = f"{stem}.mask.fuss"
        write_tensor(out_dir / mask_file, scene.truth.labels, DTYPE_INT32)
        entry["mask"] = mask_file
    return entry


def save_dataset(scenes: list[SyntheticScene], out_dir) -> Path:
    """Write every scene plus a dataset manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    entries = [save_scene(s, out_dir, f"scene-{i:05d}") for i, s in enumerate(scenes)]
    num_classes = max(
        (s.truth.num_classes for s in scenes if s.truth is not None), default=0
    )
    manifest = {
        "schema_version": 1,
        "num_classes": num_classes,
        "scenes": entries,
    }
    path = out_dir / DATASET_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(manifest_path) -> list[SyntheticScene]:
    """Read a dataset manifest back into scenes; masks are optional."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    entries = manifest.get("scenes")
    if not isinstance(entries, list) or not entries:
        raise DataError(f"{manifest_path}: manifest lists no scenes")
    declared = int(manifest.get("num_classes", 0))
    scenes = []
    for i, entry in enumerate(entries):
        features = read_tensor(base / entry["features"]).astype(np.float64)
        if features.ndim != 3:
            raise DataError(f"{entry['features']}: feature tensor must be rank 3")
        truth = None
        if entry.get("mask"):
            labels = read_tensor(base / entry["mask"])
            if labels.shape != features.shape[:2]:
                raise DataError(
                    f"{entry['mask']}: mask shape {labels.shape} does not match "
                    f"feature grid {features.shape[:2]}"
                )
            num_classes = max(declared, int(labels.max()) + 1)
            truth = SegmentationMask(labels, num_classes=num_classes)
        scenes.append(
            SyntheticScene(
                features=FeatureMap(features),
                truth=truth,
                domain_id=int(entry.get("domain_id", 0)),
                scene_id=str(entry.get("scene_id", f"scene-{i:05d}")),
            )
        )
    # masks in one dataset must agree on the label space
    num_classes = max((s.truth.num_classes for s in scenes if s.truth), default=0)
    if num_classes:
        scenes = [
            SyntheticScene(
                features=s.features,
                truth=SegmentationMask(s.truth.labels, num_classes) if s.truth else None,
                domain_id=s.domain_id,
                scene_id=s.scene_id,
                dominant=s.dominant,
            )
            for s in scenes
        ]
    return scenes


def save_partition_manifest(clients: list[list[SyntheticScene]], paths: dict[str, str], out_path) -> None:
    """Client id to scene-file mapping, for audit and external tooling."""
    payload = {
        str(cid): [paths[s.scene_id] for s in scenes]
        for cid, scenes in enumerate(clients)
    }
    Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def save_head_params(head: HeadParams, out_dir: Path, prefix: str) -> dict:
    files = {}
    for name, arr in head.as_dict().items():
        fname = f"{prefix}.{name}.fuss"
        write_tensor(Path(out_dir) / fname, arr, DTYPE_FLOAT32)
        files[name] = fname
    return files


def load_head_params(base: Path, files: dict) -> HeadParams:
    tensors = {
        name: read_tensor(Path(base) / fname).astype(np.float64)
        for name, fname in files.items()
    }
    return HeadParams.from_dict(tensors)


def save_client_update(update: ClientUpdate, out_dir) -> Path:
    """Serialize one client update: tensor files plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    head_files = save_head_params(update.head, out_dir, "head")
    write_tensor(out_dir / "centroids.fuss", update.centroids.rows, DTYPE_FLOAT32)
    manifest = {
        "schema_version": 1,
        "client_id": update.client_id,
        "sample_count": update.sample_count,
        "head": head_files,
        "centroids": "centroids.fuss",
    }
    path = out_dir / UPDATE_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_client_update(manifest_path) -> ClientUpdate:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    head = load_head_params(base, manifest["head"])
    rows = read_tensor(base / manifest["centroids"]).astype(np.float64)
    return ClientUpdate(
        client_id=int(manifest["client_id"]),
        head=head,
        centroids=CentroidMatrix(rows),
        sample_count=int(manifest["sample_count"]),
    )
