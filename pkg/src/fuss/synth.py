"""Synthetic labeled pixel-feature scenes and client partitioning.

Scenes stand in for frozen-backbone feature extraction: every pixel's feature
vector is drawn from the generator of its ground-truth class, with optional
per-domain offsets to model site-specific distribution shift. Ground-truth
masks are carried along for evaluation only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DataError
from .tensors import FeatureMap, SegmentationMask

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassGenerator:
    """Per-class feature source: a unit mean direction plus isotropic spread."""

    mean: np.ndarray
    spread: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise ConfigurationError("class mean direction must be nonzero")
        mean = mean / norm
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        if self.spread < 0:
            raise ConfigurationError("spread must be nonnegative")


@dataclass(frozen=True)
class SyntheticScene:
    features: FeatureMap
    truth: SegmentationMask | None  # held out for evaluation; absent on unlabeled data
    domain_id: int = 0
    scene_id: str = ""
    dominant: int | None = None


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    mode: str = "dirichlet"  # dirichlet | silo
    alpha: float = 1.0
    seed: int = 0
    empty_client_policy: str = "resample"  # resample | accept
    max_resamples: int = 10

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be >= 1")
        if self.mode not in ("dirichlet", "silo"):
            raise ConfigurationError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet" and not self.alpha > 0:
            raise ConfigurationError("dirichlet alpha must be > 0")
        if self.empty_client_policy not in ("resample", "accept"):
            raise ConfigurationError(f"unknown empty-client policy {self.empty_client_policy!r}")


@dataclass(frozen=True)
class RegionLayout:
    """Assigns one class to every pixel of a scene.

    ``rects`` paints (row0, col0, row1, col1, class_id) rectangles in order,
    later entries winning; every pixel must end up covered. ``random_field``
    draws each pixel's class independently instead, which stresses clustering
    with maximally fragmented regions.
    """

    height: int
    width: int
    rects: tuple = ()
    random_field: bool = False
    class_weights: tuple = ()

    def render(self, num_classes: int, rng: np.random.Generator) -> np.ndarray:
        if self.height < 1 or self.width < 1:
            raise ConfigurationError("layout must have positive dimensions")
        if self.random_field:
            weights = np.asarray(
                self.class_weights if self.class_weights else [1.0] * num_classes,
                dtype=np.float64,
            )
            if weights.size != num_classes or weights.min() < 0 or weights.sum() == 0:
                raise ConfigurationError("bad class weights for random field layout")
            probs = weights / weights.sum()
            return rng.choice(num_classes, size=(self.height, self.width), p=probs)
        if not self.rects:
            raise ConfigurationError("empty layout: no rectangles and no random field")
        canvas = np.full((self.height, self.width), -1, dtype=np.int64)
        for r0, c0, r1, c1, cls in self.rects:
            if not (0 <= r0 < r1 <= self.height and 0 <= c0 < c1 <= self.width):
                raise ConfigurationError(f"rectangle {(r0, c0, r1, c1)} out of bounds")
            if not (0 <= cls < num_classes):
                raise ConfigurationError(f"rectangle class {cls} out of range")
            canvas[r0:r1, c0:c1] = cls
        if (canvas < 0).any():
            raise ConfigurationError("layout leaves pixels uncovered")
        return canvas


def make_class_generators(
    num_classes: int,
    dim: int,
    spread: float,
    seed: int,
    separability_ceiling: float = 0.1,
) -> list[ClassGenerator]:
    """Build one generator per class with pairwise mean cosines under the ceiling.

    Means are the first ``num_classes`` rows of a seeded random orthonormal
    basis, so pairwise cosines are exactly zero and any ceiling > 0 holds.
    """
    if num_classes > dim:
        raise ConfigurationError(f"cannot place {num_classes} orthogonal means in {dim} dims")
    if not 0 < separability_ceiling <= 1:
        raise ConfigurationError("separability ceiling must be in (0, 1]")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # fix sign convention for determinism
    return [ClassGenerator(mean=q[:, c], spread=spread) for c in range(num_classes)]


def generate_scene(
    generators: list[ClassGenerator],
    layout: RegionLayout,
    seed: int,
    domain_offset: np.ndarray | None = None,
    domain_id: int = 0,
    scene_id: str = "",
) -> SyntheticScene:
    """Render a labeled scene: per-pixel feature = class mean + noise * spread + offset."""
    if not generators:
        raise ConfigurationError("need at least one class generator")
    dim = generators[0].mean.shape[0]
    rng = np.random.default_rng(seed)
    labels = layout.render(len(generators), rng)
    means = np.stack([g.mean for g in generators])
    spreads = np.array([g.spread for g in generators])
    noise = rng.standard_normal((layout.height, layout.width, dim))
    feats = means[labels] + noise * spreads[labels][..., None]
    if domain_offset is not None:
        offset = np.asarray(domain_offset, dtype=np.float64)
        if offset.shape != (dim,):
            raise ConfigurationError(f"domain offset shape {offset.shape} != ({dim},)")
        feats = feats + offset
    return SyntheticScene(
        features=FeatureMap(feats),
        truth=SegmentationMask(labels, num_classes=len(generators)),
        domain_id=domain_id,
        scene_id=scene_id or f"scene-{seed}",
    )


def dominant_class(truth: SegmentationMask, class_map: dict[int, int] | None = None) -> int:
    """Most frequent coarse class over all pixels; ties go to the lowest id."""
    labels = truth.labels.ravel()
    if labels.size == 0:
        raise DataError("cannot compute dominant class of an empty mask")
    if class_map is None:
        mapped = labels
    else:
        missing = set(np.unique(labels)) - set(class_map)
        if missing:
            raise DataError(f"fine labels missing from class map: {sorted(missing)}")
        lut = np.full(int(labels.max()) + 1, -1, dtype=np.int64)
        for fine, coarse in class_map.items():
            if fine <= labels.max():
                lut[fine] = coarse
        mapped = lut[labels]
    counts = np.bincount(mapped)
    return int(np.argmax(counts))  # argmax returns the lowest index on ties


def tag_scenes(
    scenes: list[SyntheticScene], class_map: dict[int, int] | None = None
) -> list[SyntheticScene]:
    """Attach the dominant coarse class to each scene (required for Dirichlet splits)."""
    return [replace(s, dominant=dominant_class(s.truth, class_map)) for s in scenes]


def _draw_assignment(scenes, classes, spec, rng):
    assignment = np.empty(len(scenes), dtype=np.int64)
    for cls in sorted(set(classes)):
        idx = [i for i, c in enumerate(classes) if c == cls]
        probs = rng.dirichlet(np.full(spec.num_clients, spec.alpha))
        assignment[idx] = rng.choice(spec.num_clients, size=len(idx), p=probs)
    return assignment


def dirichlet_partition(
    scenes: list[SyntheticScene], spec: PartitionSpec
) -> list[list[SyntheticScene]]:
    """Skewable class-conditional split: per dominant class, a Dirichlet draw
    over clients decides where each scene of that class lands.

    A draw that leaves some client with zero scenes is redrawn up to
    ``spec.max_resamples`` times under the default policy, then accepted.
    """
    if spec.mode != "dirichlet":
        raise ConfigurationError("partition spec is not in dirichlet mode")
    if any(s.dominant is None for s in scenes):
        raise DataError("scenes must be tagged with a dominant class first")
    classes = [s.dominant for s in scenes]
    rng = np.random.default_rng(spec.seed)
    attempts = spec.max_resamples if spec.empty_client_policy == "resample" else 0
    assignment = _draw_assignment(scenes, classes, spec, rng)
    for attempt in range(attempts):
        occupied = np.unique(assignment)
        if occupied.size == spec.num_clients or len(scenes) < spec.num_clients:
            break
        logger.warning(
            "dirichlet partition left %d client(s) empty, resampling (%d/%d)",
            spec.num_clients - occupied.size, attempt + 1, attempts,
        )
        assignment = _draw_assignment(scenes, classes, spec, rng)
    else:
        if attempts and np.unique(assignment).size < spec.num_clients:
            logger.warning("accepting partition with empty clients after resampling")
    out = [[] for _ in range(spec.num_clients)]
    for scene, client in zip(scenes, assignment):
        out[client].append(scene)
    return out


def silo_partition(
    scenes: list[SyntheticScene], spec: PartitionSpec
) -> list[list[SyntheticScene]]:
    """Contiguous domain-to-client split: sorted domains are dealt out in order,
    num_domains / num_clients apiece, and a domain never straddles clients."""
    if spec.mode != "silo":
        raise ConfigurationError("partition spec is not in silo mode")
    domains = sorted({s.domain_id for s in scenes})
    if len(domains) % spec.num_clients != 0:
        raise ConfigurationError(
            f"{spec.num_clients} clients do not evenly divide {len(domains)} domains"
        )
    per_client = len(domains) // spec.num_clients
    owner = {d: i // per_client for i, d in enumerate(domains)}
    out = [[] for _ in range(spec.num_clients)]
    for scene in scenes:
        out[owner[scene.domain_id]].append(scene)
    return out


def partition(scenes: list[SyntheticScene], spec: PartitionSpec) -> list[list[SyntheticScene]]:
    if spec.mode == "dirichlet":
        return dirichlet_partition(scenes, spec)
    return silo_partition(scenes, spec)


def client_label_entropy(clients: list[list[SyntheticScene]]) -> float:
    """Mean over clients of the Shannon entropy of dominant-class frequencies."""
    entropies = []
    for scenes in clients:
        if not scenes:
            continue
        counts = np.bincount([s.dominant for s in scenes])
        probs = counts[counts > 0] / counts.sum()
        entropies.append(float(-(probs * np.log(probs)).sum()))
    return float(np.mean(entropies)) if entropies else 0.0


def scene_grid_layouts(
    height: int,
    width: int,
    num_classes: int,
    dominant_fraction: float = 0.7,
) -> list[RegionLayout]:
    """One rectangle layout per class where that class dominates the scene.

    The dominant class fills the top band of the scene and the remaining rows
    are split evenly among the other classes, so dominant-class tagging is
    unambiguous and every class appears in every scene.
    """
    if not 0.5 < dominant_fraction < 1.0:
        raise ConfigurationError("dominant fraction must be in (0.5, 1)")
    layouts = []
    band_top = max(1, math.ceil(height * dominant_fraction))
    rest = height - band_top
    for dom in range(num_classes):
        rects = [(0, 0, band_top, width, dom)]
        others = [c for c in range(num_classes) if c != dom]
        if rest > 0 and others:
            # split the leftover rows among the other classes by column bands
            edges = np.linspace(0, width, len(others) + 1).astype(int)
            for other, c0, c1 in zip(others, edges[:-1], edges[1:]):
                if c1 > c0:
                    rects.append((band_top, c0, height, c1, other))
        layouts.append(RegionLayout(height=height, width=width, rects=tuple(rects)))
    return layouts
