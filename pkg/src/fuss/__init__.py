"""Desk-scale simulator for federated unsupervised semantic segmentation."""

from .aggregation import (
    AggregationPolicy,
    ClientUpdate,
    aggregate,
    fedavg_centroids,
    fedavg_heads,
    fedcc_kmeans,
    fedcc_maximin,
    kmeans,
    maximin_select,
    pool_centroids,
)
from .clustering import (
    CentroidMatrix,
    assign,
    centroid_step,
    cluster_loss,
    cluster_loss_grad,
    init_centroids,
    predict_mask,
    score,
)
from .config import ExperimentConfig
from .errors import ConfigurationError, DataError, FussError, ProtocolError
from .estimators import FederatedFussSegmenter, FussSegmenter
from .evaluation import (
    DiscriminabilityReport,
    IouReport,
    SignificanceReport,
    confusion,
    discriminability,
    hungarian_match,
    miou,
    paired_ttest,
    wilcoxon_signed_rank,
)
from .federation import (
    ClientState,
    RoundPlan,
    RunReport,
    build_initial_model,
    evaluate_model,
    local_round,
)
from .head import (
    AdamState,
    BatchSpec,
    HeadParams,
    adam_step,
    corr_loss,
    corr_loss_and_grad,
    forward,
    init_head_params,
    select_supports,
)
from .regularizers import RegularizerConfig, fedmoon_term, fedprox_term
from .runner import centralized_baseline, centralized_config, run_federation
from .synth import (
    ClassGenerator,
    PartitionSpec,
    RegionLayout,
    SyntheticScene,
    dirichlet_partition,
    dominant_class,
    generate_scene,
    make_class_generators,
    silo_partition,
    tag_scenes,
)
from .tensor_io import read_tensor, write_tensor
from .tensors import (
    FeatureMap,
    SegmentationMask,
    SimilarityTensor,
    cosine_similarity,
    flatten,
    similarity_tensor,
    unflatten,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AggregationPolicy", "BatchSpec", "CentroidMatrix",
    "ClassGenerator", "ClientState", "ClientUpdate", "ConfigurationError",
    "DataError", "DiscriminabilityReport", "ExperimentConfig", "FeatureMap",
    "FederatedFussSegmenter", "FussError", "FussSegmenter", "HeadParams",
    "IouReport", "PartitionSpec", "ProtocolError", "RegionLayout",
    "RegularizerConfig", "RoundPlan", "RunReport", "SegmentationMask",
    "SignificanceReport", "SimilarityTensor", "SyntheticScene",
    "adam_step", "aggregate", "assign", "build_initial_model",
    "centralized_baseline", "centralized_config", "centroid_step",
    "cluster_loss", "cluster_loss_grad", "confusion", "corr_loss",
    "corr_loss_and_grad", "cosine_similarity", "dirichlet_partition",
    "discriminability", "dominant_class", "evaluate_model",
    "fedavg_centroids", "fedavg_heads", "fedcc_kmeans", "fedcc_maximin",
    "fedmoon_term", "fedprox_term", "flatten", "forward", "generate_scene",
    "hungarian_match", "init_centroids", "init_head_params", "kmeans",
    "local_round", "make_class_generators", "maximin_select", "miou",
    "paired_ttest", "pool_centroids", "predict_mask", "read_tensor",
    "run_federation", "score", "select_supports", "silo_partition",
    "similarity_tensor", "tag_scenes", "unflatten", "wilcoxon_signed_rank",
    "write_tensor",
]
