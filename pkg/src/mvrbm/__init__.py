"""Mixed-variate restricted Boltzmann machines.

Heterogeneous visible units (binary, gaussian, categorical, constrained
poisson, replicated softmax) over one binary hidden layer, trained by
contrastive divergence with optional group-sparsity and symmetric-KL
metric regularizers.  Includes exact small-model oracles, latent-space
inference, and retrieval/clustering analytics.
"""

from .schema import (
    Binary,
    Categorical,
    ConstrainedPoisson,
    Gaussian,
    MixedRecord,
    ReplicatedSoftmax,
    VisibleSchema,
)
from .model import (
    ModelParams,
    energy,
    hidden_conditional,
    init_params,
    sample_hidden,
    sample_visible,
    visible_conditional,
)
from .training import (
    FitResult,
    Gradient,
    TrainConfig,
    cd_gradient,
    fit,
    metric_gradient,
    sparsity_gradient,
    sparsity_penalty,
    symmetric_kl,
)
from .inference import LatentProfile, PredictionRanking, predict_unseen, project, reconstruct
from .oracle import (
    TinyModelBound,
    exact_gradient,
    exact_log_likelihood,
    exact_log_partition,
    hybrid_objectives,
)
from .analytics import (
    RetrievalResult,
    hamming_kmeans,
    jaccard,
    map_at_k,
    ndcg_at_k,
    rand_index,
    rank_by_distance,
)
from .synth import SyntheticSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Binary",
    "Categorical",
    "ConstrainedPoisson",
    "FitResult",
    "Gaussian",
    "Gradient",
    "LatentProfile",
    "MixedRecord",
    "ModelParams",
    "PredictionRanking",
    "ReplicatedSoftmax",
    "RetrievalResult",
    "SyntheticSpec",
    "TinyModelBound",
    "TrainConfig",
    "VisibleSchema",
    "cd_gradient",
    "energy",
    "exact_gradient",
    "exact_log_likelihood",
    "exact_log_partition",
    "fit",
    "generate",
    "hamming_kmeans",
    "hidden_conditional",
    "hybrid_objectives",
    "init_params",
    "jaccard",
    "map_at_k",
    "metric_gradient",
    "ndcg_at_k",
    "predict_unseen",
    "project",
    "rand_index",
    "rank_by_distance",
    "reconstruct",
    "sample_hidden",
    "sample_visible",
    "sparsity_gradient",
    "sparsity_penalty",
    "symmetric_kl",
    "visible_conditional",
]
