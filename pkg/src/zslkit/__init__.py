"""Zero-shot attribute classification toolkit: a semantic-feedback network
over precomputed visual features plus a transductive ensemble co-training
algorithm, with deterministic training, evaluation, and report emission."""

__version__ = "0.1.0"

from .attribute_space import (
    CorrelationMatrix,
    PrototypeSet,
    cosine_similarity,
    latent_prototypes_seen,
    latent_prototypes_unseen,
    predict_combined,
    predict_latent,
    ridge_correlation,
)
from .dataset_io import (
    ClassAttributeTable,
    FeatureDataset,
    SplitSpec,
    SynthSpec,
    gen_synthetic,
    load_attributes,
    load_features,
    load_split,
    normalize_attributes,
    validate_bundle,
)
from .ect import EctConfig, PseudoLabelSet, run_ect
from .evaluate import EvalReport, confusion_matrix, mean_per_class_top1, project_2d
from .network import (
    SemanticFeedbackNetwork,
    TrainConfig,
    apply_feedback,
    load_model,
    predict_batch,
    save_model,
    train,
)
from .regressors import (
    LinearAttributeMap,
    fit_bayes_ridge,
    fit_lasso,
    fit_ridge_cv,
    predict_attributes,
)

__all__ = [
    "ClassAttributeTable",
    "CorrelationMatrix",
    "EctConfig",
    "EvalReport",
    "FeatureDataset",
    "LinearAttributeMap",
    "PrototypeSet",
    "PseudoLabelSet",
    "SemanticFeedbackNetwork",
    "SplitSpec",
    "SynthSpec",
    "TrainConfig",
    "apply_feedback",
    "confusion_matrix",
    "cosine_similarity",
    "fit_bayes_ridge",
    "fit_lasso",
    "fit_ridge_cv",
    "gen_synthetic",
    "latent_prototypes_seen",
    "latent_prototypes_unseen",
    "load_attributes",
    "load_features",
    "load_model",
    "load_split",
    "mean_per_class_top1",
    "normalize_attributes",
    "predict_attributes",
    "predict_batch",
    "predict_combined",
    "predict_latent",
    "project_2d",
    "ridge_correlation",
    "run_ect",
    "save_model",
    "train",
    "validate_bundle",
]
