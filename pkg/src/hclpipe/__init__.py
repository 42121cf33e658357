"""Consensus-plus-human-correction labeling and risk-consistent linear probing."""

from .annotation import (
    AnnotationRun,
    AnnotationSet,
    AnnotationStats,
    ConsensusPolicy,
    CorrectionQueue,
    annotation_stats,
    apply_correction,
    baseline_view,
    build_queue,
    corrected_accuracy_identity,
    detect_consensus,
)
from .domain import (
    ClassSpace,
    Dataset,
    HclRecord,
    LinearModel,
    Sample,
    logits,
    logits_batch,
    validate_dataset,
)
from .estimator import (
    BlendConfig,
    DiscreteJoint,
    blend,
    empirical_hcl_risk,
    loss,
    loss_grad,
    oracle_decomposition,
    oracle_risk_rewrite,
    p_model,
    p_similarity,
    random_joint,
)
from .simulator import (
    AnnotatorModel,
    CorrectorModel,
    CorrelatedAnnotatorPair,
    GeneratorConfig,
    annotate,
    calibrate_to_table1,
    generate_dataset,
)
from .trainer import (
    HclLinearClassifier,
    TrainConfig,
    TrainReport,
    evaluate,
    lambda_sweep,
    train_baseline,
    train_hcl,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationRun",
    "AnnotationSet",
    "AnnotationStats",
    "AnnotatorModel",
    "BlendConfig",
    "ClassSpace",
    "ConsensusPolicy",
    "CorrectionQueue",
    "CorrectorModel",
    "CorrelatedAnnotatorPair",
    "Dataset",
    "DiscreteJoint",
    "GeneratorConfig",
    "HclLinearClassifier",
    "HclRecord",
    "LinearModel",
    "Sample",
    "TrainConfig",
    "TrainReport",
    "annotate",
    "annotation_stats",
    "apply_correction",
    "baseline_view",
    "blend",
    "build_queue",
    "calibrate_to_table1",
    "corrected_accuracy_identity",
    "detect_consensus",
    "empirical_hcl_risk",
    "evaluate",
    "generate_dataset",
    "lambda_sweep",
    "logits",
    "logits_batch",
    "loss",
    "loss_grad",
    "oracle_decomposition",
    "oracle_risk_rewrite",
    "p_model",
    "p_similarity",
    "random_joint",
    "train_baseline",
    "train_hcl",
    "validate_dataset",
]
