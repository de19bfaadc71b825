from .classifiers import (
    ClassifierSpec,
    bdcspn_predict,
    bdcspn_rectify,
    compute_prototypes,
    finetune_fit,
    finetune_fit_predict,
    make_predictor,
    protonet_predict,
    softmax_xent,
)
from .embeddings import EmbeddingStore, load_embeddings, save_embeddings
from .report import EvalReport, TaskResult, evaluate_testbed, rolling_correlation

__all__ = [
    "ClassifierSpec",
    "EmbeddingStore",
    "EvalReport",
    "TaskResult",
    "bdcspn_predict",
    "bdcspn_rectify",
    "compute_prototypes",
    "evaluate_testbed",
    "finetune_fit",
    "finetune_fit_predict",
    "load_embeddings",
    "make_predictor",
    "protonet_predict",
    "rolling_correlation",
    "save_embeddings",
    "softmax_xent",
]
