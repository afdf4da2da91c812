"""Audio-event classification and audio/EEG cross-modal retrieval.

The library covers the full experiment: a synthetic paired corpus with the
real data geometry, PCA + SVM/softmax classification of audio, EEG and
fused features, CCA/DCCA/C-DCCA shared-space learning, and MRR1/MAP
retrieval sweeps.  See the ``audioeeg`` console script for the staged CLI.
"""

from .classifiers import (
    ConfusionMatrix,
    KernelSpec,
    SoftmaxConfig,
    SoftmaxModel,
    SvmConfig,
    SvmModel,
    evaluate,
    predict,
    smo_solve,
    softmax_fit,
    svm_fit,
)
from .corr import (
    CcaModel,
    DccaConfig,
    EncoderStack,
    SharedSpace,
    cca_fit,
    cca_project,
    dcca_fit,
    dcca_loss_grad,
    expand_category_pairs,
)
from .dataset import (
    DatasetManifest,
    FeatureSet,
    FoldPlan,
    GenConfig,
    build_manifest,
    generate_synthetic,
    load_features,
    split,
    stratified_folds,
    write_features,
)
from .errors import ConfigurationError, DataFormatError, NumericalError
from .linalg import PcaModel, inv_sqrt_sym, pca_fit, pca_transform, sample_cov
from .pipeline import ExperimentConfig, ReportBundle, derive_seed, make_report, run_pipeline
from .retrieval import (
    FoldRetrievalData,
    RankedList,
    RetrievalReport,
    map_score,
    mrr1,
    rank_gallery,
    similarity_scores,
    sweep_components,
)

__version__ = "0.1.0"

__all__ = [
    "CcaModel", "ConfigurationError", "ConfusionMatrix", "DataFormatError",
    "DatasetManifest", "DccaConfig", "EncoderStack", "ExperimentConfig",
    "FeatureSet", "FoldPlan", "FoldRetrievalData", "GenConfig", "KernelSpec",
    "NumericalError", "PcaModel", "RankedList", "ReportBundle",
    "RetrievalReport", "SharedSpace", "SoftmaxConfig", "SoftmaxModel",
    "SvmConfig", "SvmModel", "build_manifest", "cca_fit", "cca_project",
    "dcca_fit", "dcca_loss_grad", "derive_seed", "evaluate",
    "expand_category_pairs", "generate_synthetic", "inv_sqrt_sym",
    "load_features", "make_report", "map_score", "mrr1", "pca_fit",
    "pca_transform", "predict", "rank_gallery", "run_pipeline", "sample_cov",
    "similarity_scores", "smo_solve", "softmax_fit", "split",
    "stratified_folds", "svm_fit", "sweep_components", "write_features",
    "__version__",
]
