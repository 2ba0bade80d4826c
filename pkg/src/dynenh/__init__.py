"""Per-image enhancement kernels learned jointly with a classifier."""

from .autonet import Conv, Fc, Flatten, MaxPool, Net, ParamBlocks, Relu, SgdConfig, SgdOptimizer
from .classify import ClassNetConfig, accuracy, build_class_net, mean_average_precision
from .dynfilter import (
    FILTER_SIZES,
    DynamicFilter,
    EnhanceNetConfig,
    apply_filter,
    build_enhance_net,
    generate_filter,
    identity_filter,
    init_identity,
    paper_scale_config,
)
from .enhance import METHODS, EnhanceMethod, EnhanceParams, make_all_targets, make_target
from .estimators import (
    ClassicalEnhancer,
    MultiFilterClassifier,
    RgbClassifier,
    SingleFilterClassifier,
    StaticFilterClassifier,
)
from .imgcore import luminance, mse, psnr, read_image, rgb_to_ycbcr, write_image, ycbcr_to_rgb
from .pipeline import (
    StaticFilterBank,
    StreamWeights,
    TrainConfig,
    TrainItem,
    compute_weights_from_mse,
    derive_static_filters,
    equal_weights,
    fused_predict,
    train_approach1,
    train_baseline,
    train_dyn,
    train_stat,
)

__version__ = "0.1.0"

__all__ = [
    "Conv", "Fc", "Flatten", "MaxPool", "Net", "ParamBlocks", "Relu",
    "SgdConfig", "SgdOptimizer",
    "ClassNetConfig", "accuracy", "build_class_net", "mean_average_precision",
    "FILTER_SIZES", "DynamicFilter", "EnhanceNetConfig", "apply_filter",
    "build_enhance_net", "generate_filter", "identity_filter", "init_identity",
    "paper_scale_config",
    "METHODS", "EnhanceMethod", "EnhanceParams", "make_all_targets", "make_target",
    "ClassicalEnhancer", "MultiFilterClassifier", "RgbClassifier",
    "SingleFilterClassifier", "StaticFilterClassifier",
    "luminance", "mse", "psnr", "read_image", "rgb_to_ycbcr", "write_image",
    "ycbcr_to_rgb",
    "StaticFilterBank", "StreamWeights", "TrainConfig", "TrainItem",
    "compute_weights_from_mse", "derive_static_filters", "equal_weights",
    "fused_predict", "train_approach1", "train_baseline", "train_dyn", "train_stat",
    "__version__",
]
