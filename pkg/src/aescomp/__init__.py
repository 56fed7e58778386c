"""Training-free image aesthetics assessment.

Composite deep features (global, local, scene views) from pretrained
backbones, classified high/low by an RBF-kernel SVM trained with a
from-scratch SMO solver.
"""

from .backbone import (
    Backbone,
    BackboneDescriptor,
    FeatureLayer,
    FeatureVector,
    extract_features,
    load_backbone,
    load_registry,
    make_stub_backbone,
)
from .composer import CompositeFeature, ViewBackbones, ViewSet, compose, featurize_image
from .dataset import (
    DatasetManifest,
    Label,
    Sample,
    Split,
    binarize_score,
    dataset_stats,
    parse_manifest,
    split_balanced,
)
from .errors import AescompError
from .evalharness import EvalReport, ExperimentConfig, ablation_run, cross_dataset, evaluate
from .imageprep import (
    CropSpec,
    PreprocessConfig,
    RawImage,
    ViewKind,
    center_crop,
    load_image,
    prepare_view,
    resize_bilinear,
    to_tensor,
)
from .store import FeatureCache, load_model, save_model
from .svm import (
    KernelParams,
    SmoConfig,
    SvmModel,
    decision_value,
    default_gamma,
    predict,
    rbf,
    train_smo,
)

__version__ = "0.1.0"
