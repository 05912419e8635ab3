"""Click-through-rate models for promoted search listings.

FTRL-Proximal logistic regression over hashed content features and
Beta-smoothed historical rates, a stacked ensemble keyed on impression
counts, and a progressive-validation pipeline over synthetic click logs.

Set ``CTRSTACK_DISABLE_NUMBA=1`` before import to force the pure numpy
kernels.
"""

from ._accel import backend
from .ensemble import PartitionConfig, partition, predict_ensemble, train_ensemble
from .errors import ConfigError, DataError
from .features import (ContentConfig, HashConfig, ListingRecord, MultimodalEmbedding,
                       build_content_features, build_historical_features,
                       ensemble_impression_feature, hash_text, tokenize)
from .learner import FtrlHyperparams, FtrlModel, train
from .logs import ClickLog
from .metrics import (EvalReport, MetricAccumulator, auc, avg_log_loss, evaluate,
                      normalized_cross_entropy)
from .pipeline import (CalibrationParams, WindowConfig, calibrate, run_experiment,
                       subsample_negatives)
from .smoothing import PeriodAggregate, SmoothingPrior, fit_prior, smoothed_rate, update_prior
from .sparse import FeatureBatch, SparseVector
from .synthetic import SyntheticSpec, generate_synthetic_logs
from .variants import ModelBundle, VariantSpec, default_variants, train_variant

__version__ = "0.1.0"

__all__ = [
    "CalibrationParams", "ClickLog", "ConfigError", "ContentConfig", "DataError", "EvalReport",
    "FeatureBatch", "FtrlHyperparams", "FtrlModel", "HashConfig", "ListingRecord",
    "MetricAccumulator", "ModelBundle", "MultimodalEmbedding", "PartitionConfig",
    "PeriodAggregate", "SmoothingPrior", "SparseVector", "SyntheticSpec", "VariantSpec",
    "WindowConfig", "auc", "avg_log_loss", "backend", "build_content_features",
    "build_historical_features", "calibrate", "default_variants", "ensemble_impression_feature",
    "evaluate", "fit_prior", "generate_synthetic_logs", "hash_text", "normalized_cross_entropy",
    "partition", "predict_ensemble", "run_experiment", "smoothed_rate", "subsample_negatives",
    "tokenize", "train", "train_ensemble", "train_variant", "update_prior",
]
