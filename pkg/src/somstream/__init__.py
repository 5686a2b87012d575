"""Self-organizing maps for multi-label stream classification with infinitely delayed labels."""

from .core import (
    ConfigError,
    DataError,
    DatasetMeta,
    Instance,
    LabelCardinality,
    ParseError,
    UsageError,
    batch_label_cardinality,
    discriminant,
    euclidean_distance,
    scale_features,
)
from .evaluation import macro_f, run_frozen_baseline, windowed_evaluate
from .offline import Model, load_model, save_model, train_offline
from .online import OnlineState, process_stream
from .som import BatchTrainConfig, SomGrid
from .streams import SphericalStreamConfig, generate_spherical, load_delimited, split_offline

__version__ = "0.1.0"

__all__ = [
    "BatchTrainConfig", "ConfigError", "DataError", "DatasetMeta", "Instance", "LabelCardinality", "Model",
    "OnlineState", "ParseError", "SomGrid", "SphericalStreamConfig", "UsageError", "batch_label_cardinality",
    "discriminant", "euclidean_distance", "generate_spherical", "load_delimited", "load_model", "macro_f",
    "process_stream", "run_frozen_baseline", "save_model", "scale_features", "split_offline", "train_offline",
    "windowed_evaluate",
]
