"""fundusml: curation, class-imbalance, and evaluation toolkit for
multi-label fundus image classification."""

from .manifest import (
    DEFAULT_CATALOG,
    DatasetManifest,
    LabelCatalog,
    PredictionMatrix,
    SampleRecord,
    label_counts,
    load_manifest,
    load_predictions,
    save_manifest,
    save_predictions,
)

__all__ = [
    "DEFAULT_CATALOG",
    "DatasetManifest",
    "LabelCatalog",
    "PredictionMatrix",
    "SampleRecord",
    "label_counts",
    "load_manifest",
    "load_predictions",
    "save_manifest",
    "save_predictions",
]

__version__ = "0.1.0"
