"""amprul: battery remaining-useful-life estimation from measurable signals.

The package is organized as a pipeline of small modules:

- ``ingest``: parse and validate raw cycling CSVs into cell series.
- ``simulate``: synthesize fleets of fading cells with known ground truth.
- ``labeling``: coulomb-counted capacity, SOH, and remaining-Ah targets.
- ``features``: uniform resampling, normalization, and moving windows.
- ``neural``: numpy-only dense/LSTM/autoencoder layers with hand-derived
  gradients and an Adam optimizer.
- ``pipeline``: two-stage training, evaluation, streaming prediction, and
  single-file checkpoints.
- ``cli``: the ``amprul`` command chaining the stages.
"""

from .errors import AmprulError
from .ingest import CellSeries, Manifest, ManifestEntry, load_manifest, parse_cell_csv, save_manifest, write_cell_csv
from .labeling import LabelRecord, LabeledCell, label_cell, read_labels_jsonl, write_labels_jsonl
from .features import FeatureFrame, NormStats, WindowSet, fit_normalizer, make_windows, resample_uniform
from .pipeline import (
    EvalReport,
    ModelBundle,
    OnlinePredictor,
    TrainConfig,
    evaluate,
    fit_pipeline,
    load_bundle,
    predict_online,
    predict_windows,
    save_bundle,
)
from .simulate import Profile, SimConfig, simulate_cell, simulate_fleet

__version__ = "0.1.0"

__all__ = [
    "AmprulError",
    "CellSeries",
    "EvalReport",
    "FeatureFrame",
    "LabelRecord",
    "LabeledCell",
    "Manifest",
    "ManifestEntry",
    "ModelBundle",
    "NormStats",
    "OnlinePredictor",
    "Profile",
    "SimConfig",
    "TrainConfig",
    "WindowSet",
    "evaluate",
    "fit_pipeline",
    "fit_normalizer",
    "label_cell",
    "load_bundle",
    "load_manifest",
    "make_windows",
    "parse_cell_csv",
    "predict_online",
    "predict_windows",
    "read_labels_jsonl",
    "resample_uniform",
    "save_bundle",
    "save_manifest",
    "simulate_cell",
    "simulate_fleet",
    "write_cell_csv",
    "write_labels_jsonl",
    "__version__",
]
