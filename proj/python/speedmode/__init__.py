"""Speed-only transportation mode detection.

Thin Python layer over the C++ core: preprocessing helpers, window
segmentation, model inference, the rule baseline and evaluation metrics.
Training runs through the command line (``python -m speedmode train ...``).
"""

from ._speedmode import (
    MODES,
    DataError,
    Model,
    NumericError,
    __version__,
    base_config,
    classify_rules,
    count_parameters,
    cv_summary,
    derive_speeds,
    harmonize_label,
    haversine_distance,
    legacy_config,
    metrics,
    privacy_report,
    read_windows,
    rule_thresholds,
    run_cli,
    segment_windows,
    synth_trips,
    window_features,
)

__all__ = [
    "MODES",
    "DataError",
    "Model",
    "NumericError",
    "__version__",
    "base_config",
    "classify_rules",
    "count_parameters",
    "cv_summary",
    "derive_speeds",
    "harmonize_label",
    "haversine_distance",
    "legacy_config",
    "metrics",
    "privacy_report",
    "read_windows",
    "rule_thresholds",
    "run_cli",
    "segment_windows",
    "synth_trips",
    "window_features",
]
