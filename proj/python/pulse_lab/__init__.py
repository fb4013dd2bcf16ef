"""Python access to the PULSE C++ core."""

import json as _json

from . import _pulse
from ._pulse import (
    ConfigError,
    Error,
    ParameterError,
    ProtocolError,
    adamw_trajectory,
    build_dataset,
    drift,
    fit_probe,
    integrate,
    load_dataset,
    one_cycle_lr,
    parameter_grid,
)

__all__ = [
    "ConfigError",
    "Error",
    "ParameterError",
    "ProtocolError",
    "adamw_trajectory",
    "build_dataset",
    "compute_metrics",
    "drift",
    "fit_probe",
    "integrate",
    "linear_probe",
    "load_dataset",
    "one_cycle_lr",
    "parameter_grid",
    "semi_supervised",
    "verify_theorem",
]


def verify_theorem(w_max):
    """Exhaustive shared-set verification report as a dict."""
    return _json.loads(_pulse.verify_theorem(w_max))


def compute_metrics(scores, labels):
    """Accuracy, macro AUROC and macro AUPRC for class scores [N, S]."""
    return _json.loads(_pulse.compute_metrics(scores, labels))


def linear_probe(x, labels, splits):
    """Fit on rows tagged "train", report on rows tagged "test"."""
    return _json.loads(_pulse.linear_probe(x, labels, splits))


def semi_supervised(x, labels, splits, fraction, n_subsets=5, seed=0):
    """Probe trained on uniform label subsets of the train rows."""
    return _json.loads(_pulse.semi_supervised(x, labels, splits, fraction, n_subsets, seed))
