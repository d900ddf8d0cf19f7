"""Global structure from motion on star reconstructions."""

import json
import os

from . import _core
from ._core import (
    ConfigError,
    FormatError,
    StageError,
    auc_at,
    fiedler_value,
    graph_radius,
    sample_subsequences,
    transitive_overlap,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "StageError",
    "auc_at",
    "fiedler_value",
    "graph_radius",
    "load_config",
    "run_pipeline",
    "sample_subsequences",
    "simulate_bundle",
    "transitive_overlap",
]


def load_config(path=None, overrides=(), seed=None):
    """Returns the merged config as a dict."""
    return json.loads(_core.load_config(None if path is None else os.fspath(path), list(overrides), seed))


def simulate_bundle(config, out_dir):
    _core.simulate_bundle(json.dumps(config), os.fspath(out_dir))


def run_pipeline(config, bundle_dir=None, out_dir=None):
    """Runs every stage; simulates the bundle when bundle_dir is None."""
    report = _core.run_pipeline(
        json.dumps(config),
        "" if bundle_dir is None else os.fspath(bundle_dir),
        "" if out_dir is None else os.fspath(out_dir),
    )
    return json.loads(report)
