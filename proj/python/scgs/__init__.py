"""Minority-group image synthesis from a classifier's mistakes."""

import json

from ._scgs import (
    Classifier,
    ConfigError,
    DependencyError,
    GenerationError,
    InputError,
    IoError,
    ParseError,
    ProtocolError,
    ReportError,
    RunConfig,
    ScgsError,
    StageError,
    gaussian_logpdf,
    load_variants,
    run_stage,
    stages,
    threshold_mask,
)
from ._scgs import run_pipeline as _run_pipeline

__all__ = [
    "Classifier",
    "ConfigError",
    "DependencyError",
    "GenerationError",
    "InputError",
    "IoError",
    "ParseError",
    "ProtocolError",
    "ReportError",
    "RunConfig",
    "ScgsError",
    "StageError",
    "gaussian_logpdf",
    "load_variants",
    "run",
    "run_stage",
    "stages",
    "threshold_mask",
]


def run(config):
    """Run every stage. `config` is a RunConfig or a path to a config file.

    Returns the run manifest as a dict.
    """
    if not isinstance(config, RunConfig):
        config = RunConfig.load(str(config))
    return json.loads(_run_pipeline(config))
