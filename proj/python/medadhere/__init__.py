"""Adherence inference from sparse health measures."""

import json
import os

from ._core import (
    AdherenceParams,
    Cohort,
    CovariateVector,
    FormatError,
    HealthObservation,
    HealthParams,
    InvalidInput,
    NumericalError,
    PatientRecord,
    PatientTruth,
    ThetaDraw,
    __version__,
    _default_config,
    _infer_patient,
    _run_pipeline,
    _run_stage,
    credible_interval,
    default_adherence_params,
    default_health_params,
    enumerate_exact,
    importance_smoother,
    kalman_loglik,
    kalman_smoother,
    pgas,
    read_cohort,
    simulate_cohort,
)

STAGES = ("simulate", "split", "fit-adherence", "fit-health", "smooth", "evaluate")


def default_config():
    """Flat configuration dict with every key at its default."""
    return json.loads(_default_config())


def _flat(config):
    return json.dumps(config or {})


def run_pipeline(config=None, out_dir="medadhere-out", threads=1):
    """Run every stale stage; returns the manifest as a dict."""
    return json.loads(_run_pipeline(_flat(config), os.fspath(out_dir), threads))


def run_stage(stage, config=None, out_dir="medadhere-out", threads=1):
    """Run one stage from persisted upstream outputs; returns seconds spent."""
    return _run_stage(stage, _flat(config), os.fspath(out_dir), threads)


def infer_patient(patient, run_dir, config=None, threads=1):
    """Smooth one new patient against the posterior draws stored in run_dir."""
    return _infer_patient(patient, os.fspath(run_dir), _flat(config), threads)


__all__ = [name for name in dir() if not name.startswith("_")]
