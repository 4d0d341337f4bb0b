"""Simulation and exact checks for two-photon polarization correlation models."""

__version__ = "0.1.0"

from .core import Trial, TrialSet, RandomStream, canonicalize, angular_distance, polarizer_sign
from .models import (
    JointLaw,
    QMModel,
    BellToyModel,
    RetroModel,
    LocalCausalModel,
    DeterministicLocalModel,
    Variant,
    qm_correlator,
    qm_joint,
    malus_prob,
    retro_lambda_law,
    bell_toy_aprime,
    sample_trial,
    exact_correlator,
    branch_statistics,
    nonlocalize,
    make_model,
)
from .statistics import CorrelatorEstimate, run_experiment, sweep
from .inequalities import bell1964, chsh, integrand_residual, local_bound_bruteforce, violation_search
from .signaling import nosignal_scan, lambda_leak, sequential_consistency
from .wire import Wiring, run_wire_experiment, transcript_audit

__all__ = [
    "Trial", "TrialSet", "RandomStream", "canonicalize", "angular_distance", "polarizer_sign",
    "JointLaw", "QMModel", "BellToyModel", "RetroModel", "LocalCausalModel", "DeterministicLocalModel",
    "Variant", "qm_correlator", "qm_joint", "malus_prob", "retro_lambda_law", "bell_toy_aprime",
    "sample_trial", "exact_correlator", "branch_statistics", "nonlocalize", "make_model",
    "CorrelatorEstimate", "run_experiment", "sweep",
    "bell1964", "chsh", "integrand_residual", "local_bound_bruteforce", "violation_search",
    "nosignal_scan", "lambda_leak", "sequential_consistency",
    "Wiring", "run_wire_experiment", "transcript_audit",
]
