"""Monte Carlo runner, correlator estimates and separation sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .core import HALF_PI, RandomStream, TrialSet
from .models import JointLaw, Model, exact_correlator


@dataclass(frozen=True)
class CorrelatorEstimate:
    """Sample mean of a +/-1 valued quantity with its normal-approximation error."""

    mean: float
    stderr: float
    n: int

    @classmethod
    def from_sum(cls, total: int, n: int) -> "CorrelatorEstimate":
        if n < 1:
            raise ValueError("need at least one sample")
        mean = total / n
        # var of a +/-1 variable is 1 - mean**2
        return cls(mean, math.sqrt(max(0.0, 1.0 - mean * mean) / n), n)

    @classmethod
    def from_values(cls, values: np.ndarray) -> "CorrelatorEstimate":
        return cls.from_sum(int(np.sum(values, dtype=np.int64)), int(len(values)))

    def z(self, reference: float) -> float:
        diff = self.mean - reference
        if self.stderr > 0:
            return diff / self.stderr
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)


@dataclass
class ExperimentResult:
    mean_A: CorrelatorEstimate
    mean_B: CorrelatorEstimate
    correlator: CorrelatorEstimate
    trials: TrialSet

    def joint_counts(self) -> np.ndarray:
        """Counts for (+,+), (+,-), (-,+), (-,-)."""
        return joint_counts(self.trials.A, self.trials.B)


def joint_counts(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    code = (A == -1).astype(np.int64) * 2 + (B == -1)
    return np.bincount(code, minlength=4)


def chi_square(counts: np.ndarray, law: JointLaw) -> float:
    """Pearson statistic of observed joint counts against an exact law.

    Cells with zero expected probability must be empty; they add nothing.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    expected = n * law.as_array()
    mask = expected > 0
    if np.any(counts[~mask] > 0):
        return math.inf
    return float(np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask]))


def chi_square_threshold(dof: int = 3, level: float = 0.999) -> float:
    return float(sps.chi2.ppf(level, dof))


def _run_range(model: Model, a, b, stream: RandomStream, start: int, stop: int, record_hidden: bool) -> TrialSet:
    u = stream.uniforms(start, stop)
    if np.ndim(a):
        a, b = a[start:stop], b[start:stop]
    A, B, hidden = model.sample(a, b, u)
    return TrialSet(
        np.arange(start, stop, dtype=np.int64), a, b, A, B,
        hidden=hidden if record_hidden else None,
        retro_order=model.retro_order,
    )


def generate_trials(model: Model, a, b, n: int, stream: RandomStream, *,
                    record_hidden: bool = False, workers: int = 1) -> TrialSet:
    """Trials 0..n-1. ``a`` and ``b`` may be scalars or length-n schedules."""
    if np.ndim(a) or np.ndim(b):
        a, b = (np.broadcast_to(np.asarray(x, dtype=float), (n,)) for x in (a, b))
    workers = max(1, int(workers))
    if workers == 1 or n < 2 * workers:
        return _run_range(model, a, b, stream, 0, n, record_hidden)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(
            lambda k: _run_range(model, a, b, stream, int(bounds[k]), int(bounds[k + 1]), record_hidden),
            range(workers),
        ))
    return TrialSet.concat(parts)


def run_experiment(model: Model, a, b, n: int, seed: int, *, stream_id: int = 0,
                   record_hidden: bool = False, workers: int = 1) -> ExperimentResult:
    if n < 1:
        raise ValueError("n must be at least 1")
    trials = generate_trials(model, a, b, n, RandomStream(seed, stream_id),
                             record_hidden=record_hidden, workers=workers)
    return summarize(trials)


def summarize(trials: TrialSet) -> ExperimentResult:
    A = trials.A.astype(np.int64)
    B = trials.B.astype(np.int64)
    return ExperimentResult(
        CorrelatorEstimate.from_values(A),
        CorrelatorEstimate.from_values(B),
        CorrelatorEstimate.from_values(A * B),
        trials,
    )


@dataclass(frozen=True)
class SweepPoint:
    delta: float
    estimate: CorrelatorEstimate
    exact: float
    z: float


@dataclass
class SweepResult:
    points: list[SweepPoint]

    @property
    def max_abs_z(self) -> float:
        return max(abs(p.z) for p in self.points)

    def rows(self) -> list[dict]:
        return [
            {"delta": p.delta, "mean": p.estimate.mean, "stderr": p.estimate.stderr,
             "exact": p.exact, "z": p.z}
            for p in self.points
        ]


def sweep(model: Model, separations: Sequence[float], n: int, seed: int, *, workers: int = 1) -> SweepResult:
    """Correlator at (0, delta) for each separation; point k uses stream k."""
    if len(separations) == 0:
        raise ValueError("empty separation list")
    points = []
    for k, delta in enumerate(separations):
        if not -1e-12 <= delta <= HALF_PI + 1e-12:
            raise ValueError(f"separation {delta!r} outside [0, pi/2]")
        res = run_experiment(model, 0.0, delta, n, seed, stream_id=k, workers=workers)
        exact = exact_correlator(model, 0.0, delta)
        points.append(SweepPoint(float(delta), res.correlator, exact, res.correlator.z(exact)))
    return SweepResult(points)
