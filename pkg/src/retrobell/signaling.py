"""Marginal-independence scans and the hidden-variable readout demonstration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import HALF_PI, PI, angular_distance
from .models import JointLaw, Model, RetroModel, Variant, qm_correlator
from .statistics import CorrelatorEstimate, run_experiment

Z_THRESHOLD = 5.0
EXACT_TOL = 1e-12


@dataclass
class MarginalScan:
    """Marginal of the fixed side while the far setting is scanned.

    ``z`` compares each point with ``reference`` when one is given, otherwise
    with the pooled mean over the whole scan (a model-free test that the
    marginal does not move).
    """

    fixed_side: str
    fixed_setting: float
    scan: list[float]
    estimates: list[CorrelatorEstimate]
    z: list[float]
    reference: Optional[float] = None

    @property
    def max_abs_z(self) -> float:
        return max(abs(v) for v in self.z)

    def passed(self, threshold: float = Z_THRESHOLD) -> bool:
        return self.max_abs_z < threshold

    def rows(self) -> list[dict]:
        return [
            {"setting": s, "mean": e.mean, "stderr": e.stderr, "z": z}
            for s, e, z in zip(self.scan, self.estimates, self.z)
        ]


def _pooled_z(estimates: Sequence[CorrelatorEstimate]) -> list[float]:
    k = len(estimates)
    means = np.array([e.mean for e in estimates])
    var = np.array([e.stderr**2 for e in estimates])
    pooled = means.mean()
    out = []
    for i in range(k):
        # var(m_i - pooled) for independent points with equal weights
        v = var[i] * (1 - 1 / k) ** 2 + (var.sum() - var[i]) / k**2
        diff = means[i] - pooled
        if v > 0:
            out.append(float(diff / math.sqrt(v)))
        else:
            out.append(0.0 if diff == 0 else math.copysign(math.inf, diff))
    return out


def nosignal_scan(model: Model, fixed_side: str, fixed_setting: float, scan: Sequence[float],
                  n: int, seed: int, *, reference: Optional[float] = None,
                  workers: int = 1) -> MarginalScan:
    """Estimate one side's marginal while the other side's setting varies.

    ``fixed_side`` is "A" or "B"; the scanned settings belong to the other
    side. Scan point k draws from stream k of ``seed``.
    """
    if fixed_side not in ("A", "B"):
        raise ValueError("fixed_side must be 'A' or 'B'")
    if n < 1000:
        raise ValueError("marginal scans need at least 10**3 trials per point")
    if len(scan) < 2 and reference is None:
        raise ValueError("pooled comparison needs at least two scan points")
    estimates = []
    for k, s in enumerate(scan):
        a, b = (s, fixed_setting) if fixed_side == "B" else (fixed_setting, s)
        res = run_experiment(model, a, b, n, seed, stream_id=k, workers=workers)
        estimates.append(res.mean_B if fixed_side == "B" else res.mean_A)
    if reference is None:
        z = _pooled_z(estimates)
    else:
        z = [e.z(reference) for e in estimates]
    return MarginalScan(fixed_side, float(fixed_setting), [float(s) for s in scan], estimates, z, reference)


# --- hidden-variable readout ----------------------------------------------


def _law_dict(model: RetroModel, a: float, b: float) -> dict[float, float]:
    return model.law(a, b).as_dict()


def _tv_over_atoms(p: dict[float, float], q: dict[float, float]) -> float:
    keys: list[float] = []
    for x in list(p) + list(q):
        if not any(angular_distance(x, k) <= EXACT_TOL for k in keys):
            keys.append(x)

    def weight(d, x):
        return sum(w for y, w in d.items() if angular_distance(x, y) <= EXACT_TOL)

    return 0.5 * sum(abs(weight(p, x) - weight(q, x)) for x in keys)


def lambda_leak(retro: RetroModel, a0: float, a1: float, b: float, observe: str = "lambda") -> float:
    """Best advantage over 1/2 in guessing whether the left setting was a0 or a1.

    With equal priors the optimal guesser succeeds with probability
    1/2 + TV/2, so the advantage is half the total-variation distance between
    the two laws of the observed quantity. ``observe`` picks what the guesser
    sees: the polarization ("lambda") or only the right outcome ("B").
    """
    if retro.variant is not Variant.SYMMETRIC:
        raise ValueError("the readout demonstration uses the symmetric model")
    if observe == "lambda":
        tv = _tv_over_atoms(_law_dict(retro, a0, b), _law_dict(retro, a1, b))
    elif observe == "B":
        m0, m1 = retro.joint(a0, b).mean_B, retro.joint(a1, b).mean_B
        # B is two-valued: TV = |P0(B=+1) - P1(B=+1)|
        tv = abs(m0 - m1) / 2
    else:
        raise ValueError("observe must be 'lambda' or 'B'")
    return tv / 2


# --- asymmetric (left-first) variant --------------------------------------


@dataclass
class SequentialReport:
    law_independent_of_b: bool
    max_mean_A: float
    max_mean_B: float
    max_correlator_error: float
    points: int
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def default_grid(k: int = 5) -> list[tuple[float, float]]:
    vals = [j * PI / k for j in range(k)]
    return [(a, b) for a in vals for b in vals]


def sequential_consistency(model: RetroModel, grid: Optional[Sequence[tuple[float, float]]] = None,
                           probe_b: Sequence[float] = (0.0, 0.3, HALF_PI, 2.5)) -> SequentialReport:
    """Exact checks of the left-first variant on a settings grid."""
    if model.variant is not Variant.ASYMMETRIC_LEFT_FIRST:
        raise ValueError("sequential checks apply to the left-first variant")
    grid = default_grid() if grid is None else list(grid)
    independent = True
    mA = mB = err = 0.0
    for a, b in grid:
        law = model.law(a, b)
        for b2 in probe_b:
            if model.law(a, b2) != law:
                independent = False
        j: JointLaw = model.joint(a, b)
        mA = max(mA, abs(j.mean_A))
        mB = max(mB, abs(j.mean_B))
        err = max(err, abs(j.correlator - qm_correlator(a, b)))
    failures = []
    if not independent:
        failures.append("lambda law reads b")
    if mA > EXACT_TOL:
        failures.append(f"<A> = {mA!r}")
    if mB > EXACT_TOL:
        failures.append(f"<B> = {mB!r}")
    if err > EXACT_TOL:
        failures.append(f"<AB> off by {err!r}")
    return SequentialReport(independent, mA, mB, err, len(grid), failures)
