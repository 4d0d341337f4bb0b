"""Three-setting and four-setting Bell expressions, local bounds and violation search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import HALF_PI
from .models import AtomLaw, DeterministicLocalModel, exact_correlator

EXACT_TOL = 1e-12
Z_CLAIM = 5.0

Correlator = Callable[[float, float], float]


def _split(value) -> tuple[float, float]:
    """Accept plain floats or estimate objects carrying ``mean``/``stderr``."""
    if hasattr(value, "mean") and hasattr(value, "stderr"):
        return float(value.mean), float(value.stderr)
    return float(value), 0.0


@dataclass(frozen=True)
class BellTriple:
    a: float
    b: float
    c: float
    lhs: float
    rhs: float
    violated: bool
    stderr: float = 0.0

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


@dataclass(frozen=True)
class ChshQuad:
    a: float
    a2: float
    b: float
    b2: float
    S: float
    stderr: float = 0.0

    @property
    def violated(self) -> bool:
        if self.stderr > 0:
            return self.S - 2.0 > Z_CLAIM * self.stderr
        return self.S > 2.0 + EXACT_TOL


def bell1964(correlator: Correlator, a: float, b: float, c: float) -> BellTriple:
    """|P(a,b) - P(a,c)| against 1 - P(b,c).

    If the correlator returns estimates (``mean`` and ``stderr``), the three
    errors are combined in quadrature and a violation needs a 5-sigma margin.
    """
    pab, sab = _split(correlator(a, b))
    pac, sac = _split(correlator(a, c))
    pbc, sbc = _split(correlator(b, c))
    lhs = abs(pab - pac)
    rhs = 1.0 - pbc
    err = math.sqrt(sab**2 + sac**2 + sbc**2)
    if err > 0:
        violated = lhs - rhs > Z_CLAIM * err
    else:
        violated = lhs > rhs + EXACT_TOL
    return BellTriple(a, b, c, lhs, rhs, violated, err)


def chsh(correlator: Correlator, a: float, a2: float, b: float, b2: float) -> ChshQuad:
    vals = [_split(correlator(x, y)) for x, y in ((a, b), (a, b2), (a2, b), (a2, b2))]
    (e1, s1), (e2, s2), (e3, s3), (e4, s4) = vals
    S = abs(e1 - e2) + abs(e3 + e4)
    return ChshQuad(a, a2, b, b2, S, math.sqrt(s1**2 + s2**2 + s3**2 + s4**2))


def integrand_residual(model: DeterministicLocalModel, a: float, b: float, c: float) -> float:
    """Gap between P(a,b) - P(a,c) and its integrand form A(a)A(b)[1 - A(b)A(c)].

    Both sides are summed exactly over the model's hidden atoms.
    """
    law = model.lambda_law
    if not isinstance(law, AtomLaw):
        raise ValueError("the identity check needs a finite lambda law")
    lam = np.asarray(law.atoms)
    w = np.asarray(law.weights)
    Aa = model.outcome(a, lam).astype(float)
    Ab = model.outcome(b, lam).astype(float)
    Ac = model.outcome(c, lam).astype(float)
    left = float(np.dot(w, Aa * Ab)) - float(np.dot(w, Aa * Ac))
    right = float(np.dot(w, Aa * Ab * (1.0 - Ab * Ac)))
    return abs(left - right)


# --- brute force over deterministic strategies ----------------------------


@dataclass(frozen=True)
class LocalBound:
    value: float
    strategy: tuple[int, ...]


def local_bound_bruteforce(expression: str, settings: Sequence[float]) -> LocalBound:
    """Maximum of a Bell expression over all deterministic local strategies.

    ``bell1964``: three settings, one response shared by both sides
    (2**3 strategies); the value is lhs - rhs.
    ``chsh``: settings (a, a2, b, b2), independent responses per side
    (2**4 strategies); the value is S.
    Mixtures are convex combinations, so the maximum here bounds them too.
    Ties go to the first strategy in lexicographic order (+1 before -1).
    """
    if expression == "bell1964":
        if len(settings) != 3:
            raise ValueError("bell1964 takes exactly three settings")
        best = None
        for s in itertools.product((1, -1), repeat=3):
            value = abs(s[0] * s[1] - s[0] * s[2]) - (1 - s[1] * s[2])
            if best is None or value > best.value:
                best = LocalBound(float(value), s)
        return best
    if expression == "chsh":
        if len(settings) != 4:
            raise ValueError("chsh takes exactly four settings (a, a2, b, b2)")
        best = None
        for s in itertools.product((1, -1), repeat=4):
            A1, A2, B1, B2 = s
            value = abs(A1 * B1 - A1 * B2) + abs(A2 * B1 + A2 * B2)
            if best is None or value > best.value:
                best = LocalBound(float(value), s)
        return best
    raise ValueError(f"unknown expression {expression!r}")


# --- grid search ----------------------------------------------------------


@dataclass(frozen=True)
class ViolationResult:
    expression: str
    settings: tuple[float, ...]
    value: float
    margin: float

    @property
    def violated(self) -> bool:
        return self.margin > EXACT_TOL


def angle_grid(resolution: int) -> np.ndarray:
    """``resolution`` points spanning [0, pi/2] inclusive, continued over [0, pi)."""
    step = HALF_PI / (resolution - 1)
    return np.arange(2 * (resolution - 1)) * step


def violation_search(correlator: Correlator, expression: str, resolution: int = 64) -> ViolationResult:
    """Grid search for the settings that maximize the violation margin.

    For ``bell1964`` the margin is lhs - rhs; for ``chsh`` it is S - 2.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8 points per pi/2")
    g = angle_grid(resolution)
    G = len(g)
    M = np.array([[correlator(x, y) for y in g] for x in g], dtype=float)

    if expression == "bell1964":
        # margin[i, j, k] for (a, b, c) = (g_i, g_j, g_k)
        margin = np.abs(M[:, :, None] - M[:, None, :]) - (1.0 - M[None, :, :])
        flat = int(np.argmax(margin))
        i, j, k = np.unravel_index(flat, margin.shape)
        m = float(margin[i, j, k])
        return ViolationResult("bell1964", (float(g[i]), float(g[j]), float(g[k])), m, m)

    if expression == "chsh":
        # |u| + |v| = max over signs, which splits the (b, b2) maximization
        best_val, best_idx = -math.inf, None
        for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            first = s1 * M[:, None, :] + s2 * M[None, :, :]     # term in b
            second = -s1 * M[:, None, :] + s2 * M[None, :, :]   # term in b2
            jb, jb2 = first.argmax(axis=2), second.argmax(axis=2)
            total = first.max(axis=2) + second.max(axis=2)
            flat = int(np.argmax(total))
            if total.flat[flat] > best_val + EXACT_TOL:
                i, i2 = np.unravel_index(flat, (G, G))
                best_val = float(total.flat[flat])
                best_idx = (i, i2, int(jb[i, i2]), int(jb2[i, i2]))
        i, i2, j, j2 = best_idx
        S = abs(M[i, j] - M[i, j2]) + abs(M[i2, j] + M[i2, j2])
        settings = (float(g[i]), float(g[i2]), float(g[j]), float(g[j2]))
        return ViolationResult("chsh", settings, float(S), float(S) - 2.0)

    raise ValueError(f"unknown expression {expression!r}")


def correlator_of(model) -> Correlator:
    """Exact correlator of a model as a plain two-argument function."""
    return lambda x, y: exact_correlator(model, x, y)
