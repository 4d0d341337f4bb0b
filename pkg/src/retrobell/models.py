"""Model families for the two-photon polarization experiment.

Every model exposes two things:

* ``sample(a, b, u)`` turns per-trial uniforms (shape ``(n, 4)``) into
  outcome arrays and a hidden-variable column, vectorized over trials;
* ``joint(a, b)`` returns the exact four-point outcome law, computed by
  summation over finitely many hidden atoms or by closed-form / quadrature
  integration over a uniform hidden angle.

Column 0 of ``u`` drives the hidden variable (or the left outcome for the
plain QM sampler), columns 1 and 2 drive the left and right outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .core import (
    ANGLE_TOL,
    HALF_PI,
    PI,
    QUARTER_PI,
    RandomStream,
    Trial,
    angular_distance,
    canonicalize,
    polarizer_sign,
    signed_offset,
)

OUTCOMES = (1, -1)


class UnsupportedLaw(ValueError):
    """The hidden-variable law has no exact evaluation path."""


@dataclass(frozen=True)
class JointLaw:
    """Probabilities ``p[(A, B)]`` for A, B in {+1, -1}."""

    pp: float
    pm: float
    mp: float
    mm: float

    def __post_init__(self):
        for p in (self.pp, self.pm, self.mp, self.mm):
            if not -1e-12 <= p <= 1 + 1e-12:
                raise ValueError(f"probability out of range: {p!r}")
        if abs(self.pp + self.pm + self.mp + self.mm - 1.0) > 1e-12:
            raise ValueError("joint law does not sum to 1")

    def __getitem__(self, key: tuple[int, int]) -> float:
        A, B = key
        return {(1, 1): self.pp, (1, -1): self.pm, (-1, 1): self.mp, (-1, -1): self.mm}[(A, B)]

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(A, B): self[A, B] for A in OUTCOMES for B in OUTCOMES}

    def as_array(self) -> np.ndarray:
        return np.array([self.pp, self.pm, self.mp, self.mm])

    @property
    def correlator(self) -> float:
        return self.pp - self.pm - self.mp + self.mm

    @property
    def mean_A(self) -> float:
        return self.pp + self.pm - self.mp - self.mm

    @property
    def mean_B(self) -> float:
        return self.pp - self.pm + self.mp - self.mm

    def total_variation(self, other: "JointLaw") -> float:
        return 0.5 * float(np.abs(self.as_array() - other.as_array()).sum())

    @classmethod
    def from_conditionals(cls, weights, pA, pB) -> "JointLaw":
        """Mixture over hidden atoms of independent conditional outcome laws."""
        w = np.asarray(weights, dtype=float)
        pA = np.asarray(pA, dtype=float)
        pB = np.asarray(pB, dtype=float)
        qA, qB = 1.0 - pA, 1.0 - pB
        return cls(
            float(np.dot(w, pA * pB)),
            float(np.dot(w, pA * qB)),
            float(np.dot(w, qA * pB)),
            float(np.dot(w, qA * qB)),
        )


# --- hidden-variable laws -------------------------------------------------


@dataclass(frozen=True)
class AtomLaw:
    """Finitely supported law over hidden angles; coinciding atoms are merged."""

    atoms: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.atoms) != len(self.weights) or not self.atoms:
            raise ValueError("atoms and weights must be nonempty and of equal length")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @classmethod
    def build(cls, atoms: Sequence[float], weights: Sequence[float]) -> "AtomLaw":
        merged: list[list[float]] = []
        for x, w in zip(atoms, weights):
            x = canonicalize(x)
            for entry in merged:
                if angular_distance(entry[0], x) <= ANGLE_TOL:
                    entry[1] += w
                    break
            else:
                merged.append([x, float(w)])
        return cls(tuple(m[0] for m in merged), tuple(m[1] for m in merged))

    def as_dict(self) -> dict[float, float]:
        return dict(zip(self.atoms, self.weights))

    def weight_of(self, lam: float) -> float:
        for x, w in zip(self.atoms, self.weights):
            if angular_distance(x, lam) <= ANGLE_TOL:
                return w
        return 0.0

    def sample(self, u: np.ndarray) -> np.ndarray:
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, u, side="right")
        idx = np.minimum(idx, len(self.atoms) - 1)
        return np.asarray(self.atoms)[idx]


@dataclass(frozen=True)
class UniformLaw:
    """Hidden angle uniform on [0, pi)."""

    def sample(self, u: np.ndarray) -> np.ndarray:
        return PI * np.asarray(u, dtype=float)


def _bernoulli_sign(u: np.ndarray, p_plus) -> np.ndarray:
    return np.where(u < p_plus, 1, -1).astype(np.int8)


def malus_prob(A: int, a: float, lam: float) -> float:
    """Probability of outcome ``A`` at polarizer angle ``a`` for polarization ``lam``."""
    if A == 1:
        return math.cos(a - lam) ** 2
    if A == -1:
        return math.sin(a - lam) ** 2
    raise ValueError(f"outcome must be +1 or -1, got {A!r}")


def malus_plus(setting, lam):
    """Vectorized probability of +1 under Malus' law."""
    return np.cos(np.asarray(setting, dtype=float) - np.asarray(lam, dtype=float)) ** 2


# --- quantum statistics ---------------------------------------------------


def qm_correlator(a, b):
    """cos(2a - 2b); accepts scalars or arrays."""
    if np.ndim(a) or np.ndim(b):
        return np.cos(2 * np.asarray(a, dtype=float) - 2 * np.asarray(b, dtype=float))
    return math.cos(2 * a - 2 * b)


def qm_joint(a: float, b: float) -> JointLaw:
    e = math.cos(2 * a - 2 * b)
    same, diff = (1 + e) / 4, (1 - e) / 4
    return JointLaw(same, diff, diff, same)


class Model:
    """Base for all samplers. Subclasses fill in ``sample`` and ``joint``."""

    name = "model"
    retro_order = False
    reproduces_qm = False

    def sample(self, a, b, u: np.ndarray):
        raise NotImplementedError

    def joint(self, a: float, b: float) -> JointLaw:
        raise UnsupportedLaw(f"{self.name}: no exact law")


class QMModel(Model):
    """Draws (A, B) directly from the quantum joint law; no hidden variable."""

    name = "qm"
    reproduces_qm = True

    def sample(self, a, b, u):
        e = qm_correlator(a, b)
        A = _bernoulli_sign(u[:, 0], 0.5)
        same = u[:, 1] < (1 + e) / 2
        B = np.where(same, A, -A).astype(np.int8)
        return A, B, None

    def joint(self, a, b):
        return qm_joint(a, b)


# --- locally causal families ----------------------------------------------


class LocalCausalModel(Model):
    """Settings-independent hidden law plus one-sided stochastic responses.

    ``law_A(a, lam)`` and ``law_B(b, lam)`` give the probability of +1 and
    must accept numpy arrays. Neither ever sees the far setting.
    """

    def __init__(self, lambda_law, law_A, law_B, name: str = "local"):
        self.lambda_law = lambda_law
        self.law_A = law_A
        self.law_B = law_B
        self.name = name

    def sample(self, a, b, u):
        lam = self.lambda_law.sample(u[:, 0])
        A = _bernoulli_sign(u[:, 1], self.law_A(a, lam))
        B = _bernoulli_sign(u[:, 2], self.law_B(b, lam))
        return A, B, lam

    def joint(self, a, b):
        law = self.lambda_law
        if isinstance(law, AtomLaw):
            lam = np.asarray(law.atoms)
            return JointLaw.from_conditionals(law.weights, self.law_A(a, lam), self.law_B(b, lam))
        if isinstance(law, UniformLaw):
            return self._joint_uniform(a, b)
        raise UnsupportedLaw(f"{self.name}: lambda law {type(law).__name__} has no exact path")

    def _joint_uniform(self, a, b):
        # adaptive quadrature of each cell over lambda in [0, pi)
        def cell(fa, fb):
            val, _ = integrate.quad(lambda x: fa(x) * fb(x), 0.0, PI, limit=200, epsabs=1e-14, epsrel=1e-13)
            return val / PI

        pa = lambda x: float(self.law_A(a, x))
        pb = lambda x: float(self.law_B(b, x))
        qa = lambda x: 1.0 - pa(x)
        qb = lambda x: 1.0 - pb(x)
        pp, pm, mp = cell(pa, pb), cell(pa, qb), cell(qa, pb)
        return JointLaw(pp, pm, mp, max(0.0, 1.0 - pp - pm - mp))


class DeterministicLocalModel(Model):
    """Hidden atoms and one response function shared by both sides."""

    def __init__(self, lambda_law: AtomLaw, response: Callable, name: str = "deterministic-local"):
        self.lambda_law = lambda_law
        self.response = response
        self.name = name

    def outcome(self, x, lam):
        return np.asarray(self.response(x, lam), dtype=np.int8)

    def sample(self, a, b, u):
        lam = self.lambda_law.sample(u[:, 0])
        return self.outcome(a, lam), self.outcome(b, lam), lam

    def joint(self, a, b):
        law = self.lambda_law
        if not isinstance(law, AtomLaw):
            raise UnsupportedLaw(f"{self.name}: deterministic models need a finite lambda law")
        lam = np.asarray(law.atoms)
        pA = (self.outcome(a, lam) == 1).astype(float)
        pB = (self.outcome(b, lam) == 1).astype(float)
        return JointLaw.from_conditionals(law.weights, pA, pB)

    def correlator(self, x, y) -> float:
        lam = np.asarray(self.lambda_law.atoms)
        prod = self.outcome(x, lam).astype(float) * self.outcome(y, lam)
        return float(np.dot(self.lambda_law.weights, prod))


# --- Bell's non-local toy model -------------------------------------------


def bell_toy_aprime(a: float, b: float) -> float:
    """Left-side centre used by the non-local toy model.

    Placed on the shorter arc from ``b`` toward ``a`` at distance
    (pi/4)(1 - cos(2a - 2b)) from ``b``; the sign-function correlator under a
    uniform hidden angle is then exactly cos(2a - 2b).
    """
    step = QUARTER_PI * (1.0 - math.cos(2 * a - 2 * b))
    direction = signed_offset(b, a)
    return canonicalize(b + math.copysign(step, direction))


def sign_overlap_correlator(c1: float, c2: float) -> float:
    """Correlator of two pi/4 sign windows under a uniform hidden angle."""
    return 1.0 - 4.0 / PI * angular_distance(c1, c2)


class BellToyModel(Model):
    """Uniform hidden angle; the left window centre depends on the right setting."""

    name = "bell-toy"
    reproduces_qm = True
    lambda_law = UniformLaw()

    def sample(self, a, b, u):
        lam = self.lambda_law.sample(u[:, 0])
        if np.ndim(a) or np.ndim(b):
            a_arr, b_arr = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
            centre = np.array([bell_toy_aprime(x, y) for x, y in zip(a_arr, b_arr)])
        else:
            centre = bell_toy_aprime(a, b)
        return polarizer_sign(centre, lam), polarizer_sign(b, lam), lam

    def joint(self, a, b):
        # each window covers half the circle; overlap of windows at distance d is pi/2 - d
        d = angular_distance(bell_toy_aprime(a, b), b)
        same = 0.5 - d / PI
        diff = d / PI
        return JointLaw(same, diff, diff, same)


# --- retro-causal toy model -----------------------------------------------


class Variant(str, Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC_LEFT_FIRST = "asymmetric_left_first"


def retro_lambda_law(variant, a: float, b: float) -> AtomLaw:
    """Settings-dependent polarization law of the retro-causal model."""
    variant = Variant(variant)
    if variant is Variant.SYMMETRIC:
        return AtomLaw.build([a, a + HALF_PI, b, b + HALF_PI], [0.25] * 4)
    return AtomLaw.build([a, a + HALF_PI], [0.5, 0.5])


class _MalusAtomModel(Model):
    """Settings-dependent candidate polarizations and Malus-law stations."""

    retro_order = True

    def candidates(self, a, b) -> list:
        raise NotImplementedError

    def law(self, a: float, b: float) -> AtomLaw:
        c = self.candidates(a, b)
        return AtomLaw.build(c, [1.0 / len(c)] * len(c))

    def _pick(self, a, b, u0):
        c = np.stack(np.broadcast_arrays(*[np.asarray(x, float) for x in self.candidates(a, b)]), axis=-1)
        k = np.minimum((u0 * c.shape[-1]).astype(np.int64), c.shape[-1] - 1)
        if c.ndim == 1:
            return k, canonicalize(c[k])
        return k, canonicalize(c[np.arange(len(k)), k])

    def draw_lambda(self, a: float, b: float, u0: float) -> float:
        """Polarization for one trial from a single uniform; matches ``sample``."""
        c = self.candidates(a, b)
        k = min(int(u0 * len(c)), len(c) - 1)
        return canonicalize(c[k])

    def sample(self, a, b, u):
        _, lam = self._pick(a, b, u[:, 0])
        A = _bernoulli_sign(u[:, 1], malus_plus(a, lam))
        B = _bernoulli_sign(u[:, 2], malus_plus(b, lam))
        return A, B, lam

    def joint(self, a, b):
        law = self.law(a, b)
        lam = np.asarray(law.atoms)
        return JointLaw.from_conditionals(law.weights, malus_plus(a, lam), malus_plus(b, lam))


class RetroModel(_MalusAtomModel):
    """Polarization drawn from the settings (symmetric) or the left setting only."""

    reproduces_qm = True

    def __init__(self, variant=Variant.SYMMETRIC):
        self.variant = Variant(variant)
        self.name = "retro" if self.variant is Variant.SYMMETRIC else "retro-seq"

    def candidates(self, a, b):
        if self.variant is Variant.SYMMETRIC:
            return [a, a + HALF_PI, b, b + HALF_PI]
        return [a, a + HALF_PI]

    def law(self, a, b):
        return retro_lambda_law(self.variant, a, b)


class SingleBranchModel(_MalusAtomModel):
    """Signaling fixture: polarization always equal to the left setting.

    Reproduces the cosine correlator but its right marginal depends on ``a``.
    """

    name = "retro-single-branch"

    def candidates(self, a, b):
        return [a]


class LocalityViolatingModel(_MalusAtomModel):
    """Retro model rewritten with a settings-free integer n in {1, 2, 3, 4}.

    The polarization ``lambda_prime(n, a, b)`` is fixed only at measurement
    time, so each station's outcome law reads the far setting.
    """

    retro_order = False

    def __init__(self, retro: RetroModel):
        self.retro = retro
        self.name = "nonlocal-" + retro.name

    @staticmethod
    def lambda_prime(n: int, a: float, b: float) -> float:
        if n not in (1, 2, 3, 4):
            raise ValueError("n must be in 1..4")
        return canonicalize((a, a + HALF_PI, b, b + HALF_PI)[n - 1])

    def candidates(self, a, b):
        return [a, a + HALF_PI, b, b + HALF_PI]

    def sample(self, a, b, u):
        k, lam = self._pick(a, b, u[:, 0])
        A = _bernoulli_sign(u[:, 1], malus_plus(a, lam))
        B = _bernoulli_sign(u[:, 2], malus_plus(b, lam))
        return A, B, (k + 1).astype(np.int64)

    def joint(self, a, b):
        # no merging: enumerate n directly
        lam = np.array([self.lambda_prime(n, a, b) for n in (1, 2, 3, 4)])
        return JointLaw.from_conditionals([0.25] * 4, malus_plus(a, lam), malus_plus(b, lam))


def nonlocalize(retro: RetroModel) -> LocalityViolatingModel:
    if retro.variant is not Variant.SYMMETRIC:
        raise ValueError("only the symmetric retro model has the four-valued translation")
    return LocalityViolatingModel(retro)


# --- generic operations ---------------------------------------------------


def exact_correlator(model: Model, a: float, b: float) -> float:
    return model.joint(a, b).correlator


def sample_trial(model: Model, a: float, b: float, stream: RandomStream, index: int = 0,
                 record_hidden: bool = False) -> Trial:
    """Single trial; identical to row ``index`` of a batch run with the same stream."""
    u = stream.uniforms(index, index + 1)
    A, B, hidden = model.sample(a, b, u)
    h = None
    if record_hidden and hidden is not None:
        h = np.asarray(hidden)[0].item()
    return Trial(index, float(a), float(b), int(A[0]), int(B[0]), h, model.retro_order)


def branch_statistics(retro: _MalusAtomModel, branch: float, a: float, b: float):
    """Exact (<A>, <B>, <AB>) conditional on the polarization equal to ``branch``."""
    law = retro.law(a, b)
    if law.weight_of(branch) == 0.0:
        raise ValueError(f"{branch!r} is not an atom of the lambda law at ({a!r}, {b!r})")
    mA = math.cos(2 * (a - branch))
    mB = math.cos(2 * (b - branch))
    return mA, mB, mA * mB


# --- registry -------------------------------------------------------------


def _local_malus_uniform():
    return LocalCausalModel(UniformLaw(), malus_plus, malus_plus, name="local:malus-uniform")


def _local_malus_atoms8():
    law = AtomLaw.build([k * PI / 8 for k in range(8)], [1 / 8] * 8)
    return LocalCausalModel(law, malus_plus, malus_plus, name="local:malus-atoms8")


def _local_sign_grid():
    law = AtomLaw.build([k * PI / 64 for k in range(64)], [1 / 64] * 64)
    return DeterministicLocalModel(law, polarizer_sign, name="local:sign-grid")


LOCAL_FIXTURES: dict[str, Callable[[], Model]] = {
    "malus-uniform": _local_malus_uniform,
    "malus-atoms8": _local_malus_atoms8,
    "sign-grid": _local_sign_grid,
}

MODEL_FACTORIES: dict[str, Callable[[], Model]] = {
    "qm": QMModel,
    "bell-toy": BellToyModel,
    "retro": lambda: RetroModel(Variant.SYMMETRIC),
    "retro-seq": lambda: RetroModel(Variant.ASYMMETRIC_LEFT_FIRST),
    "retro-single-branch": SingleBranchModel,
}

QM_REPRODUCING = ("qm", "bell-toy", "retro", "retro-seq")


def model_ids() -> list[str]:
    return list(MODEL_FACTORIES) + [f"local:{k}" for k in LOCAL_FIXTURES]


def make_model(model_id: str) -> Model:
    if model_id.startswith("local:"):
        key = model_id.split(":", 1)[1]
        if key not in LOCAL_FIXTURES:
            raise KeyError(f"unknown local fixture {key!r}")
        return LOCAL_FIXTURES[key]()
    if model_id not in MODEL_FACTORIES:
        raise KeyError(f"unknown model {model_id!r}")
    return MODEL_FACTORIES[model_id]()
