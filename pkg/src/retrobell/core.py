"""Angles modulo pi, outcomes, trial records and reproducible random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

PI = math.pi
HALF_PI = math.pi / 2
QUARTER_PI = math.pi / 4

ANGLE_TOL = 1e-12

# Uniform draws reserved per trial; models take what they need from these columns.
UNIFORMS_PER_TRIAL = 4
BLOCK_SIZE = 4096


def canonicalize(x):
    """Reduce an angle (radians) into [0, pi).

    Works on scalars and numpy arrays. Non-finite input raises ``ValueError``.
    """
    if type(x) is float or np.ndim(x) == 0:
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"angle must be finite, got {x!r}")
        r = math.fmod(x, PI)
        if r < 0.0:
            r += PI
        # fmod of a tiny negative value can round up to exactly pi
        if r >= PI:
            r = 0.0
        return r
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("angles must be finite")
    r = np.fmod(arr, PI)
    r = np.where(r < 0.0, r + PI, r)
    return np.where(r >= PI, 0.0, r)


def angular_distance(x, y):
    """Distance on the circle of circumference pi; result lies in [0, pi/2]."""
    m = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    m = np.fmod(m, PI)
    d = np.minimum(m, PI - m)
    if d.ndim == 0:
        return float(d)
    return d


def polarizer_sign(center, lam):
    """+1 when ``lam`` is strictly within pi/4 of ``center``, else -1.

    The tie at distance exactly pi/4 goes to -1.
    """
    d = angular_distance(center, lam)
    if np.ndim(d) == 0:
        return 1 if d < QUARTER_PI else -1
    return np.where(d < QUARTER_PI, 1, -1).astype(np.int8)


def signed_offset(src, dst) -> float:
    """Signed shortest step taking ``src`` to ``dst`` modulo pi, in [-pi/2, pi/2)."""
    s = math.fmod(float(dst) - float(src), PI)
    if s >= HALF_PI:
        s -= PI
    elif s < -HALF_PI:
        s += PI
    return s


def check_outcome(value: int) -> int:
    if value not in (1, -1):
        raise ValueError(f"outcome must be +1 or -1, got {value!r}")
    return int(value)


Hidden = Union[float, int, None]


@dataclass(frozen=True)
class Trial:
    """One activation of the source: settings, both clicks, optional hidden record.

    ``retro_order`` marks trials whose hidden variable was drawn after the
    settings were fixed, i.e. simulation order runs opposite to emission order.
    """

    index: int
    a: float
    b: float
    outcome_A: int
    outcome_B: int
    hidden: Hidden = None
    retro_order: bool = False

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("trial index must be nonnegative")
        check_outcome(self.outcome_A)
        check_outcome(self.outcome_B)


class TrialSet:
    """Column-oriented storage for many trials, indexed by trial index order.

    Columns are numpy arrays so that 10**6 trials stay cheap; indexing yields
    :class:`Trial` records.
    """

    def __init__(self, index, a, b, A, B, hidden=None, retro_order=False):
        self.index = np.asarray(index, dtype=np.int64)
        n = self.index.shape[0]
        self.a = np.broadcast_to(np.asarray(a, dtype=float), (n,)).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=float), (n,)).copy()
        self.A = np.asarray(A, dtype=np.int8)
        self.B = np.asarray(B, dtype=np.int8)
        self.hidden = None if hidden is None else np.asarray(hidden)
        self.retro_order = bool(retro_order)
        if not (self.A.shape == self.B.shape == (n,)):
            raise ValueError("outcome columns must match the index column")
        if self.hidden is not None and self.hidden.shape != (n,):
            raise ValueError("hidden column must match the index column")
        if n and np.unique(self.index).size != n:
            raise ValueError("trial indices must be unique within a TrialSet")

    def __len__(self) -> int:
        return int(self.index.shape[0])

    def __getitem__(self, i: int) -> Trial:
        hidden = None
        if self.hidden is not None:
            hidden = self.hidden[i].item()
        return Trial(
            index=int(self.index[i]),
            a=float(self.a[i]),
            b=float(self.b[i]),
            outcome_A=int(self.A[i]),
            outcome_B=int(self.B[i]),
            hidden=hidden,
            retro_order=self.retro_order,
        )

    def __iter__(self) -> Iterator[Trial]:
        for i in range(len(self)):
            yield self[i]

    @property
    def recorded_hidden(self) -> bool:
        return self.hidden is not None

    @classmethod
    def concat(cls, parts: list["TrialSet"]) -> "TrialSet":
        if not parts:
            return cls.empty()
        hidden = None
        if parts[0].hidden is not None:
            hidden = np.concatenate([p.hidden for p in parts])
        return cls(
            np.concatenate([p.index for p in parts]),
            np.concatenate([p.a for p in parts]),
            np.concatenate([p.b for p in parts]),
            np.concatenate([p.A for p in parts]),
            np.concatenate([p.B for p in parts]),
            hidden=hidden,
            retro_order=parts[0].retro_order,
        )

    @classmethod
    def empty(cls, record_hidden: bool = False) -> "TrialSet":
        z = np.zeros(0)
        return cls(np.zeros(0, np.int64), z, z, z, z, hidden=z if record_hidden else None)

    def equals(self, other: "TrialSet") -> bool:
        """Bit-level equality of every column."""
        same = (
            np.array_equal(self.index, other.index)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and self.retro_order == other.retro_order
        )
        if not same or (self.hidden is None) != (other.hidden is None):
            return False
        if self.hidden is None:
            return True
        return self.hidden.tobytes() == other.hidden.tobytes()


@dataclass(frozen=True)
class RandomStream:
    """Counter-based source of per-trial uniforms.

    Trial ``i`` lives in block ``i // BLOCK_SIZE``; each block is an
    independent Philox generator keyed by ``(master_seed, stream_id, block)``
    through :class:`numpy.random.SeedSequence`. The uniforms for a trial are
    therefore a pure function of ``(master_seed, stream_id, i)`` and do not
    depend on which worker produces them or in what order.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.stream_id < 0:
            raise ValueError("stream_id must be nonnegative")

    def _block(self, block: int) -> np.ndarray:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, block))
        gen = np.random.Generator(np.random.Philox(seq))
        return gen.random((BLOCK_SIZE, UNIFORMS_PER_TRIAL))

    def uniforms(self, start: int, stop: int) -> np.ndarray:
        """Uniforms in [0, 1) for trials ``start .. stop-1``, shape (n, 4)."""
        if start < 0 or stop < start:
            raise ValueError(f"bad trial range [{start}, {stop})")
        out = np.empty((stop - start, UNIFORMS_PER_TRIAL))
        pos = start
        while pos < stop:
            blk = pos // BLOCK_SIZE
            lo = pos - blk * BLOCK_SIZE
            hi = min(BLOCK_SIZE, stop - blk * BLOCK_SIZE)
            out[pos - start : pos - start + hi - lo] = self._block(blk)[lo:hi]
            pos += hi - lo
        return out

    def trial_uniforms(self, index: int) -> np.ndarray:
        return self.uniforms(index, index + 1)[0]

    def substream(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.master_seed, stream_id)


class CachedStream:
    """Sequential per-trial access to a :class:`RandomStream`, one block at a time.

    Rows come back as lists of Python floats, which is what message-level
    code wants.
    """

    def __init__(self, stream: RandomStream):
        self.stream = stream
        self._block_id: Optional[int] = None
        self._block: Optional[list] = None

    def __call__(self, index: int) -> list[float]:
        blk = index // BLOCK_SIZE
        if blk != self._block_id:
            self._block = self.stream._block(blk).tolist()
            self._block_id = blk
        return self._block[index - blk * BLOCK_SIZE]
