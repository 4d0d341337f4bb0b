"""Source / left station / right station harness over length-prefixed byte streams.

A coordinator drives three endpoints, each behind its own ordered byte
stream (a pair of OS pipes). The wiring decides whether the source ever
hears the measurement settings:

* ``CAUSAL``: the source draws the polarization from a fixed law and never
  receives a SETTING message; receiving one is a protocol error.
* ``RETRO``: both SETTING messages for a trial reach the source before its
  EMIT, and the source draws from the settings-dependent four-atom law.

Frames are a 4-byte little-endian length followed by a JSON record
``{"v": 1, "kind": ..., "trial": ..., "payload": {...}}``. Every endpoint's
first message is HELLO and DONE ends a session. The coordinator keeps a
transcript of every frame it sends or receives, in order; transcripts are
saved as newline-delimited JSON with an extra ``seq``/``src``/``dst``.
Stations never talk to each other.
"""

from __future__ import annotations

import math
import multiprocessing
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import orjson

from .core import CachedStream, RandomStream, TrialSet
from .models import AtomLaw, UniformLaw


def malus_plus_scalar(setting: float, lam: float) -> float:
    return math.cos(setting - lam) ** 2

PROTOCOL_VERSION = 1
HEADER = struct.Struct("<I")
MAX_FRAME = 1 << 20

KINDS = frozenset(("HELLO", "SETTING", "EMIT", "PHOTON", "RESULT", "DONE"))
ROLES = ("source", "left", "right")

# stream ids per endpoint, kept apart from the in-process runner's stream 0..k
SOURCE_STREAM = 1001
STATION_STREAMS = {"left": 1002, "right": 1003}


class Wiring(str, Enum):
    CAUSAL = "CAUSAL"
    RETRO = "RETRO"


class ProtocolError(RuntimeError):
    """A message arrived that the wiring or the per-trial order forbids."""


class TranscriptError(ValueError):
    """A transcript is truncated or malformed."""


# --- framing --------------------------------------------------------------


def _check_finite(payload: dict) -> None:
    for v in payload.values():
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError("non-finite value in payload")


class WireMessage:
    """One protocol record: kind, trial index (None for HELLO/DONE) and payload.

    The encoded frame is cached, so forwarding a received message resends
    its original bytes.
    """

    __slots__ = ("kind", "trial", "payload", "_frame", "_body")

    def __init__(self, kind: str, trial: Optional[int], payload: Optional[dict] = None):
        if kind not in KINDS:
            raise ProtocolError(f"unknown message kind {kind!r}")
        self.kind = kind
        self.trial = trial
        self.payload = {} if payload is None else payload
        self._frame: Optional[bytes] = None
        self._body: Optional[bytes] = None

    def __eq__(self, other):
        return (isinstance(other, WireMessage) and self.kind == other.kind
                and self.trial == other.trial and self.payload == other.payload)

    def __repr__(self):
        return f"WireMessage({self.kind!r}, {self.trial!r}, {self.payload!r})"

    def to_json(self) -> str:
        return self.body().decode()

    def body(self) -> bytes:
        if self._body is None:
            _check_finite(self.payload)
            self._body = orjson.dumps({"v": PROTOCOL_VERSION, "kind": self.kind,
                                       "trial": self.trial, "payload": self.payload},
                                      option=orjson.OPT_SERIALIZE_NUMPY)
        return self._body

    def encode(self) -> bytes:
        if self._frame is None:
            body = self.body()
            self._frame = HEADER.pack(len(body)) + body
        return self._frame

    @classmethod
    def from_record(cls, rec: dict) -> "WireMessage":
        if rec.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {rec.get('v')!r}")
        try:
            return cls(rec["kind"], rec.get("trial"), rec.get("payload") or {})
        except KeyError:
            raise ProtocolError(f"record without a kind: {rec!r}") from None

    @classmethod
    def decode(cls, body: bytes) -> "WireMessage":
        try:
            rec = orjson.loads(body)
            if rec["v"] != PROTOCOL_VERSION or rec["kind"] not in KINDS:
                raise ProtocolError(f"bad record {body!r}")
            msg = cls.__new__(cls)
            msg.kind, msg.trial, msg.payload = rec["kind"], rec["trial"], rec["payload"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"undecodable frame {body!r}") from exc
        msg._frame = None
        msg._body = body
        return msg

    def describe(self) -> str:
        return f"{self.kind}(trial={self.trial}, payload={self.payload})"


def _write_all(fd: int, data: bytes) -> None:
    view = memoryview(data)
    while view:
        view = view[os.write(fd, view):]


class FramedStream:
    """Length-prefixed message stream over a pair of file descriptors.

    ``read_fd`` and ``write_fd`` may be the two ends of OS pipes or the same
    connected socket.
    """

    def __init__(self, read_fd: int, write_fd: int):
        self.read_fd = read_fd
        self.write_fd = write_fd
        self._buf = b""
        self._pos = 0

    def send(self, messages: Sequence[WireMessage]) -> None:
        if len(messages) == 1:
            data = messages[0].encode()
        else:
            data = b"".join([m.encode() for m in messages])
        if os.write(self.write_fd, data) != len(data):
            _write_all(self.write_fd, data)

    def _fill(self, need: int) -> None:
        # keep unread bytes, append until `need` bytes are available from _pos
        buf = self._buf[self._pos:]
        self._pos = 0
        while len(buf) < need:
            chunk = os.read(self.read_fd, 65536)
            if not chunk:
                raise ProtocolError("peer closed the stream mid-session")
            buf += chunk
        self._buf = buf

    def recv(self) -> WireMessage:
        pos = self._pos
        if len(self._buf) - pos < 4:
            self._fill(4)
            pos = 0
        (size,) = HEADER.unpack_from(self._buf, pos)
        if size > MAX_FRAME:
            raise ProtocolError(f"frame of {size} bytes exceeds limit")
        if len(self._buf) - pos < 4 + size:
            self._fill(4 + size)
            pos = 0
        self._pos = pos + 4 + size
        return WireMessage.decode(self._buf[pos + 4:pos + 4 + size])

    def close(self) -> None:
        for fd in {self.read_fd, self.write_fd}:
            try:
                os.close(fd)
            except OSError:
                pass


def duplex_pipe() -> tuple[FramedStream, FramedStream]:
    """Two connected message streams built from a pair of OS pipes."""
    r1, w1 = os.pipe()
    r2, w2 = os.pipe()
    return FramedStream(r1, w2), FramedStream(r2, w1)


# --- endpoints ------------------------------------------------------------


class Endpoint:
    """Single-threaded message handler; ``handle`` returns the replies."""

    role = "endpoint"

    def __init__(self):
        self.wiring: Optional[Wiring] = None
        self.greeted = False
        self.finished = False

    def handle(self, msg: WireMessage) -> list[WireMessage]:
        if not self.greeted:
            if msg.kind != "HELLO":
                raise ProtocolError(f"{self.role}: first message must be HELLO, got {msg.describe()}")
            if msg.payload.get("role") != self.role:
                raise ProtocolError(f"{self.role}: HELLO addressed to {msg.payload.get('role')!r}")
            self.wiring = Wiring(msg.payload["wiring"])
            self.greeted = True
            return [WireMessage("HELLO", None, {"role": self.role})]
        if msg.kind == "HELLO":
            raise ProtocolError(f"{self.role}: duplicate HELLO")
        if msg.kind == "DONE":
            self.finished = True
            return [WireMessage("DONE", None, {"role": self.role})]
        return self.on_message(msg)

    def on_message(self, msg: WireMessage) -> list[WireMessage]:
        raise NotImplementedError


class SourceEndpoint(Endpoint):
    """Emits one polarization per trial, addressed to both stations.

    ``law`` is an :class:`AtomLaw` or :class:`UniformLaw` for CAUSAL wiring,
    or a retro model (anything with ``draw_lambda(a, b, u)``) for RETRO.
    """

    role = "source"

    def __init__(self, law, seed: int):
        super().__init__()
        self.law = law
        self.rng = CachedStream(RandomStream(seed, SOURCE_STREAM))
        self._settings: dict[str, float] = {}
        self._trial: Optional[int] = None

    def on_message(self, msg):
        if msg.kind == "SETTING":
            if self.wiring is Wiring.CAUSAL:
                raise ProtocolError(f"source: wiring violation, CAUSAL source received {msg.describe()}")
            if self._trial is not None and msg.trial != self._trial:
                self._settings.clear()
            self._trial = msg.trial
            side = msg.payload.get("side")
            if side not in ("left", "right") or side in self._settings:
                raise ProtocolError(f"source: bad SETTING {msg.describe()}")
            self._settings[side] = float(msg.payload["angle"])
            return []
        if msg.kind == "EMIT":
            u = self.rng(msg.trial)[0]
            if self.wiring is Wiring.RETRO:
                if self._trial != msg.trial or len(self._settings) != 2:
                    raise ProtocolError(f"source: EMIT before both settings arrived, {msg.describe()}")
                lam = self.law.draw_lambda(self._settings["left"], self._settings["right"], u)
                self._settings.clear()
                self._trial = None
            else:
                lam = float(self.law.sample(np.array([u]))[0])
            return [WireMessage("PHOTON", msg.trial, {"to": side, "lambda": lam}) for side in ("left", "right")]
        raise ProtocolError(f"source: unexpected {msg.describe()}")


class StationEndpoint(Endpoint):
    """Applies its own setting to an incoming photon; ``law(setting, lam)`` is P(+1)."""

    def __init__(self, side: str, seed: int, law: Callable = malus_plus_scalar):
        super().__init__()
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        self.role = side
        self.law = law
        self.rng = CachedStream(RandomStream(seed, STATION_STREAMS[side]))
        self._setting: Optional[tuple[int, float]] = None

    def on_message(self, msg):
        if msg.kind == "SETTING":
            self._setting = (msg.trial, float(msg.payload["angle"]))
            return []
        if msg.kind == "PHOTON":
            if self._setting is None or self._setting[0] != msg.trial:
                raise ProtocolError(f"{self.role}: PHOTON without a setting, {msg.describe()}")
            setting = self._setting[1]
            p = float(self.law(setting, float(msg.payload["lambda"])))
            outcome = 1 if self.rng(msg.trial)[0] < p else -1
            self._setting = None
            return [WireMessage("RESULT", msg.trial, {"side": self.role, "outcome": outcome})]
        raise ProtocolError(f"{self.role}: unexpected {msg.describe()}")


def serve(endpoint: Endpoint, link: FramedStream) -> None:
    """Blocking message loop for an endpoint running in its own process."""
    try:
        while not endpoint.finished:
            msg = link.recv()
            try:
                replies = endpoint.handle(msg)
            except ProtocolError as exc:
                link.send([WireMessage("DONE", None, {"role": endpoint.role, "error": str(exc)})])
                return
            if replies:
                link.send(replies)
    finally:
        link.close()


# --- transcript audit -----------------------------------------------------


@dataclass
class AuditVerdict:
    declared: Optional[Wiring]
    derived: Optional[Wiring]
    trials: int
    retro_trials: int
    matches: bool
    problems: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "declared": self.declared.value if self.declared else None,
            "derived": self.derived.value if self.derived else None,
            "trials": self.trials,
            "retro_trials": self.retro_trials,
            "matches": self.matches,
            "problems": self.problems,
        }


class StreamingAudit:
    """Re-derives the wiring from message order, one transcript record at a time.

    A trial counts as retro-wired when a SETTING reached the source before
    that trial's EMIT. Records are dicts with ``src``, ``dst``, ``kind``,
    ``trial`` and ``payload``.
    """

    MAX_PROBLEMS = 20

    def __init__(self):
        self.declared: Optional[Wiring] = None
        self._open: dict[int, list] = {}  # trial -> [settings_to_source, emitted, results]
        self.trials = 0
        self.retro_trials = 0
        self.full_retro_trials = 0
        self._hello = set()
        self._done = set()
        self.problems: list[str] = []

    def _problem(self, text: str) -> None:
        if len(self.problems) < self.MAX_PROBLEMS:
            self.problems.append(text)

    def feed(self, rec: dict) -> None:
        try:
            self.observe(rec["src"], rec["dst"], rec["kind"], rec.get("trial"), rec.get("payload") or {})
        except KeyError as exc:
            raise TranscriptError(f"malformed transcript record {rec!r}") from exc

    def observe(self, src: str, dst: str, kind: str, trial: Optional[int], payload: dict) -> None:
        if kind == "HELLO":
            if src == "coordinator":
                wiring = Wiring(payload["wiring"])
                if self.declared is not None and wiring is not self.declared:
                    self._problem("HELLO messages declare different wirings")
                self.declared = wiring
            else:
                self._hello.add(src)
            return
        if kind == "DONE":
            if src != "coordinator":
                self._done.add(src)
            return
        if trial is None:
            raise TranscriptError(f"{kind} record without a trial index")
        state = self._open.setdefault(trial, [0, False, 0])
        if kind == "SETTING" and dst == "source":
            if state[1]:
                self._problem(f"trial {trial}: SETTING reached the source after EMIT")
            else:
                state[0] += 1
        elif kind == "EMIT":
            if state[1]:
                self._problem(f"trial {trial}: repeated EMIT")
            state[1] = True
        elif kind == "RESULT":
            state[2] += 1
            if state[2] == 2:
                self._close(trial)

    def _close(self, trial: int) -> None:
        settings, emitted, _ = self._open.pop(trial)
        if not emitted:
            self._problem(f"trial {trial}: results without EMIT")
        self.trials += 1
        if settings:
            self.retro_trials += 1
        if settings == 2:
            self.full_retro_trials += 1

    def verdict(self) -> AuditVerdict:
        if set(ROLES) - self._hello:
            raise TranscriptError(f"transcript truncated: no HELLO from {sorted(set(ROLES) - self._hello)}")
        if self._open:
            first = min(self._open)
            raise TranscriptError(f"transcript truncated: trial {first} incomplete")
        if set(ROLES) - self._done:
            raise TranscriptError(f"transcript truncated: no DONE from {sorted(set(ROLES) - self._done)}")
        if self.trials == 0:
            derived = None
        else:
            derived = Wiring.RETRO if self.retro_trials else Wiring.CAUSAL
        problems = list(self.problems)
        if derived is Wiring.RETRO and self.full_retro_trials != self.trials:
            problems.append(f"{self.trials - self.full_retro_trials} trials lack both settings at the source")
        matches = (derived is None or derived is self.declared) and not problems
        if derived is not None and derived is not self.declared:
            problems.append(f"declared {self.declared.value if self.declared else None}, "
                            f"message order shows {derived.value}")
        return AuditVerdict(self.declared, derived, self.trials, self.retro_trials, matches, problems)


def transcript_audit(records: Iterable[dict]) -> AuditVerdict:
    audit = StreamingAudit()
    for rec in records:
        audit.feed(rec)
    return audit.verdict()


def save_transcript(records: Iterable[dict], path: Union[str, Path]) -> None:
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(orjson.dumps(rec, option=orjson.OPT_APPEND_NEWLINE | orjson.OPT_SERIALIZE_NUMPY))


def load_transcript(path: Union[str, Path]) -> list[dict]:
    with open(path, "rb") as fh:
        return [orjson.loads(line) for line in fh if line.strip()]


# --- coordinator ----------------------------------------------------------


def _record(seq: int, src: str, dst: str, msg: WireMessage) -> dict:
    return {"seq": seq, "src": src, "dst": dst, "v": PROTOCOL_VERSION,
            "kind": msg.kind, "trial": msg.trial, "payload": msg.payload}


@dataclass
class WireRun:
    trials: TrialSet
    wiring: Wiring
    verdict: AuditVerdict
    entries: Optional[list[tuple]] = None

    @property
    def transcript(self) -> Optional[list[dict]]:
        """Transcript records in arrival order, or None if not kept."""
        if self.entries is None:
            return None
        return [_record(i, src, dst, msg) for i, (src, dst, msg) in enumerate(self.entries)]


class _Peer:
    """Coordinator-side handle on one endpoint, local or in another process."""

    def __init__(self, role: str, endpoint: Endpoint, in_process: bool):
        self.role = role
        self.link, theirs = duplex_pipe()
        self.endpoint = endpoint
        self.process = None
        if in_process:
            self.remote = theirs
        else:
            self.remote = None
            ctx = multiprocessing.get_context("fork")
            self.process = ctx.Process(target=serve, args=(endpoint, theirs), daemon=True)
            self.process.start()
            theirs.close()

    def pump(self, count: int) -> None:
        """Let a local endpoint consume ``count`` frames and answer them."""
        if self.remote is None:
            return
        for _ in range(count):
            replies = self.endpoint.handle(self.remote.recv())
            if replies:
                self.remote.send(replies)

    def close(self) -> None:
        self.link.close()
        if self.remote is not None:
            self.remote.close()
        if self.process is not None:
            self.process.join(timeout=5)
            if self.process.is_alive():
                self.process.terminate()


def _schedule(settings, n: int):
    if callable(settings):
        return settings
    arr = np.asarray(settings, dtype=float)
    if arr.shape == (2,):
        a, b = float(arr[0]), float(arr[1])
        return lambda t: (a, b)
    if arr.shape != (n, 2):
        raise ValueError(f"settings schedule must have {n} (a, b) entries")
    return lambda t: (float(arr[t, 0]), float(arr[t, 1]))


def run_wire_experiment(wiring: Union[Wiring, str], source_law, settings, n: int, seed: int, *,
                        station_law: Callable = malus_plus_scalar, processes: bool = False,
                        keep_transcript: bool = True) -> WireRun:
    """Run ``n`` trials through the three endpoints, one trial at a time.

    ``settings`` is a fixed (a, b) pair, an (n, 2) schedule or a callable
    ``t -> (a, b)``. With ``processes=True`` each endpoint runs in a forked
    process; otherwise endpoints are pumped in this thread over the same
    pipes. The transcript is always audited as it is produced; pass
    ``keep_transcript=False`` to avoid holding it in memory.
    """
    wiring = Wiring(wiring)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if wiring is Wiring.RETRO and not hasattr(source_law, "draw_lambda"):
        raise ValueError("RETRO wiring needs a settings-dependent source law")
    if wiring is Wiring.CAUSAL and not isinstance(source_law, (AtomLaw, UniformLaw)):
        raise ValueError("CAUSAL wiring needs a settings-independent lambda law")
    schedule = _schedule(settings, n)

    in_process = not processes
    peers = {
        "source": _Peer("source", SourceEndpoint(source_law, seed), in_process),
        "left": _Peer("left", StationEndpoint("left", seed, station_law), in_process),
        "right": _Peer("right", StationEndpoint("right", seed, station_law), in_process),
    }
    entries: Optional[list[tuple]] = [] if keep_transcript else None
    audit = StreamingAudit()

    def log(src, dst, msg: WireMessage):
        audit.observe(src, dst, msg.kind, msg.trial, msg.payload)
        if entries is not None:
            entries.append((src, dst, msg))

    def send(role: str, msgs: list[WireMessage]):
        if role == "source" and wiring is Wiring.CAUSAL:
            for m in msgs:
                if m.kind == "SETTING":
                    raise ProtocolError(f"coordinator: refusing to route {m.describe()} to a CAUSAL source")
        for m in msgs:
            log("coordinator", role, m)
        peer = peers[role]
        peer.link.send(msgs)
        peer.pump(len(msgs))

    def recv(role: str, kind: str) -> WireMessage:
        msg = peers[role].link.recv()
        log(role, "coordinator", msg)
        if msg.kind == "DONE" and "error" in msg.payload:
            raise ProtocolError(msg.payload["error"])
        if msg.kind != kind:
            raise ProtocolError(f"coordinator: expected {kind} from {role}, got {msg.describe()}")
        return msg

    a_col = np.empty(n)
    b_col = np.empty(n)
    A_col = np.empty(n, dtype=np.int8)
    B_col = np.empty(n, dtype=np.int8)
    lam_col = np.empty(n)
    try:
        for role in ROLES:
            send(role, [WireMessage("HELLO", None, {"role": role, "wiring": wiring.value, "seed": seed})])
            recv(role, "HELLO")
        for t in range(n):
            a, b = schedule(t)
            a_col[t], b_col[t] = a, b
            set_left = WireMessage("SETTING", t, {"side": "left", "angle": a})
            set_right = WireMessage("SETTING", t, {"side": "right", "angle": b})
            to_source = [WireMessage("EMIT", t, {})]
            if wiring is Wiring.RETRO:
                to_source = [set_left, set_right] + to_source
            send("source", to_source)
            photons = {}
            for _ in range(2):
                ph = recv("source", "PHOTON")
                photons[ph.payload["to"]] = ph
            lam_col[t] = photons["left"].payload["lambda"]
            # stations get their setting while the photon is in flight
            for side, col, setting in (("left", A_col, set_left), ("right", B_col, set_right)):
                send(side, [setting, photons[side]])
                res = recv(side, "RESULT")
                if res.trial != t:
                    raise ProtocolError(f"coordinator: RESULT for trial {res.trial} during trial {t}")
                col[t] = res.payload["outcome"]
        for role in ROLES:
            send(role, [WireMessage("DONE", None, {})])
            recv(role, "DONE")
    finally:
        for peer in peers.values():
            peer.close()

    trials = TrialSet(np.arange(n), a_col, b_col, A_col, B_col, hidden=lam_col,
                      retro_order=wiring is Wiring.RETRO)
    return WireRun(trials, wiring, audit.verdict(), entries)
