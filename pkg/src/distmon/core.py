"""Time-stepped execution model: traces, message ledger, randomness, scheduler."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

SERVER = -1
BROADCAST = "broadcast"
UNICAST = "unicast"


class RoundBudgetExceeded(RuntimeError):
    """A protocol scheduled a message outside its declared sub-round budget."""


class TraceFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogParams:
    """Height cap ``L = ceil(log2 n)`` (1 when n == 1) and the squared round space."""

    L: int
    L2: int

    @classmethod
    def for_nodes(cls, n: int) -> "LogParams":
        if n < 1:
            raise ValueError("node count must be positive")
        L = max(1, math.ceil(math.log2(n))) if n > 1 else 1
        return cls(L, L * L)


@dataclass(eq=False)
class StreamTrace:
    """Observed values ``values[t-1, i]`` for nodes ``i = 0..n-1`` and steps ``t = 1..T``."""

    values: np.ndarray
    delta: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise TraceFormatError("trace values must be a (T, n) matrix")
        T, n = self.values.shape
        if T < 1 or n < 1 or self.delta < 1:
            raise TraceFormatError(f"need n, T, delta >= 1 (got n={n}, T={T}, delta={self.delta})")
        lo, hi = int(self.values.min()), int(self.values.max())
        if lo < 1 or hi > self.delta:
            raise TraceFormatError(f"values must lie in 1..{self.delta}, found range {lo}..{hi}")
        self.values.setflags(write=False)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def log(self) -> LogParams:
        return LogParams.for_nodes(self.n)

    def at(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.T:
            raise IndexError(f"time step {t} outside 1..{self.T}")
        return self.values[t - 1]

    def __eq__(self, other):
        if not isinstance(other, StreamTrace):
            return NotImplemented
        return self.delta == other.delta and np.array_equal(self.values, other.values)

    # text format: header "n T delta", then one line of n values per step
    def dumps(self) -> str:
        lines = [f"{self.n} {self.T} {self.delta}"]
        lines.extend(" ".join(map(str, row)) for row in self.values.tolist())
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "StreamTrace":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 3:
            raise TraceFormatError("header must be 'n T delta'")
        try:
            n, T, delta = (int(x) for x in rows[0])
            body = np.array([[int(x) for x in r] for r in rows[1:]], dtype=np.int64)
        except ValueError as exc:
            raise TraceFormatError(f"non-integer token: {exc}") from None
        if body.shape != (T, n):
            raise TraceFormatError(f"expected {T} lines of {n} values, got shape {body.shape}")
        return cls(body, delta)

    @classmethod
    def read(cls, path) -> "StreamTrace":
        try:
            return cls.loads(Path(path).read_text())
        except TraceFormatError as exc:
            raise TraceFormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------


class MessageLedger:
    """Append-only record of every message, stored as columnar chunks.

    Each chunk shares ``t``, protocol tag, kind and payload class; rounds,
    origins and the value each message concerns are per-message arrays.
    Origin ``SERVER`` (-1) marks server broadcasts.
    """

    def __init__(self):
        self._chunks: list[tuple] = []
        self._total = 0
        self._by_t: dict[int, int] = {}
        self._max_round: dict[tuple[str, int], int] = {}

    def record(self, t: int, rounds, protocol: str, origins, kind: str = BROADCAST, payload: str = "", values=None) -> int:
        origins = np.atleast_1d(np.asarray(origins, dtype=np.int64))
        k = origins.size
        if k == 0:
            return 0
        rounds = np.broadcast_to(np.asarray(rounds, dtype=np.int64), (k,))
        vals = np.broadcast_to(np.asarray(0 if values is None else values, dtype=np.int64), (k,))
        self._chunks.append((int(t), rounds, protocol, origins, kind, payload, vals))
        self._total += k
        self._by_t[int(t)] = self._by_t.get(int(t), 0) + k
        key = (protocol, int(t))
        self._max_round[key] = max(self._max_round.get(key, -1), int(rounds.max()))
        return k

    def __len__(self) -> int:
        return self._total

    def total(self, t: int | None = None) -> int:
        if t is None:
            return self._total
        return self._by_t.get(t, 0)

    def per_step(self, T: int) -> np.ndarray:
        out = np.zeros(T, dtype=np.int64)
        for t, c in self._by_t.items():
            out[t - 1] = c
        return out

    def count(self, *, protocol=None, t=None, kind=None, payload=None, server=None, since=None) -> int:
        total = 0
        for ct, rounds, proto, origins, ckind, cpay, _ in self._chunks:
            if protocol is not None and proto != protocol:
                continue
            if t is not None and ct != t:
                continue
            if since is not None and ct < since:
                continue
            if kind is not None and ckind != kind:
                continue
            if payload is not None and cpay != payload:
                continue
            if server is None:
                total += origins.size
            elif server:
                total += int(np.count_nonzero(origins == SERVER))
            else:
                total += int(np.count_nonzero(origins != SERVER))
        return total

    def max_round(self, protocol: str, t: int) -> int:
        return self._max_round.get((protocol, t), -1)

    def unicast_cost(self) -> int:
        """Cost when each node broadcast is replaced by a unicast plus a server broadcast."""
        node = self.count(server=False, kind=BROADCAST)
        return self._total + node

    def rows(self) -> Iterable[tuple]:
        for t, rounds, proto, origins, kind, payload, vals in self._chunks:
            for r, o, v in zip(rounds.tolist(), origins.tolist(), vals.tolist()):
                yield t, r, proto, ("server" if o == SERVER else o), kind, payload, v

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "round", "protocol", "origin", "kind"])
            for t, r, proto, origin, kind, _, _ in self.rows():
                w.writerow([t, r, proto, origin, kind])


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------


class RngContext:
    """Seeded randomness for one simulation run.

    ``nodes`` is the private randomness of the nodes, consumed in node-id
    order by vectorised draws; ``server`` is the server's private stream;
    public-coin seeds come from a third, independent child stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        ss = np.random.SeedSequence(self.seed)
        server_ss, nodes_ss, public_ss = ss.spawn(3)
        self.server = np.random.default_rng(server_ss)
        self.nodes = np.random.default_rng(nodes_ss)
        self._public = np.random.default_rng(public_ss)

    def public_seed(self) -> int:
        return int(self._public.integers(0, 2**63))


def draw_heights(stream, size, cap: int) -> np.ndarray:
    """``size`` capped geometric(1/2) heights: P[h=k] = 2^-k for k < cap, P[h=cap] = 2^-(cap-1)."""
    if cap < 1:
        raise ValueError("height cap must be >= 1")
    dt = _kernels.word_dtype(cap)
    bits = np.dtype(dt).itemsize * 8
    words = stream.integers(0, 2**bits, size=size, dtype=dt)
    return _kernels.decode_heights(words, cap)


def geometric_height(stream, cap: int) -> int:
    return int(draw_heights(stream, 1, cap)[0])


def height_pmf(cap: int) -> np.ndarray:
    """Exact pmf of a capped height, index k-1 -> P[h = k]."""
    pmf = np.array([2.0**-k for k in range(1, cap + 1)])
    pmf[-1] = 2.0 ** -(cap - 1)
    return pmf


# ---------------------------------------------------------------------------
# scheduler
# ---------------------------------------------------------------------------


@dataclass
class StepContext:
    """Everything one protocol sees while executing a single time step."""

    t: int
    values: np.ndarray
    prev: np.ndarray | None
    delta: int
    rng: RngContext
    ledger: MessageLedger
    protocol: str = "adhoc"
    round_budget: int = 1 << 40
    log: LogParams = None
    next_round: int = 0

    def __post_init__(self):
        if self.log is None:
            self.log = LogParams.for_nodes(self.values.size)

    @property
    def n(self) -> int:
        return self.values.size

    @classmethod
    def single(cls, values, delta: int, rng: RngContext, ledger: MessageLedger | None = None, **kw) -> "StepContext":
        values = np.asarray(values, dtype=np.int64)
        return cls(t=kw.pop("t", 1), values=values, prev=kw.pop("prev", None), delta=delta, rng=rng,
                   ledger=MessageLedger() if ledger is None else ledger, **kw)

    def block(self, size: int) -> int:
        """Reserve ``size`` consecutive sub-rounds; returns the first one."""
        base = self.next_round
        self.next_round += size
        if self.next_round > self.round_budget:
            raise RoundBudgetExceeded(
                f"{self.protocol} at t={self.t} needs sub-round {self.next_round - 1}, budget {self.round_budget}"
            )
        return base

    def send(self, rounds, origins, payload: str, values=None, kind: str = BROADCAST) -> int:
        return self.ledger.record(self.t, rounds, self.protocol, origins, kind, payload, values)

    def announce(self, round_: int, payload: str, value: int = 0) -> None:
        self.ledger.record(self.t, round_, self.protocol, SERVER, BROADCAST, payload, value)


class Protocol:
    """Base class for monitoring protocols driven by :func:`run_step`."""

    tag = "protocol"

    def __init__(self, trace: StreamTrace, rng: RngContext):
        self.trace = trace
        self.rng = rng
        self.log = trace.log
        self.round_budget = 1

    def step(self, ctx: StepContext) -> Any:
        raise NotImplementedError


@dataclass
class StepTranscript:
    t: int
    outputs: dict[str, Any] = field(default_factory=dict)
    messages: int = 0


def run_step(trace: StreamTrace, t: int, protocols: Sequence[Protocol], ledger: MessageLedger) -> StepTranscript:
    """Execute every protocol's sub-round schedule for step ``t``."""
    if not 1 <= t <= trace.T:
        raise IndexError(f"time step {t} outside 1..{trace.T}")
    before = ledger.total()
    out = StepTranscript(t)
    values = trace.at(t)
    prev = trace.at(t - 1) if t > 1 else None
    for proto in protocols:
        if proto.trace is not trace:
            raise ValueError(f"protocol {proto.tag!r} is registered against a different trace")
        ctx = StepContext(t, values, prev, trace.delta, proto.rng, ledger, proto.tag, proto.round_budget, trace.log)
        out.outputs[proto.tag] = proto.step(ctx)
        last = ledger.max_round(proto.tag, t)
        if last >= proto.round_budget:
            raise RoundBudgetExceeded(f"{proto.tag} used sub-round {last} at t={t}, budget {proto.round_budget}")
        polylog = (trace.log.L + 1) ** 3
        if ctx.next_round > polylog:
            logger.debug("%s used %d sub-rounds at t=%d (> %d)", proto.tag, ctx.next_round, t, polylog)
    out.messages = ledger.total() - before
    return out


def simulate(trace: StreamTrace, protocols: Sequence[Protocol], ledger: MessageLedger | None = None):
    """Run all steps; returns (transcripts, ledger)."""
    ledger = MessageLedger() if ledger is None else ledger
    transcripts = [run_step(trace, t, protocols, ledger) for t in range(1, trace.T + 1)]
    return transcripts, ledger
