"""Exact domain monitoring: the max-height broadcast primitive and the
phase-based representative protocol built on it."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import MessageLedger, Protocol, RngContext, StepContext, StreamTrace, draw_heights, simulate

NIL = -1


@dataclass
class Responses:
    """Nodes that broadcast during one max-height invocation."""

    nodes: np.ndarray
    values: np.ndarray
    heights: np.ndarray

    def __len__(self) -> int:
        return self.nodes.size

    @property
    def distinct(self) -> np.ndarray:
        return np.unique(self.values)

    def for_value(self, v: int) -> np.ndarray:
        return self.nodes[self.values == v]

    @classmethod
    def empty(cls) -> "Responses":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy())


def propagate(ctx: StepContext, participants: np.ndarray, heights=None, payload: str = "value") -> Responses:
    """Run one max-height invocation among ``participants`` (node ids).

    Each participant draws a capped geometric height ``h`` and is scheduled
    for sub-round ``L - h`` of a fresh block of ``L + 1`` sub-rounds; it is
    suppressed once a node with the same value has broadcast.  Hence exactly
    the max-height observers of each value broadcast.
    """
    L = ctx.log.L
    base = ctx.block(L + 1)
    participants = np.asarray(participants, dtype=np.int64)
    if participants.size == 0:
        return Responses.empty()
    if heights is None:
        heights = draw_heights(ctx.rng.nodes, participants.size, L)
    else:
        heights = np.asarray(heights, dtype=np.int64)
    vals = ctx.values[participants]
    top = _kernels.group_max_mask(vals, heights, ctx.delta + 1)
    res = Responses(participants[top], vals[top], heights[top])
    ctx.send(base + L - res.heights, res.nodes, payload, res.values)
    return res


def propagate_max(ctx: StepContext, v: int | None = None, status: int = 1, node_status=None, heights=None) -> Responses:
    """PropagateMax(v, status): nodes with matching status (and value ``v`` unless nil) take part."""
    mask = np.ones(ctx.n, dtype=bool) if node_status is None else (np.asarray(node_status) == status)
    if v is not None:
        mask &= ctx.values == v
    return propagate(ctx, np.flatnonzero(mask), heights)


@dataclass
class DomainSnapshot:
    t: int
    domain: frozenset
    representatives: dict
    phase: dict

    def rows(self):
        for v in sorted(self.domain):
            yield self.t, v, self.representatives[v], self.phase.get(v, 0)


def write_snapshots(snapshots, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value", "representative", "phase"])
        for snap in snapshots:
            w.writerows(snap.rows())


@dataclass
class PhaseRecord:
    value: int
    phase: int
    start: int
    end: int | None = None


class DomainState:
    """Server and node state of the representative protocol.

    Node replicas of the domain are not stored separately: every update of
    the server's view is a broadcast, so all replicas equal ``in_domain``.
    ``tracked`` restricts the protocol to a subset of values (all by default).
    """

    def __init__(self, n: int, delta: int, tracked: np.ndarray | None = None):
        self.n = n
        self.delta = delta
        self.tracked = np.ones(delta + 1, dtype=bool) if tracked is None else np.asarray(tracked, dtype=bool)
        self.tracked[0] = False
        self.status = np.zeros(n, dtype=np.int8)
        self.rep = np.full(delta + 1, NIL, dtype=np.int64)
        self.phase = np.zeros(delta + 1, dtype=np.int64)
        self.in_domain = np.zeros(delta + 1, dtype=bool)
        self.phases: list[PhaseRecord] = []
        self._open: dict[int, PhaseRecord] = {}
        self.rep_changes = 0

    # -- helpers -------------------------------------------------------------

    def _start_phase(self, ctx: StepContext, v: int, responders: np.ndarray, round_: int) -> None:
        self._end_phase(ctx.t, v)
        self.rep[v] = ctx.rng.server.choice(responders)
        self.phase[v] += 1
        self.in_domain[v] = True
        self.status[ctx.values == v] = 1
        rec = PhaseRecord(v, int(self.phase[v]), ctx.t)
        self.phases.append(rec)
        self._open[v] = rec
        ctx.announce(round_, "new-phase", v)

    def _end_phase(self, t: int, v: int) -> None:
        rec = self._open.pop(v, None)
        if rec is not None:
            rec.end = t - 1

    def install(self, ctx: StepContext, responses: Responses) -> None:
        """Start a phase for every value answering a status-1 nil invocation."""
        self.status[:] = 0
        self.status[self.tracked[ctx.values]] = 1
        last = ctx.next_round - 1
        before = self.rep.copy()
        for v in responses.distinct.tolist():
            self._start_phase(ctx, v, responses.for_value(v), last)
        self.rep_changes += int(np.count_nonzero(before != self.rep))

    def initialize(self, ctx: StepContext) -> None:
        self.status[:] = 1
        participants = np.flatnonzero(self.tracked[ctx.values])
        self.install(ctx, propagate(ctx, participants))

    def advance(self, ctx: StepContext):
        """Apply one step of churn; returns (values added, values removed)."""
        cur, prev = ctx.values, ctx.prev
        before = self.rep.copy()
        changed = np.flatnonzero(cur != prev)
        self.status[changed] = 0

        # representatives that stopped observing their value tell the server
        old = prev[changed]
        notifiers = changed[self.rep[old] == changed]
        if notifiers.size:
            ctx.send(ctx.block(1), notifiers, "notify", prev[notifiers])

        # nodes that took up a value outside the current domain
        fresh = changed[self.tracked[cur[changed]] & ~self.in_domain[cur[changed]]]
        added = []
        if fresh.size:
            res = propagate(ctx, fresh)
            for v in res.distinct.tolist():
                self._start_phase(ctx, v, res.for_value(v), ctx.next_round - 1)
                added.append(v)

        removed = []
        for v in sorted(prev[notifiers].tolist()):
            on_v = cur == v
            res = propagate(ctx, np.flatnonzero(on_v & (self.status == 1)))
            react = ctx.next_round - 1
            if len(res):
                self.rep[v] = ctx.rng.server.choice(res.nodes)
                ctx.announce(react, "rep-assign", v)
                continue
            res = propagate(ctx, np.flatnonzero(on_v & (self.status == 0)))
            react = ctx.next_round - 1
            if len(res):
                self._start_phase(ctx, v, res.nodes, react)
            else:
                self._end_phase(ctx.t, v)
                self.rep[v] = NIL
                self.in_domain[v] = False
                ctx.announce(react, "delete", v)
                removed.append(v)
        self.rep_changes += int(np.count_nonzero(before != self.rep))
        return added, removed

    def close(self, T: int) -> None:
        for v in list(self._open):
            self._open.pop(v).end = T

    def snapshot(self, t: int) -> DomainSnapshot:
        dom = np.flatnonzero(self.in_domain)
        return DomainSnapshot(
            t,
            frozenset(dom.tolist()),
            {int(v): int(self.rep[v]) for v in dom},
            {int(v): int(self.phase[v]) for v in dom},
        )


def domain_round_budget(log, delta: int) -> int:
    # notify block + newcomer block + two invocations per notified value
    return 1 + (log.L + 1) * (1 + 2 * delta)


class DomainMonitor(Protocol):
    """Phase-based representative maintenance for the full domain."""

    tag = "domain"

    def __init__(self, trace: StreamTrace, rng: RngContext):
        super().__init__(trace, rng)
        self.state = DomainState(trace.n, trace.delta)
        self.round_budget = domain_round_budget(self.log, trace.delta)

    def step(self, ctx: StepContext) -> DomainSnapshot:
        if ctx.t == 1:
            self.state.initialize(ctx)
        else:
            self.state.advance(ctx)
        if ctx.t == self.trace.T:
            self.state.close(ctx.t)
        return self.state.snapshot(ctx.t)


class PropagateMaxMonitor(Protocol):
    """Recompute the domain from scratch every step with one nil invocation."""

    tag = "propagate-max"

    def __init__(self, trace: StreamTrace, rng: RngContext):
        super().__init__(trace, rng)
        self.round_budget = self.log.L + 1
        self.responders_per_value: list[float] = []

    def step(self, ctx: StepContext) -> DomainSnapshot:
        res = propagate(ctx, np.arange(ctx.n))
        reps = {}
        for v in res.distinct.tolist():
            reps[v] = int(ctx.rng.server.choice(res.for_value(v)))
        self.responders_per_value.append(len(res) / max(len(reps), 1))
        return DomainSnapshot(ctx.t, frozenset(reps), reps, {})


@dataclass
class DomainRun:
    snapshots: list
    ledger: MessageLedger
    state: DomainState
    rep_changes: int = field(init=False)

    def __post_init__(self):
        self.rep_changes = self.state.rep_changes


def run_domain_monitoring(trace: StreamTrace, rng: RngContext | int = 0) -> DomainRun:
    rng = RngContext(rng) if isinstance(rng, int) else rng
    mon = DomainMonitor(trace, rng)
    transcripts, ledger = simulate(trace, [mon])
    return DomainRun([tr.outputs[mon.tag] for tr in transcripts], ledger, mon.state)
