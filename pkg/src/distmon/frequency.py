"""Frequency estimation: constant-factor height estimator, median
amplification, the sampling (eps, delta) estimator and its churn-tracking
continuous variant."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Protocol, RngContext, StepContext, StreamTrace, simulate
from .domain import propagate

SAMPLING_CONSTANT = 24.0


@dataclass
class FrequencyEstimate:
    value: int
    const_estimate: int | None
    estimate: float
    raw_count: int
    p: float
    epoch_id: int = 0
    flags: tuple = ()

    def row(self, t: int):
        return [t, self.value, repr(self.estimate), self.raw_count, repr(self.p), self.epoch_id, "|".join(self.flags)]


def write_estimates(per_step, path) -> None:
    """``per_step``: sequence of ``{value: FrequencyEstimate}`` dicts, index 0 is t=1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value", "estimate", "raw_count", "p", "epoch_id", "flags"])
        for t, ests in enumerate(per_step, start=1):
            for v in sorted(ests):
                w.writerow(ests[v].row(t))


def amplification_count(delta_prime: float) -> int:
    """Number of independent instances whose median fails with prob <= delta_prime."""
    if not 0.0 < delta_prime < 1.0:
        raise ValueError("failure parameter must lie in (0, 1)")
    return math.ceil(22.5 * math.log(1.0 / delta_prime))


def lower_median(xs) -> int:
    xs = sorted(xs)
    return xs[(len(xs) - 1) // 2]


def sampling_probability(eps: float, delta_prime: float, const_estimate: float, c: float = SAMPLING_CONSTANT) -> float:
    return min(1.0, c / (eps * eps * const_estimate) * math.log(1.0 / delta_prime))


def _const_factor_instances(ctx: StepContext, v: int, d: int) -> np.ndarray | None:
    """``d`` parallel height instances over the observers of ``v``; one block of L+1 sub-rounds each."""
    L = ctx.log.L
    observers = np.flatnonzero(ctx.values == v)
    base = ctx.block(d * (L + 1))
    if observers.size == 0:
        return None
    dt = _kernels.word_dtype(L)
    words = ctx.rng.nodes.integers(0, 2 ** (np.dtype(dt).itemsize * 8), size=(d, observers.size), dtype=dt)
    heights = _kernels.decode_heights(words, L)
    best, rows, cols = _kernels.rowwise_max_ties(heights)
    ctx.send(base + rows * (L + 1) + L - best[rows], observers[cols], "height", v)
    return np.left_shift(1, best)


def const_factor_freq(ctx: StepContext, v: int) -> int | None:
    """2^(max height) among the observers of ``v``; None when nobody observes it."""
    est = _const_factor_instances(ctx, v, 1)
    return None if est is None else int(est[0])


def const_factor_freq_amplified(ctx: StepContext, v: int, delta_prime: float) -> int | None:
    est = _const_factor_instances(ctx, v, amplification_count(delta_prime))
    return None if est is None else int(lower_median(est.tolist()))


def eps_factor_freq(ctx: StepContext, v: int, eps: float, delta: float, *, c: float = SAMPLING_CONSTANT) -> FrequencyEstimate | None:
    """(eps, delta)-estimate of the number of observers of ``v``; None when absent."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    dp = delta / 3.0
    const = const_factor_freq_amplified(ctx, v, dp)
    if const is None:
        return None
    p = sampling_probability(eps, dp, const, c)
    base = ctx.block(2)
    ctx.announce(base, "p", v)
    observers = np.flatnonzero(ctx.values == v)
    hits = observers[ctx.rng.nodes.random(observers.size) < p]
    ctx.send(base + 1, hits, "response", v)
    return FrequencyEstimate(v, const, hits.size / p, int(hits.size), p)


def eps_factor_rounds(log, delta: float) -> int:
    return amplification_count(delta / 3.0) * (log.L + 1) + 2


@dataclass
class ChurnState:
    t0: int
    n1: int
    p: float
    epoch_id: int
    cum_plus: int = 0
    cum_minus: int = 0
    steps: int = 1

    @property
    def raw(self) -> int:
        return self.n1 + self.cum_plus - self.cum_minus


class ContinuousFrequency:
    """Churn-tracking estimator for one value.

    An epoch starts with a fresh (eps/3, delta^2) estimate fixing the response
    probability p.  Afterwards only nodes entering or leaving the value answer,
    each with probability p; the epoch ends after ``max_epoch`` steps or once
    the raw churn responses reach half the initial raw count.
    """

    def __init__(self, v: int, eps: float, delta: float, max_epoch: int | None = None, c: float = SAMPLING_CONSTANT):
        if not (0 < eps < 1 and 0 < delta < 1):
            raise ValueError("eps and delta must lie in (0, 1)")
        self.v = v
        self.eps = eps
        self.delta = delta
        self.c = c
        limit = math.ceil(1.0 / delta)
        self.max_epoch = limit if max_epoch is None else max(1, min(int(max_epoch), limit))
        self.state: ChurnState | None = None
        self.epochs = 0

    def _start(self, ctx: StepContext, flags: list) -> FrequencyEstimate:
        est = eps_factor_freq(ctx, self.v, self.eps / 3.0, self.delta**2, c=self.c)
        self.epochs += 1
        flags.append("epoch-start")
        if est is None:
            self.state = ChurnState(ctx.t, 0, 1.0, self.epochs)
            flags.append("absent")
            return FrequencyEstimate(self.v, None, 0.0, 0, 1.0, self.epochs, tuple(flags))
        self.state = ChurnState(ctx.t, est.raw_count, est.p, self.epochs)
        if est.raw_count == 0:
            flags.append("zero")
        return FrequencyEstimate(self.v, est.const_estimate, est.estimate, est.raw_count, est.p, self.epochs, tuple(flags))

    def step(self, ctx: StepContext) -> FrequencyEstimate:
        st = self.state
        if st is None:
            return self._start(ctx, [])
        if st.steps >= self.max_epoch:
            return self._start(ctx, ["time-break"])
        st.steps += 1
        was = ctx.prev == self.v
        now = ctx.values == self.v
        entering = np.flatnonzero(now & ~was)
        leaving = np.flatnonzero(was & ~now)
        r = ctx.block(1)
        plus = entering[ctx.rng.nodes.random(entering.size) < st.p]
        minus = leaving[ctx.rng.nodes.random(leaving.size) < st.p]
        ctx.send(r, plus, "+", self.v)
        ctx.send(r, minus, "-", self.v)
        st.cum_plus += plus.size
        st.cum_minus += minus.size
        if st.cum_plus + st.cum_minus >= st.n1 / 2.0:
            return self._start(ctx, ["churn-break"])
        flags = ("zero",) if st.raw <= 0 else ()
        return FrequencyEstimate(self.v, None, st.raw / st.p, st.raw, st.p, st.epoch_id, flags)

    def rounds(self, log) -> int:
        return 1 + eps_factor_rounds(log, self.delta**2)


def cont_eps_factor_freq(trace: StreamTrace, v: int, eps: float, delta: float, rng: RngContext | int = 0, max_epoch=None):
    """Run the continuous estimator for one value over the whole trace."""
    rng = RngContext(rng) if isinstance(rng, int) else rng
    mon = FrequencyContinuous(trace, rng, eps, delta, tracked=[v], max_epoch=max_epoch, per_value_delta=delta)
    transcripts, ledger = simulate(trace, [mon])
    return [tr.outputs[mon.tag][v] for tr in transcripts], ledger


class FrequencyPerStep(Protocol):
    """Identify the domain every step, then estimate each value at delta/|D_t|."""

    tag = "freq-step"

    def __init__(self, trace: StreamTrace, rng: RngContext, eps: float, delta: float):
        super().__init__(trace, rng)
        self.eps, self.delta = eps, delta
        worst = min(trace.n, trace.delta)
        self.round_budget = (self.log.L + 1) + worst * eps_factor_rounds(self.log, delta / worst)

    def step(self, ctx: StepContext) -> dict:
        dom = propagate(ctx, np.arange(ctx.n)).distinct.tolist()
        out = {}
        for v in dom:
            out[v] = eps_factor_freq(ctx, v, self.eps, self.delta / len(dom))
        return out


class FrequencyContinuous(Protocol):
    """Identify the domain once, then track every value with a churn estimator.

    Values appearing later are not part of the churn model: nodes observing an
    untracked value run a status-0 invocation, the server flags the step and
    starts a fresh estimator for each newly reported value.
    """

    tag = "freq-cont"

    def __init__(self, trace, rng, eps, delta, *, sigma=None, tracked=None, max_epoch=None, per_value_delta=None):
        super().__init__(trace, rng)
        self.eps, self.delta, self.sigma = eps, delta, sigma
        self._fixed = None if tracked is None else sorted(int(v) for v in tracked)
        self._dv = per_value_delta
        self._max_epoch = max_epoch
        self.trackers: dict[int, ContinuousFrequency] = {}
        self.known = np.zeros(trace.delta + 1, dtype=bool)
        worst = min(trace.n, trace.delta)
        per = ContinuousFrequency(1, eps, per_value_delta or delta / worst).rounds(self.log)
        self.round_budget = 2 * (self.log.L + 1) + trace.delta * per

    def _epoch_limit(self, dv: float) -> int:
        limit = math.ceil(1.0 / dv)
        if self._max_epoch is not None:
            limit = min(limit, self._max_epoch)
        if self.sigma:
            limit = min(limit, math.ceil(1.0 / (2.0 * self.sigma)))
        return limit

    def _track(self, values) -> None:
        if self._dv is None:
            self._dv = self.delta / max(len(values), 1)
        dv = self._dv
        for v in values:
            self.trackers[v] = ContinuousFrequency(v, self.eps, dv, self._epoch_limit(dv))
            self.known[v] = True

    def step(self, ctx: StepContext) -> dict:
        new_flags: dict[int, tuple] = {}
        if ctx.t == 1:
            if self._fixed is None:
                self._track(propagate(ctx, np.arange(ctx.n)).distinct.tolist())
            else:
                self._track(self._fixed)
        elif self._fixed is None:
            strangers = np.flatnonzero(~self.known[ctx.values])
            if strangers.size:
                fresh = propagate(ctx, strangers).distinct.tolist()
                self._track(fresh)
                new_flags = {v: ("new-value",) for v in fresh}
        out = {}
        for v, tr in self.trackers.items():
            est = tr.step(ctx)
            if v in new_flags:
                est.flags = est.flags + new_flags[v]
            out[v] = est
        return out
