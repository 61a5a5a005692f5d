"""Count-distinct estimation with public coins.

All parties share a SplitMix64 bit stream keyed by a seed.  Every
protocol phase consumes a statically known number of bits, so all nodes
keep their cursors in lockstep without communication, and observers of the
same value read identical bits at the value's offset.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Protocol, RngContext, StepContext, StreamTrace, draw_heights
from .domain import DomainState, Responses, propagate, propagate_max
from .frequency import SAMPLING_CONSTANT, amplification_count, lower_median

MAX_Q = 62


class PublicCoin:
    """Shared random bit string with a global cursor."""

    def __init__(self, seed: int, cursor: int = 0):
        self.seed = int(seed) & ((1 << 64) - 1)
        self.cursor = int(cursor)

    def bit(self, j: int) -> int:
        word = _kernels.public_words(self.seed, np.array([j >> 6]))[0]
        return int((int(word) >> (j & 63)) & 1)

    def take(self, nbits: int) -> int:
        """Reserve the next ``nbits`` bits; returns the offset of the first."""
        base = self.cursor
        self.cursor += nbits
        return base


def public_heights(coin: PublicCoin, values, L: int, delta: int) -> np.ndarray:
    """Public height of each entry of ``values``; consumes delta*L bits once for the whole call."""
    base = coin.take(delta * L)
    return _kernels.zero_run_heights(coin.seed, base + (np.asarray(values, dtype=np.int64) - 1) * L, L)


def public_height(coin: PublicCoin, v: int, L: int, delta: int) -> int:
    return int(public_heights(coin, [v], L, delta)[0])


def public_flips(coin: PublicCoin, values, q: int, delta: int) -> np.ndarray:
    """Success of the 2^-q public coin flip for each entry of ``values``; consumes delta*q bits."""
    base = coin.take(delta * q)
    return _kernels.zero_block_flags(coin.seed, base + (np.asarray(values, dtype=np.int64) - 1) * q, q)


@dataclass
class CoinAudit:
    """Counts value groups whose members read different public outcomes."""

    checks: int = 0
    violations: int = 0

    def check(self, node_values: np.ndarray, outcomes: np.ndarray, delta: int) -> None:
        outcomes = np.asarray(outcomes, dtype=np.int64)
        for row in np.atleast_2d(outcomes):
            self.checks += 1
            self.violations += _kernels.group_disagreements(node_values, row, delta + 1)


@dataclass
class CountDistinctEstimate:
    const_estimate: int | None
    estimate: float
    sample: frozenset
    p: float
    q: int
    epoch_id: int = 0
    flags: tuple = ()
    responses: Responses | None = field(default=None, repr=False, compare=False)
    flip_offset: int = -1

    @property
    def sample_size(self) -> int:
        return len(self.sample)

    def row(self, t: int):
        return [t, repr(self.estimate), self.sample_size, repr(self.p), self.epoch_id, "|".join(self.flags)]


def write_estimates(per_step, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "estimate", "sample_size", "p", "epoch_id", "flags"])
        for t, est in enumerate(per_step, start=1):
            w.writerow(est.row(t))


def broadcast_round(L: int, h: int, g: int) -> int:
    """Sub-round of a node whose value has public height h and whose private height is g."""
    return L * L - (h - 1) * L - g


def _cd_instances(ctx: StepContext, coin: PublicCoin, d: int, audit: CoinAudit | None) -> np.ndarray:
    L = ctx.log.L
    vals = ctx.values
    offsets = (vals - 1) * L
    bases = np.array([coin.take(ctx.delta * L) for _ in range(d)], dtype=np.int64)
    h = _kernels.zero_run_heights(coin.seed, bases[:, None] + offsets[None, :], L)
    if audit is not None:
        audit.check(vals, h, ctx.delta)
    g = draw_heights(ctx.rng.nodes, (d, ctx.n), L)
    # earliest sub-round <=> largest (h - 1) * L + g
    best, rows, cols = _kernels.rowwise_max_ties((h - 1) * L + g)
    block = ctx.block(d * L * L)
    rounds = L * L - best
    ctx.send(block + rows * L * L + rounds[rows], cols, "height", vals[cols])
    top_h = (best - 1) // L + 1
    return np.left_shift(1, top_h)


def cd_const_factor(ctx: StepContext, coin: PublicCoin, audit: CoinAudit | None = None) -> int | None:
    """2^h for the public height h carried by the first broadcast."""
    if ctx.n == 0:
        return None
    return int(_cd_instances(ctx, coin, 1, audit)[0])


def cd_const_factor_amplified(ctx: StepContext, coin: PublicCoin, delta_prime: float, audit=None) -> int | None:
    if ctx.n == 0:
        return None
    est = _cd_instances(ctx, coin, amplification_count(delta_prime), audit)
    return int(lower_median(est.tolist()))


def sampling_exponent(eps: float, delta_prime: float, const_estimate: float, c: float = SAMPLING_CONSTANT) -> int:
    """q with p = 2^-q the smallest power of two >= c ln(1/delta') / (eps^2 d) (clamped to [0, 62])."""
    ratio = eps * eps * const_estimate / (c * math.log(1.0 / delta_prime))
    if ratio <= 1.0:
        return 0
    return min(MAX_Q, int(math.floor(math.log2(ratio))))


def cd_eps_factor(ctx: StepContext, coin: PublicCoin, eps: float, delta: float, *, c: float = SAMPLING_CONSTANT,
                  audit: CoinAudit | None = None) -> CountDistinctEstimate | None:
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    dp = delta / 3.0
    const = cd_const_factor_amplified(ctx, coin, dp, audit)
    if const is None:
        return None
    q = sampling_exponent(eps, dp, const, c)
    p = 2.0**-q
    r = ctx.block(1)
    ctx.announce(r, "q")
    flip_offset = coin.take(ctx.delta * q)
    active = _kernels.zero_block_flags(coin.seed, flip_offset + (ctx.values - 1) * q, q)
    if audit is not None:
        audit.check(ctx.values, active, ctx.delta)
    res = propagate_max(ctx, None, 1, active.astype(np.int8))
    sample = frozenset(res.distinct.tolist())
    return CountDistinctEstimate(const, len(sample) / p, sample, p, q, responses=res, flip_offset=flip_offset)


def cd_eps_rounds(log, delta: float) -> int:
    return amplification_count(delta / 3.0) * log.L2 + 1 + (log.L + 1)


def sampled_values(coin: PublicCoin, flip_offset: int, q: int, delta: int) -> np.ndarray:
    """Membership mask over values 0..delta of the sample fixed by a flip at ``flip_offset``."""
    vals = np.arange(delta + 1, dtype=np.int64)
    mask = _kernels.zero_block_flags(coin.seed, flip_offset + (vals - 1) * q, q)
    mask[0] = False
    return mask


class CountDistinctPerStep(Protocol):
    """Fresh (eps, delta) estimate every step from the shared coin."""

    tag = "cd-step"

    def __init__(self, trace: StreamTrace, rng: RngContext, eps: float, delta: float, audit: CoinAudit | None = None):
        super().__init__(trace, rng)
        self.eps, self.delta, self.audit = eps, delta, audit
        self.coin: PublicCoin | None = None
        self.round_budget = 1 + cd_eps_rounds(self.log, delta)

    def step(self, ctx: StepContext) -> CountDistinctEstimate:
        if self.coin is None:
            self.coin = PublicCoin(ctx.rng.public_seed())
            ctx.announce(ctx.block(1), "seed")
        return cd_eps_factor(ctx, self.coin, self.eps, self.delta, audit=self.audit)


@dataclass
class SampledDomainState:
    t0: int
    d1: float
    p: float
    q: int
    epoch_id: int
    domain: DomainState
    cum_plus: int = 0
    cum_minus: int = 0
    steps: int = 1

    @property
    def estimate(self) -> float:
        return self.d1 + self.cum_plus / self.p - self.cum_minus / self.p


class CountDistinctContinuous(Protocol):
    """Sampled-domain tracking between periodic re-estimates.

    Each epoch the server broadcasts a new coin seed and runs a
    (eps, 2 delta^2) estimate; its coin flip fixes the value sample.  The
    representative protocol then runs on sampled values only, and sampled
    values entering or leaving the domain update the estimate by 1/p each.
    """

    tag = "cd-cont"

    def __init__(self, trace, rng, eps, delta, audit: CoinAudit | None = None, max_epoch: int | None = None):
        super().__init__(trace, rng)
        self.eps, self.delta, self.audit = eps, delta, audit
        limit = math.ceil(1.0 / delta)
        self.max_epoch = limit if max_epoch is None else max(1, min(int(max_epoch), limit))
        self.state: SampledDomainState | None = None
        self.epochs = 0
        self.coin: PublicCoin | None = None
        dm = 1 + (self.log.L + 1) * (1 + 2 * trace.delta)
        self.round_budget = dm + 1 + cd_eps_rounds(self.log, 2 * delta * delta) + trace.delta

    def _start(self, ctx: StepContext, flags: list) -> CountDistinctEstimate:
        self.epochs += 1
        self.coin = PublicCoin(ctx.rng.public_seed())
        ctx.announce(ctx.block(1), "seed")
        est = cd_eps_factor(ctx, self.coin, self.eps, 2 * self.delta**2, audit=self.audit)
        tracked = sampled_values(self.coin, est.flip_offset, est.q, ctx.delta)
        dom = DomainState(ctx.n, ctx.delta, tracked)
        dom.install(ctx, est.responses)
        self.state = SampledDomainState(ctx.t, est.estimate, est.p, est.q, self.epochs, dom)
        flags.append("epoch-start")
        if not est.sample:
            flags.append("empty-sample")
        est.epoch_id = self.epochs
        est.flags = tuple(flags)
        return est

    def step(self, ctx: StepContext) -> CountDistinctEstimate:
        st = self.state
        if st is None:
            return self._start(ctx, [])
        if st.steps >= self.max_epoch:
            return self._start(ctx, ["time-break"])
        st.steps += 1
        added, removed = st.domain.advance(ctx)
        st.cum_plus += len(added)
        st.cum_minus += len(removed)
        churn = st.cum_plus + st.cum_minus
        if churn and churn / st.p >= st.d1 / 2.0:
            return self._start(ctx, ["churn-break"])
        sample = frozenset(np.flatnonzero(st.domain.in_domain).tolist())
        flags = ("empty-sample",) if not sample else ()
        return CountDistinctEstimate(None, st.estimate, sample, st.p, st.q, st.epoch_id, flags)
