"""Trace generators."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .core import StreamTrace
from .oracles import sigma_of

KINDS = ("static", "adversarial-disjoint", "sigma-similar", "from-file")


class WorkloadError(ValueError):
    """The requested workload cannot be generated."""


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of a generated trace.

    ``domain_size`` is the number of values in use per step; it defaults to
    ``delta`` for static and sigma-similar traces and to ``delta // 2`` for
    adversarial-disjoint ones.
    """

    kind: str
    n: int = 0
    T: int = 0
    delta: int = 0
    sigma: float | None = None
    seed: int = 0
    domain_size: int | None = None
    path: str | None = None

    def block(self) -> int:
        if self.domain_size is not None:
            return self.domain_size
        return self.delta // 2 if self.kind == "adversarial-disjoint" else self.delta

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise WorkloadError(f"unknown workload kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind == "from-file":
            if not self.path:
                raise WorkloadError("from-file workload needs a path")
            return
        if self.n < 1 or self.T < 1 or self.delta < 1:
            raise WorkloadError(f"need n, T, delta >= 1 (got n={self.n}, T={self.T}, delta={self.delta})")
        k = self.block()
        if not 1 <= k <= self.delta:
            raise WorkloadError(f"domain size {k} must lie in 1..delta={self.delta}")
        if k > self.n:
            raise WorkloadError(f"domain size {k} exceeds n={self.n}; some value would have no observer")
        if self.kind == "adversarial-disjoint" and self.T > 1 and 2 * k > self.delta:
            raise WorkloadError(f"disjoint consecutive domains of size {k} need delta >= {2 * k}, got {self.delta}")
        if self.kind == "sigma-similar":
            if self.sigma is None or not self.sigma > 0:
                raise WorkloadError("sigma-similar workload needs sigma > 0")
            if self.sigma * (self.n // k) < 1:
                raise WorkloadError(
                    f"sigma={self.sigma} admits no moves with about {self.n // k} nodes per value; "
                    "raise sigma or n, or lower the domain size"
                )

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise WorkloadError(f"unknown workload fields: {', '.join(sorted(extra))}")
        return cls(**d)

    @classmethod
    def parse(cls, text: str) -> "WorkloadSpec":
        """Parse ``kind:key=value,...`` or a JSON file path."""
        if text.endswith(".json"):
            try:
                with open(text) as fh:
                    return cls.from_dict(json.load(fh))
            except OSError as exc:
                raise WorkloadError(f"{text}: {exc.strerror}") from None
        kind, _, rest = text.partition(":")
        d: dict = {"kind": kind}
        casts = {"n": int, "T": int, "delta": int, "seed": int, "domain_size": int, "sigma": float, "path": str}
        for item in filter(None, rest.split(",")):
            key, eq, val = item.partition("=")
            if not eq or key not in casts:
                raise WorkloadError(f"bad workload field {item!r}")
            try:
                d[key] = casts[key](val)
            except ValueError:
                raise WorkloadError(f"bad value for {key}: {val!r}") from None
        return cls.from_dict(d)


def _spread(rng, n: int, values: np.ndarray) -> np.ndarray:
    """Random assignment of ``n`` nodes in which every entry of ``values`` is observed."""
    k = values.size
    out = values[np.arange(n) % k]
    extra = rng.integers(0, k, size=n - k)
    out[k:] = values[extra]
    return out[rng.permutation(n)]


def _static(spec: WorkloadSpec, rng) -> np.ndarray:
    row = _spread(rng, spec.n, np.arange(1, spec.block() + 1))
    return np.tile(row, (spec.T, 1))


def _disjoint(spec: WorkloadSpec, rng) -> np.ndarray:
    k = spec.block()
    blocks = spec.delta // k
    out = np.empty((spec.T, spec.n), dtype=np.int64)
    for t in range(spec.T):
        first = (t % blocks) * k + 1
        out[t] = _spread(rng, spec.n, np.arange(first, first + k))
    return out


def _sigma_similar(spec: WorkloadSpec, rng) -> np.ndarray:
    k, n, sigma = spec.block(), spec.n, spec.sigma
    cur = _spread(rng, n, np.arange(1, k + 1))
    out = np.empty((spec.T, n), dtype=np.int64)
    out[0] = cur
    attempts = max(1, int(sigma * n))
    for t in range(1, spec.T):
        cur = cur.copy()
        count = np.bincount(cur, minlength=k + 1)
        churn = np.zeros(k + 1, dtype=np.int64)
        movers = rng.choice(n, size=min(attempts, n), replace=False)
        targets = rng.integers(1, k, size=movers.size)
        for i, shift in zip(movers.tolist(), targets.tolist()):
            a = int(cur[i])
            b = (a - 1 + shift) % k + 1
            # accept only if both ratios stay within the target after the move
            if count[a] - 1 < 1 or churn[a] + 1 > sigma * (count[a] - 1):
                continue
            if churn[b] + 1 > sigma * (count[b] + 1):
                continue
            cur[i] = b
            count[a] -= 1
            count[b] += 1
            churn[a] += 1
            churn[b] += 1
        out[t] = cur
    return out


def generate(spec: WorkloadSpec) -> StreamTrace:
    spec.validate()
    if spec.kind == "from-file":
        return StreamTrace.read(spec.path)
    rng = np.random.default_rng(spec.seed)
    make = {"static": _static, "adversarial-disjoint": _disjoint, "sigma-similar": _sigma_similar}[spec.kind]
    trace = StreamTrace(make(spec, rng), spec.delta)
    check(spec, trace)
    return trace


def check(spec: WorkloadSpec, trace: StreamTrace) -> None:
    """Oracle check of a generated trace against its workload parameters."""
    if spec.kind == "sigma-similar":
        realized = sigma_of(trace)
        if realized > spec.sigma:
            raise WorkloadError(f"generated trace has sigma {realized} above target {spec.sigma}")
    elif spec.kind == "static" and sigma_of(trace) != 0:
        raise WorkloadError("static trace changed")
    elif spec.kind == "adversarial-disjoint":
        for t in range(1, trace.T):
            if np.intersect1d(trace.at(t), trace.at(t + 1)).size:
                raise WorkloadError(f"domains at steps {t} and {t + 1} overlap")
