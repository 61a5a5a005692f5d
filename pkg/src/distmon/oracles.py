"""Exact ground truth computed from the full trace."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import StreamTrace


def exact_domain(trace: StreamTrace, t: int) -> frozenset:
    return frozenset(np.unique(trace.at(t)).tolist())


def exact_frequency(trace: StreamTrace, t: int, v: int) -> int:
    return int(np.count_nonzero(trace.at(t) == v))


def exact_frequencies(trace: StreamTrace, t: int) -> dict[int, int]:
    vals, counts = np.unique(trace.at(t), return_counts=True)
    return dict(zip(vals.tolist(), counts.tolist()))


def exact_count_distinct(trace: StreamTrace, t: int) -> int:
    return int(np.unique(trace.at(t)).size)


def sigma_of(trace: StreamTrace) -> float:
    """Largest per-step relative churn of any value; ``inf`` if a value loses all observers."""
    sigma = 0.0
    size = trace.delta + 1
    for t in range(2, trace.T + 1):
        prev, cur = trace.at(t - 1), trace.at(t)
        moved = prev != cur
        churn = np.bincount(prev[moved], minlength=size) + np.bincount(cur[moved], minlength=size)
        count = np.bincount(cur, minlength=size)
        if np.any((count == 0) & (churn > 0)):
            return math.inf
        live = count > 0
        if live.any():
            sigma = max(sigma, float((churn[live] / count[live]).max()))
    return sigma


def _presence(trace: StreamTrace, v: int) -> np.ndarray:
    return trace.values == v  # (T, n)


def _value_changes_greedy(obs: np.ndarray) -> int:
    """Minimum representative changes for one value given its (T, n) observation mask."""
    T = obs.shape[0]
    # run[t, i]: how many consecutive steps from t node i keeps observing
    run = np.zeros(obs.shape, dtype=np.int64)
    run[T - 1] = obs[T - 1]
    for t in range(T - 2, -1, -1):
        run[t] = np.where(obs[t], run[t + 1] + 1, 0)
    present = obs.any(axis=1)
    changes = 0
    t = 0
    while t < T:
        if not present[t]:
            t += 1
            continue
        changes += 1  # new representative (entry or switch)
        t += int(run[t].max())
        if t < T and not present[t]:
            changes += 1  # value left the domain: node -> nil
    return changes


def _value_changes_brute(obs: np.ndarray) -> int:
    choices = [np.flatnonzero(row).tolist() or [None] for row in obs]
    best = math.inf
    for seq in itertools.product(*choices):
        prev, c = None, 0
        for r in seq:
            c += r != prev
            prev = r
        best = min(best, c)
    return int(best)


@dataclass
class RStarReport:
    per_value: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.per_value.values())


def r_star(trace: StreamTrace) -> RStarReport:
    """Minimum total component-wise representative changes (initial assignments included)."""
    rep = RStarReport()
    for v in np.unique(trace.values).tolist():
        rep.per_value[v] = _value_changes_greedy(_presence(trace, v))
    return rep


def r_star_brute_force(trace: StreamTrace) -> RStarReport:
    """Exhaustive enumeration of representative sequences; tiny traces only."""
    rep = RStarReport()
    for v in np.unique(trace.values).tolist():
        rep.per_value[v] = _value_changes_brute(_presence(trace, v))
    return rep


def oracle_report(trace: StreamTrace) -> dict:
    steps = []
    for t in range(1, trace.T + 1):
        freq = exact_frequencies(trace, t)
        steps.append({
            "t": t,
            "domain": sorted(freq),
            "frequencies": {str(v): c for v, c in sorted(freq.items())},
            "count_distinct": len(freq),
        })
    sigma = sigma_of(trace)
    rs = r_star(trace)
    return {
        "n": trace.n,
        "T": trace.T,
        "delta": trace.delta,
        "sigma": None if math.isinf(sigma) else sigma,
        "sigma_unbounded": math.isinf(sigma),
        "r_star": rs.total,
        "r_star_per_value": {str(v): c for v, c in sorted(rs.per_value.items())},
        "steps": steps,
    }


def write_oracle_report(trace: StreamTrace, path) -> None:
    with open(path, "w") as fh:
        json.dump(oracle_report(trace), fh, indent=1, sort_keys=True)
        fh.write("\n")
