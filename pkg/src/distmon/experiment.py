"""Seeded multi-trial experiments and their JSON reports."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .core import MessageLedger, RngContext, StreamTrace, simulate
from .countdistinct import CoinAudit, CountDistinctContinuous, CountDistinctPerStep
from .domain import DomainMonitor, PropagateMaxMonitor
from .frequency import FrequencyContinuous, FrequencyPerStep
from .oracles import r_star, sigma_of
from .workloads import WorkloadSpec, generate

PROTOCOLS = ("domain", "freq-step", "freq-cont", "cd-step", "cd-cont", "propagate-max")
APPROXIMATE = {"freq-step", "freq-cont", "cd-step", "cd-cont"}
SEEDING = "trial i uses generate_state(1, uint64)[0] of SeedSequence(seed).spawn(trials)[i]"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str
    workload: WorkloadSpec
    epsilon: float | None = None
    delta: float | None = None
    trials: int = 1
    seed: int = 0
    sigma: float | None = None  # optional churn hint for freq-cont epoch lengths
    jobs: int = 1

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; expected one of {', '.join(PROTOCOLS)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.protocol in APPROXIMATE:
            for name in ("epsilon", "delta"):
                x = getattr(self, name)
                if x is None or not 0 < x < 1:
                    raise ConfigError(f"{self.protocol} needs {name} in (0, 1), got {x}")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError("sigma hint must be positive")
        self.workload.validate()

    def to_dict(self) -> dict:
        d = {"protocol": self.protocol, "workload": self.workload.to_dict(), "trials": self.trials, "seed": self.seed}
        for k in ("epsilon", "delta", "sigma"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


def trial_seeds(master: int, trials: int) -> list[int]:
    return [int(c.generate_state(1, np.uint64)[0]) for c in np.random.SeedSequence(master).spawn(trials)]


def build_protocol(cfg: ExperimentConfig, trace: StreamTrace, rng: RngContext, audit: CoinAudit):
    p = cfg.protocol
    if p == "domain":
        return DomainMonitor(trace, rng)
    if p == "propagate-max":
        return PropagateMaxMonitor(trace, rng)
    if p == "freq-step":
        return FrequencyPerStep(trace, rng, cfg.epsilon, cfg.delta)
    if p == "freq-cont":
        return FrequencyContinuous(trace, rng, cfg.epsilon, cfg.delta, sigma=cfg.sigma)
    if p == "cd-step":
        return CountDistinctPerStep(trace, rng, cfg.epsilon, cfg.delta, audit=audit)
    return CountDistinctContinuous(trace, rng, cfg.epsilon, cfg.delta, audit=audit)


def _within(est: float, truth: int, eps: float) -> bool:
    return abs(est - truth) <= eps * truth


def _failed_steps(cfg: ExperimentConfig, trace: StreamTrace, outputs: list) -> int:
    """Steps whose output is wrong: inexact domain, or any estimate outside the eps band."""
    bad = 0
    for t, out in enumerate(outputs, start=1):
        vals, counts = np.unique(trace.at(t), return_counts=True)
        truth = dict(zip(vals.tolist(), counts.tolist()))
        if cfg.protocol in ("domain", "propagate-max"):
            ok = out.domain == frozenset(truth)
        elif cfg.protocol.startswith("freq"):
            keys = set(truth) | {v for v, e in out.items() if e is not None}
            ok = all(
                out.get(v) is not None and _within(out[v].estimate, truth.get(v, 0), cfg.epsilon)
                if v in truth else out[v].estimate == 0
                for v in keys
            )
        else:
            ok = _within(out.estimate, len(truth), cfg.epsilon)
        bad += not ok
    return bad


def run_trial(cfg: ExperimentConfig, trace: StreamTrace, index: int, seed: int, keep: bool = False):
    audit = CoinAudit()
    proto = build_protocol(cfg, trace, RngContext(seed), audit)
    transcripts, ledger = simulate(trace, [proto])
    outputs = [tr.outputs[proto.tag] for tr in transcripts]
    per_step = ledger.per_step(trace.T)
    row: dict[str, Any] = {
        "trial": index,
        "seed": seed,
        "messages": int(per_step.sum()),
        "max_messages_per_step": int(per_step.max()),
        "failed_steps": _failed_steps(cfg, trace, outputs),
    }
    if cfg.protocol == "domain":
        row["rep_changes"] = proto.state.rep_changes
    if cfg.protocol == "propagate-max":
        row["mean_responders_per_value"] = float(np.mean(proto.responders_per_value))
    if cfg.protocol.startswith("cd"):
        row["coin_checks"] = audit.checks
        row["coin_violations"] = audit.violations
    if cfg.protocol in ("freq-cont", "cd-cont"):
        row["epochs"] = _epochs(proto)
    return row, ((outputs, ledger) if keep else None)


def _epochs(proto) -> int:
    if hasattr(proto, "trackers"):
        return sum(tr.epochs for tr in proto.trackers.values())
    return proto.epochs


def _run_indexed(args):
    cfg, trace, i, seed = args
    return run_trial(cfg, trace, i, seed)[0]


@dataclass
class ExperimentReport:
    config: dict
    trace: dict
    trials: list
    aggregates: dict
    first: tuple | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "seeding": SEEDING,
            "config": self.config,
            "trace": self.trace,
            "aggregates": self.aggregates,
            "trials": self.trials,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def write(self, path) -> None:
        try:
            with open(path, "w") as fh:
                fh.write(self.dumps())
        except OSError as exc:
            raise OSError(f"cannot write report {path}: {exc.strerror}") from None


def aggregate(cfg: ExperimentConfig, trace: StreamTrace, rows: list, trace_info: dict) -> dict:
    M, T = len(rows), trace.T
    totals = np.array([r["messages"] for r in rows], dtype=np.float64)
    failed = sum(r["failed_steps"] for r in rows)
    agg: dict[str, Any] = {
        "trials": M,
        "total_messages": int(totals.sum()),
        "mean_messages": float(totals.mean()),
        "mean_messages_per_step": float(totals.mean() / T),
        "max_messages_per_step": max(r["max_messages_per_step"] for r in rows),
        "failed_steps": failed,
        "failure_rate": failed / (M * T),
    }
    if cfg.protocol in APPROXIMATE:
        slack = 3.0 * math.sqrt(cfg.delta * (1.0 - cfg.delta) / (M * T))
        agg["failure_slack"] = slack
        agg["failure_bound"] = cfg.delta + slack
        agg["failure_within_bound"] = agg["failure_rate"] <= cfg.delta + slack
    if cfg.protocol == "domain":
        changes = [r["rep_changes"] for r in rows]
        bound = 4 * math.log2(trace.n) * trace_info["r_star"] if trace.n > 1 else 4 * trace_info["r_star"]
        agg["mean_rep_changes"] = float(np.mean(changes))
        agg["max_rep_changes"] = max(changes)
        agg["rep_change_bound"] = bound
        agg["rep_changes_within_bound"] = max(changes) <= bound
    if cfg.protocol == "propagate-max":
        agg["mean_responders_per_value"] = float(np.mean([r["mean_responders_per_value"] for r in rows]))
    if cfg.protocol.startswith("cd"):
        agg["coin_violations"] = sum(r["coin_violations"] for r in rows)
    return agg


def run_experiment(cfg: ExperimentConfig, trace: StreamTrace | None = None, keep_first: bool = False) -> ExperimentReport:
    """Run ``cfg.trials`` seeded trials on one trace and fold them in trial order."""
    cfg.validate()
    trace = generate(cfg.workload) if trace is None else trace
    sigma = sigma_of(trace)
    info = {
        "n": trace.n,
        "T": trace.T,
        "delta": trace.delta,
        "sigma": None if math.isinf(sigma) else sigma,
        "r_star": r_star(trace).total,
    }
    seeds = trial_seeds(cfg.seed, cfg.trials)
    first = None
    if cfg.jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            rows = list(pool.map(_run_indexed, [(cfg, trace, i, s) for i, s in enumerate(seeds)]))
        if keep_first:
            first = run_trial(cfg, trace, 0, seeds[0], keep=True)[1]
    else:
        rows = []
        for i, s in enumerate(seeds):
            row, kept = run_trial(cfg, trace, i, s, keep=keep_first and i == 0)
            rows.append(row)
            first = first or kept
    return ExperimentReport(cfg.to_dict(), info, rows, aggregate(cfg, trace, rows, info), first)


def ledger_of(report: ExperimentReport) -> MessageLedger | None:
    return None if report.first is None else report.first[1]
