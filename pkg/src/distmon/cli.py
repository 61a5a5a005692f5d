"""Command-line entry point: ``distmon generate | run | oracle``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .core import StreamTrace, TraceFormatError
from .experiment import PROTOCOLS, ConfigError, ExperimentConfig, run_experiment
from .oracles import write_oracle_report
from .workloads import KINDS, WorkloadError, WorkloadSpec, generate

log = logging.getLogger("distmon")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distmon", description="Continuous distributed monitoring simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic trace")
    g.add_argument("--kind", required=True, choices=[k for k in KINDS if k != "from-file"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--T", type=int, required=True)
    g.add_argument("--delta", type=int, required=True, help="value universe size")
    g.add_argument("--sigma", type=float, help="churn target for sigma-similar traces")
    g.add_argument("--domain-size", type=int, help="values in use per step")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run seeded trials of a protocol")
    r.add_argument("--protocol", required=True, choices=PROTOCOLS)
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="trace file")
    src.add_argument("--workload", help="workload JSON file or 'kind:key=value,...'")
    r.add_argument("--epsilon", type=float)
    r.add_argument("--delta", type=float)
    r.add_argument("--sigma", type=float, help="churn hint shortening continuous frequency epochs")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--report", required=True)
    r.add_argument("--trials-csv", help="per-trial summary table")
    r.add_argument("--ledger-csv", help="message ledger of the first trial")
    r.add_argument("--outputs-csv", help="per-step outputs of the first trial")

    o = sub.add_parser("oracle", help="exact ground truth of a trace")
    o.add_argument("--trace", required=True)
    o.add_argument("--out", required=True)
    return ap


def _write_trials(rows, path) -> None:
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _write_outputs(protocol: str, outputs, path) -> None:
    if protocol in ("domain", "propagate-max"):
        from .domain import write_snapshots
        write_snapshots(outputs, path)
    elif protocol.startswith("freq"):
        from .frequency import write_estimates
        write_estimates([{v: e for v, e in o.items() if e is not None} for o in outputs], path)
    else:
        from .countdistinct import write_estimates
        write_estimates(outputs, path)


def _cmd_generate(a) -> int:
    spec = WorkloadSpec(a.kind, a.n, a.T, a.delta, a.sigma, a.seed, a.domain_size)
    generate(spec).write(a.out)
    return 0


def _cmd_run(a) -> int:
    if a.trace:
        wl = WorkloadSpec("from-file", path=a.trace)
    else:
        wl = WorkloadSpec.parse(a.workload)
    cfg = ExperimentConfig(a.protocol, wl, a.epsilon, a.delta, a.trials, a.seed, a.sigma, a.jobs)
    cfg.validate()
    keep = bool(a.ledger_csv or a.outputs_csv)
    rep = run_experiment(cfg, keep_first=keep)
    rep.write(a.report)
    if a.trials_csv:
        _write_trials(rep.trials, a.trials_csv)
    if keep:
        outputs, ledger = rep.first
        if a.ledger_csv:
            ledger.to_csv(a.ledger_csv)
        if a.outputs_csv:
            _write_outputs(a.protocol, outputs, a.outputs_csv)
    agg = rep.aggregates
    print(f"{a.protocol}: {agg['trials']} trials, mean {agg['mean_messages_per_step']:.2f} messages/step, "
          f"failure rate {agg['failure_rate']:.4f}")
    return 0


def _cmd_oracle(a) -> int:
    write_oracle_report(StreamTrace.read(a.trace), a.out)
    return 0


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"generate": _cmd_generate, "run": _cmd_run, "oracle": _cmd_oracle}
    try:
        return handlers[a.command](a)
    except (ConfigError, WorkloadError, TraceFormatError) as exc:
        print(f"distmon: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = f" {exc.filename}" if exc.filename else ""
        print(f"distmon: error:{name} {exc.strerror or exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
