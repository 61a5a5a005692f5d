import math

import numpy as np
import pytest

from distmon.core import LogParams, MessageLedger, RngContext, StepContext, simulate
from distmon.experiment import ExperimentConfig, run_experiment
from distmon.frequency import (
    ChurnState,
    FrequencyContinuous,
    FrequencyPerStep,
    amplification_count,
    const_factor_freq,
    const_factor_freq_amplified,
    cont_eps_factor_freq,
    eps_factor_freq,
    lower_median,
    sampling_probability,
)
from distmon.workloads import WorkloadSpec, generate

from conftest import make_trace


def test_const_factor_single_node_height_five(stub_ctx):
    ctx = stub_ctx([3], words=[16], n=1024)
    assert const_factor_freq(ctx, 3) == 32
    assert [r[1] for r in ctx.ledger.rows()] == [5]


def test_height_four_broadcasts_in_round_six(stub_ctx):
    ctx = stub_ctx([3], words=[8], n=1024)
    assert const_factor_freq(ctx, 3) == 16
    assert [r[1] for r in ctx.ledger.rows()] == [6]


def test_ties_at_max_height_all_broadcast(stub_ctx):
    ctx = stub_ctx([1, 1, 1, 2], words=[4, 4, 1], n=1024)
    assert const_factor_freq(ctx, 1) == 8
    assert sorted(r[3] for r in ctx.ledger.rows()) == [0, 1]


def test_absent_value_gives_none():
    ctx = StepContext.single([1, 2], 3, RngContext(0))
    assert const_factor_freq(ctx, 3) is None
    assert eps_factor_freq(ctx, 3, 0.2, 0.2) is None
    assert len(ctx.ledger) == 0


def test_amplification_count():
    assert amplification_count(0.05) == 68 == math.ceil(22.5 * math.log(20))
    assert amplification_count(0.1) == 52
    with pytest.raises(ValueError):
        amplification_count(1.0)


def test_median_of_equal_instances(stub_ctx):
    d = amplification_count(0.1)
    ctx = stub_ctx([1], words=[8] * d, n=1024)
    assert const_factor_freq_amplified(ctx, 1, 0.1) == 16
    assert lower_median([1, 4, 2, 8]) == 2


def test_sampling_probability_arithmetic():
    # eps = 0.1, delta = 0.3 -> delta' = 0.1 -> p = min(1, 5526.2 / const)
    assert 24 * math.log(10) / 0.01 == pytest.approx(5526.2, abs=0.05)
    assert sampling_probability(0.1, 0.1, 10_000) == pytest.approx(0.55262, abs=1e-5)
    assert sampling_probability(0.1, 0.1, 1000) == 1.0


def test_full_sampling_is_exact():
    ctx = StepContext.single(np.full(50, 4), 4, RngContext(7))
    est = eps_factor_freq(ctx, 4, 0.2, 0.2)
    assert est.p == 1.0 and est.estimate == 50 and est.raw_count == 50


def test_churn_estimate_formula():
    st = ChurnState(t0=1, n1=50, p=0.1, epoch_id=1, cum_plus=5, cum_minus=2)
    assert st.raw / st.p == pytest.approx(530)


def test_amplified_failure_rate():
    rng = RngContext(3)
    vals = np.ones(64, dtype=np.int64)
    fails = 0
    M = 1000
    for _ in range(M):
        est = const_factor_freq_amplified(StepContext.single(vals, 1, rng), 1, 0.1)
        fails += not 8 <= est <= 512
    assert fails / M <= 0.1 + 3 * math.sqrt(0.1 * 0.9 / M)


def test_static_trace_continuous_silent_until_time_break():
    tr = make_trace(np.tile([1, 1, 2, 2, 2], (12, 1)))
    ests, led = cont_eps_factor_freq(tr, 2, 0.3, 0.2)
    per = led.per_step(12)
    assert per[0] > 0 and per[1:5].sum() == 0 and per[5] > 0  # epoch of ceil(1/0.2) = 5 steps
    assert "time-break" in ests[5].flags
    assert all(e.estimate == 3 for e in ests)


def test_continuous_tracks_churn():
    rows = [[1] * 40 + [2] * 10] * 3 + [[1] * 35 + [2] * 15] * 3
    tr = make_trace(rows)
    ests, led = cont_eps_factor_freq(tr, 2, 0.3, 0.1, rng=1)
    assert ests[3].estimate == 15  # p = 1 here, so churn responses are exact
    assert led.count(t=4, payload="+") == 5


def test_per_value_delta_split():
    spec = WorkloadSpec("sigma-similar", n=200, T=3, delta=4, sigma=0.1, seed=1)
    tr = generate(spec)
    mon = FrequencyContinuous(tr, RngContext(0), 0.3, 0.2)
    simulate(tr, [mon])
    assert sorted(mon.trackers) == [1, 2, 3, 4]
    assert all(t.delta == pytest.approx(0.05) for t in mon.trackers.values())


def test_new_value_gets_tracked():
    tr = make_trace([[1, 1, 1], [1, 1, 2], [1, 1, 2]])
    mon = FrequencyContinuous(tr, RngContext(0), 0.3, 0.2)
    trs, _ = simulate(tr, [mon])
    assert "new-value" in trs[1].outputs["freq-cont"][2].flags
    assert trs[2].outputs["freq-cont"][2].estimate == 1


def test_single_value_per_step_mode_equals_eps_factor():
    tr = make_trace(np.full((3, 20), 2))
    a = FrequencyPerStep(tr, RngContext(5), 0.3, 0.2)
    trs, led = simulate(tr, [a])
    assert all(list(t.outputs["freq-step"]) == [2] for t in trs)
    assert all(t.outputs["freq-step"][2].estimate == 20 for t in trs)


def test_per_step_all_values_correct_rate():
    # about 2000 observers per value, so the sampling probability is well below 1
    spec = WorkloadSpec("sigma-similar", n=8000, T=1, delta=4, sigma=0.05, seed=4)
    rep = run_experiment(ExperimentConfig("freq-step", spec, 0.25, 0.2, trials=1000, seed=9))
    agg = rep.aggregates
    assert agg["failure_rate"] <= 0.2 + 3 * math.sqrt(0.2 * 0.8 / 1000)
    assert rep.trials[0]["messages"] < 8000
