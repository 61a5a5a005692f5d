import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from distmon.core import LogParams, RngContext, StepContext, StreamTrace, simulate
from distmon.domain import DomainMonitor, DomainState, Responses, propagate_max, run_domain_monitoring
from distmon.oracles import exact_domain
from distmon.workloads import WorkloadSpec, generate

from conftest import make_trace


def _ctx(values, seed=0, **kw):
    values = np.asarray(values, dtype=np.int64)
    return StepContext.single(values, int(values.max()), RngContext(seed), **kw)


def test_no_matching_participants_is_silent():
    ctx = _ctx([1, 1, 2])
    res = propagate_max(ctx, 3)
    assert len(res) == 0 and len(ctx.ledger) == 0
    res = propagate_max(ctx, 1, status=1, node_status=[0, 0, 1])
    assert len(res) == 0 and len(ctx.ledger) == 0


def test_single_participant_round_from_height():
    ctx = _ctx([5], log=LogParams.for_nodes(1024))
    res = propagate_max(ctx, 5, heights=[4])
    assert res.nodes.tolist() == [0]
    assert [r[1] for r in ctx.ledger.rows()] == [6]


def test_only_max_height_observers_respond():
    ctx = _ctx([1, 1, 1, 2, 2], log=LogParams.for_nodes(1024))
    res = propagate_max(ctx, None, heights=[3, 5, 5, 2, 1])
    assert sorted(zip(res.nodes.tolist(), res.values.tolist())) == [(1, 1), (2, 1), (3, 2)]
    rounds = sorted(r[1] for r in ctx.ledger.rows())
    assert rounds == [5, 5, 8]


def test_single_value_domain():
    run = run_domain_monitoring(make_trace([[7] * 20], 9), 1)
    snap = run.snapshots[0]
    assert snap.domain == {7}
    responders = [r[3] for r in run.ledger.rows() if r[5] == "value"]
    assert snap.representatives[7] in responders


def test_all_distinct_domain():
    n = 30
    run = run_domain_monitoring(make_trace([list(range(1, n + 1))]), 2)
    assert len(run.snapshots[0].domain) == n
    assert set(run.snapshots[0].representatives) == set(range(1, n + 1))


def test_uniform_choice_between_two_responders():
    ctx = _ctx([1, 1], seed=42)
    picks = np.zeros(2)
    for _ in range(10_000):
        dom = DomainState(2, 1)
        dom.install(ctx, Responses(np.array([0, 1]), np.array([1, 1]), np.array([1, 1])))
        picks[dom.rep[1]] += 1
    assert abs(picks[0] / 10_000 - 0.5) <= 0.02


def test_static_trace_silent_after_init():
    tr = make_trace(np.tile(np.random.default_rng(0).integers(1, 5, 50), (10, 1)))
    run = run_domain_monitoring(tr, 3)
    assert run.ledger.total(1) > 0
    assert run.ledger.per_step(10)[1:].sum() == 0
    first = run.snapshots[0]
    assert all((s.domain, s.representatives) == (first.domain, first.representatives) for s in run.snapshots)


def test_representative_replaced_by_remaining_observer():
    tr = make_trace([[1, 1, 1, 2], [1, 1, 1, 2]])
    for seed in range(20):
        mon = DomainMonitor(tr, RngContext(seed))
        trs, led = simulate(tr, [mon])
        rep = trs[0].outputs["domain"].representatives[1]
        moved = tr.values.copy()
        moved[1, rep] = 2
        tr2 = StreamTrace(moved, 2)
        mon = DomainMonitor(tr2, RngContext(seed))
        trs, led = simulate(tr2, [mon])
        assert led.count(t=2, payload="notify") == 1
        assert led.count(t=2, payload="rep-assign") == 1
        new = trs[1].outputs["domain"].representatives[1]
        responders = [r[3] for r in led.rows() if r[0] == 2 and r[5] == "value"]
        assert new != rep and new in responders and moved[1, new] == 1


def test_last_observer_leaves_value_deleted():
    tr = make_trace([[1, 2, 2], [2, 2, 2]])
    run = run_domain_monitoring(tr, 0)
    assert run.snapshots[1].domain == {2}
    assert 1 not in run.snapshots[1].representatives
    assert run.ledger.count(t=2, payload="delete") == 1


def test_disjoint_domains_cost_linear_in_domain_sizes():
    spec = WorkloadSpec("adversarial-disjoint", n=64, T=40, delta=16, seed=3, domain_size=8)
    tr = generate(spec)
    total = sum(len(exact_domain(tr, t)) for t in range(1, tr.T + 1))
    msgs = np.mean([len(run_domain_monitoring(tr, s).ledger) for s in range(5)])
    assert total <= msgs <= 12 * total


def test_drop_out_one_per_step_log_changes():
    k = 64
    rows = [[1] * (k - t) + [2] * t for t in range(k)]
    tr = make_trace(rows, 2)
    changes = []
    for seed in range(200):
        run = run_domain_monitoring(tr, seed)
        seq = [s.representatives.get(1) for s in run.snapshots]
        changes.append(sum(a != b for a, b in zip([None] + seq[:-1], seq)))
    assert np.mean(changes) <= 2 * math.log2(k) + 4


@st.composite
def traces(draw):
    n = draw(st.integers(1, 12))
    T = draw(st.integers(1, 8))
    delta = draw(st.integers(1, 5))
    vals = draw(st.lists(st.lists(st.integers(1, delta), min_size=n, max_size=n), min_size=T, max_size=T))
    return StreamTrace(np.array(vals), delta), draw(st.integers(0, 2**32))


@settings(max_examples=150, deadline=None)
@given(traces())
def test_exact_and_sound_on_random_traces(case):
    tr, seed = case
    run = run_domain_monitoring(tr, seed)
    for t, snap in enumerate(run.snapshots, start=1):
        assert snap.domain == exact_domain(tr, t)
        for v, r in snap.representatives.items():
            assert tr.at(t)[r] == v
    for rec in run.state.phases:
        assert rec.end is not None and rec.start <= rec.end
