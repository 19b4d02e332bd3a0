import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfwalk import coupling, engine
from selfwalk.coupling import (CoupledRun, HistoryError, XiFamily, check_ABC, check_scenario,
                               run_coupled, sigma_times)

FLAG_FROM = 128  # E(x) uses asymptotic thresholds; small x fail routinely


# ---------------------------------------------------------------- xi family

def test_xi_law_closed_form():
    assert XiFamily.p_plus(0) == 0.5
    assert XiFamily.p_plus(1) == pytest.approx(math.exp(-1) / (math.e + math.exp(-1)), rel=1e-15)
    assert XiFamily.p_plus(1) == pytest.approx(0.1192029, abs=1e-7)


def test_xi_memo_and_reproducibility():
    a, b = XiFamily(17), XiFamily(17)
    keys = [(x, j, k) for x in range(-3, 4) for j in (-2, -0.5, 0, 1.5, 3) for k in (1, 2, 7)]
    first = [a.xi(*key) for key in keys]
    assert first == [a.xi(*key) for key in keys]
    assert first == [b.xi(*key) for key in keys]
    assert set(first) <= {-1, 1}
    assert len(a.memo) == len(keys)


def test_xi_domain():
    f = XiFamily(0)
    with pytest.raises(ValueError):
        f.xi(0, 0, 0)
    with pytest.raises(ValueError):
        f.xi(0, 0.25, 1)


def test_xi_balanced_at_zero():
    f = XiFamily(3)
    vals = np.array([f.value(x, 0, k) for x in range(100) for k in range(1, 1001)])
    assert abs(vals.mean()) <= 0.02


def test_xi_law_at_j_one():
    f = XiFamily(8)
    n = 10**5
    plus = sum(f.value(x, 2, k) == 1 for x in range(100) for k in range(1, n // 100 + 1))
    p = XiFamily.p_plus(1)
    assert abs(plus / n - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_mean_of_m_is_one_half():
    ms = np.array([XiFamily(s).m(5) for s in range(10**4)])
    assert abs(ms.mean() - 0.5) <= 0.02


# ---------------------------------------------------------------- coupled walk

def test_zero_steps():
    run = run_coupled(0, 1)
    assert run.trajectory.tolist() == [0]


def test_keys_are_used_once():
    run = run_coupled(100_000, 2)
    keys = run.keys()[:, :3]
    assert np.unique(keys, axis=0).shape[0] == keys.shape[0]


def test_steps_follow_their_keys():
    run = run_coupled(20_000, 5)
    for x, twoj, k, step in run.keys()[:5000]:
        assert run.family.value(int(x), int(twoj), int(k)) == step


def test_coupled_walk_uses_the_walk_drift():
    """Delta recorded at each step equals -2 D of the engine's profile at that moment."""
    run = run_coupled(3000, 9)
    kernel, init = engine.preset("second_derivative")
    prof = engine.LocalTimeProfile(engine.relative_profile(init, 0))
    tr = run.trajectory
    for t in range(run.steps):
        x = int(tr[t])
        assert run.deltas[t] == -2 * engine.drift(prof, x, kernel)
        prof.ensure(x - 3, x + 3)
        prof.counts[min(x, int(tr[t + 1])) - prof.origin] += 1


def test_no_parity_violations():
    for s in range(10):
        assert run_coupled(50_000, s).parity_violations == []


# ---------------------------------------------------------------- sigma times

def _sigma_brute(traj, x):
    crossings = 0
    for t in range(len(traj)):
        if t > 0 and min(traj[t], traj[t - 1]) == x - 1:
            crossings += 1
        if traj[t] == x - 1 and crossings > x // 8:
            return t
    return None


def test_sigma_hand_built():
    traj = [0, 1, 0, 1, 0, -1, 0, -1, 0, -1, 0, -1, 0]
    s = sigma_times(traj)
    assert s[1] == _sigma_brute(traj, 1) == 2
    assert s[2] is None


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=400))
def test_sigma_matches_brute_force(steps):
    traj = np.concatenate([[0], np.cumsum(steps)])
    s = sigma_times(traj)
    for x in range(1, int(traj.max()) + 2):
        assert s.get(x) == _sigma_brute(traj.tolist(), x)


# ---------------------------------------------------------------- scenario

@pytest.fixture(scope="module")
def flagged():
    out = []
    for s in range(40):
        run = run_coupled(200_000, s)
        rep = check_scenario(run, x_start=FLAG_FROM)
        if rep.flag:
            out.append((run, rep))
    return out


def test_flag_holds_on_most_seeds(flagged):
    assert len(flagged) >= 20


def test_sigma_increasing_on_flagged_runs(flagged):
    for run, rep in flagged:
        sig = [r.sigma for r in rep.records]
        assert all(b > a for a, b in zip(sig, sig[1:]))


def test_lag_bound_on_flagged_runs(flagged):
    for run, rep in flagged:
        tr = run.trajectory
        last = rep.records[-1].sigma
        assert (np.maximum.accumulate(tr) - tr)[: last + 1].max() <= 2


def test_recursion_exact_on_flagged_runs(flagged):
    for run, rep in flagged:
        res = rep.recursion_residuals()
        assert res and all(r == 0 for r in res)


def test_recursion_matches_local_time_by_hand(flagged):
    run, rep = flagged[0]
    tr = run.trajectory
    edges = np.minimum(tr[1:], tr[:-1])
    for r in rep.recursion_pairs()[:50]:
        nxt = rep.record(r.x + 1)
        # at sigma_x the walker sits at x - 1, so l(-1/2) is the edge {x - 2, x - 1}
        before = int(np.sum(edges[: r.sigma] == r.x - 2))
        after = int(np.sum(edges[: nxt.sigma] == r.x - 1))
        assert after - before == r.increment == 2 * r.m_prime


def test_sqrt_ratio_at_late_sigma(flagged):
    for run, rep in flagged:
        x = rep.records[-1].x
        assert x >= 300
        s = rep.record(x).sigma
        assert 0.9 <= run.trajectory[s] / math.sqrt(2 * s) <= 1.1


def test_sigma_quadratic_mean(flagged):
    vals = np.array([rep.record(200).sigma / 200**2 for _, rep in flagged])
    assert 0.4 <= vals.mean() <= 0.6


@pytest.mark.xfail(strict=True, reason="sigma(200)/200^2 fluctuates by about 0.06 per seed; "
                   "a few flagged seeds fall outside [0.4, 0.6]")
def test_sigma_quadratic_every_seed():
    vals = []
    for s in range(200):
        rep = check_scenario(run_coupled(200_000, s), x_start=FLAG_FROM)
        if rep.flag:
            vals.append(rep.record(200).sigma / 200**2)
    assert all(0.4 <= v <= 0.6 for v in vals)


def _synthetic(traj):
    traj = np.asarray(traj, dtype=np.int64)
    n = max(traj.shape[0] - 1, 0)
    return CoupledRun(0, engine.preset("second_derivative")[0], traj, np.zeros(n, np.int64),
                      np.ones(n, np.int64), XiFamily(0), {-1: 1.0, -3: 1.0})


def test_visit_ahead_of_sigma_fails_first_condition():
    rep = check_scenario(_synthetic([0, 1, 2, 1, 0, 1, 0, 1, 0]))
    assert not rep.record(1).e1
    assert not rep.flag and rep.first_failure == (1, "e1")


def test_history_required():
    with pytest.raises(HistoryError):
        check_scenario(_synthetic([]))


def test_scenario_csv():
    rep = check_scenario(run_coupled(20_000, 0))
    lines = rep.csv().splitlines()
    assert lines[0] == "x,sigma_x,e1,e2,e3,e4,M_x,recursion_ok"
    assert lines[-1].startswith("# flag=")
    assert len(lines) == len(rep.records) + 2


# ---------------------------------------------------------------- events A, B, C

def test_abc_report_logic():
    rep = coupling.ABCReport(True, True, False, 1, True, None, None, 3, ())
    assert not rep.passed
    assert coupling.ABCReport(True, True, True, 1, True, None, None, None, ()).passed


def test_abc_partial_sums_are_checked():
    rep = check_ABC(XiFamily(1), 30)
    total = np.cumsum(rep.m_values)
    ys = np.arange(len(total))
    bad = [int(y) for y in ys[1:] if not (y / 4 <= total[y] <= 4 * y)]
    assert rep.c_pass == (not bad)
    if bad:
        assert rep.c_first_failure == bad[0]


def test_abc_audits_realized_keys():
    run = run_coupled(20_000, 3)
    rep = check_ABC(run.family, 20, run=run, sample=100)
    assert rep.a_sampled and rep.a_keys_checked >= 1


def test_abc_limit():
    with pytest.raises(ValueError):
        check_ABC(XiFamily(0), 501)


@pytest.mark.xfail(strict=True, reason="B requires essentially every xi^x_j ideal; its probability "
                   "is far below 1e-3 at x_max = 50, so no seed in 10^3 passes")
def test_abc_positive_fraction():
    passed = sum(check_ABC(XiFamily(s), 50).passed for s in range(1000))
    assert passed > 0


# ---------------------------------------------------------------- fourth derivative

def _fourth(n, seeds):
    kernel, init = engine.preset("fourth_derivative")
    out = []
    for s in seeds:
        tr = run_coupled(n, s, kernel=kernel, initial=init).trajectory
        lag = int((np.maximum.accumulate(tr) - tr).max())
        out.append((lag, tr[-1] / math.sqrt(n)))
    return out


def test_fourth_derivative_keeps_the_sqrt_scenario():
    rows = _fourth(200_000, range(20))
    ratios = np.array([r for lag, r in rows if lag <= 2])
    assert len(ratios) >= 5
    # deterministic square-root growth with a kernel-specific constant
    assert ratios.std() < 0.05
    assert 0.9 <= ratios.mean() <= 1.1


@pytest.mark.xfail(strict=True, reason="the local-time profile slope is 2 for this kernel, so "
                   "X_n ~ sqrt(n) rather than sqrt(2n)")
def test_fourth_derivative_sqrt_two_constant():
    rows = _fourth(200_000, range(20))
    ratios = [r / math.sqrt(2) for lag, r in rows if lag <= 2]
    assert ratios and all(0.9 <= r <= 1.1 for r in ratios)


# ---------------------------------------------------------------- logarithmic scenario diagnostics

def test_log_scenario_by_hand():
    # edges crossed: 0, 1, 1, 1, 2; edge 1 passes half of edge 0 at step 2, edge 2 never passes half of edge 1
    recs = coupling.log_scenario([0, 1, 2, 1, 2, 3])
    assert recs == [coupling.LogRecord(2, 2, 2, True, 0.0, 1.0, 1.0)]


def test_log_scenario_initial_profile():
    # edge 0 starts at 3 and is crossed once: edge 1 needs 3 crossings to pass 4 / 2
    assert coupling.log_scenario([0, 1, 2, 1], initial={0: 3.0}) == []
    recs = coupling.log_scenario([0, 1, 2, 1, 2], initial={0: 3.0})
    assert [(r.x, r.n, r.at_max, r.v, r.w) for r in recs] == [(2, 4, True, 4.0, 3.0)]


def test_log_walk_doubles_edge_by_edge():
    kernel, init = engine.preset("log_walk")
    s = engine.run(engine.RunConfig(kernel, 10**6, seed=0, initial_profile=init, record_trajectory=True))
    recs = coupling.log_scenario(s.trajectory)
    late = recs[len(recs) // 2:]
    assert late and all(r.window_ok for r in late)
    assert all(a.n < b.n for a, b in zip(recs, recs[1:]))
