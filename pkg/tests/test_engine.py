import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfwalk import engine
from selfwalk.engine import (LocalTimeProfile, RunConfig, RunLengthError, UnknownPresetError,
                             WalkState, checkpoint_times, drift, jump_probability, preset, run,
                             step)
from selfwalk.kernel import new_general, new_symmetric

from conftest import run_preset


class FixedDraws:
    """Stand-in generator returning a fixed sequence of uniforms."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def fresh_state(initial=None, rng=None):
    prof = LocalTimeProfile(engine.relative_profile(initial or {}, 0))
    return WalkState(0, 0, prof, rng or engine.stream(0))


# ---------------------------------------------------------------- drift

def test_drift_zero_profile():
    for name in engine.PRESETS:
        assert drift(LocalTimeProfile(), 0, preset(name)[0]) == 0.0


def test_drift_second_derivative_initial_profile():
    kernel, init = preset("second_derivative")
    prof = LocalTimeProfile(engine.relative_profile(init, 0))
    assert drift(prof, 0, kernel) == 0.0


def test_drift_tsrw_after_first_right_step():
    prof = LocalTimeProfile()
    prof.counts[0 - prof.origin] += 1  # edge {0, 1}
    assert drift(prof, 1, new_symmetric(0, 1)) == 1.0


def test_drift_matches_plain_sum():
    rng = np.random.default_rng(2)
    k = new_general({-5: 1, -1: 2.5, 3: -3.5})
    prof = LocalTimeProfile({e: float(rng.integers(0, 9)) for e in range(-10, 10)}, level=0.25)
    prof.ensure(-12, 12)
    prof.counts[:] = 0
    for e in range(-10, 10):
        prof.counts[e - prof.origin] = rng.integers(0, 20)
    for x in range(-4, 5):
        plain = sum(w * prof.relative(x, o) for o, w in k.coeffs.items())
        assert drift(prof, x, k) == pytest.approx(plain, abs=1e-12)


# ---------------------------------------------------------------- jump law

def test_jump_probability_examples():
    assert jump_probability(0.0) == 0.5
    assert jump_probability(1.0) == pytest.approx(math.e / (math.e + 1 / math.e), rel=1e-15)
    assert jump_probability(-1000.0) == 0.0
    assert jump_probability(1000.0) == 1.0


def test_jump_probability_nan():
    with pytest.raises(ValueError):
        jump_probability(float("nan"))


@given(st.floats(-500, 500, allow_nan=False))
def test_jump_probability_complement(d):
    assert abs(jump_probability(-d) - (1.0 - jump_probability(d))) <= np.spacing(1.0)


@given(st.floats(-399, 399), st.floats(1e-6, 1.0))
def test_jump_probability_monotone(d, h):
    assert jump_probability(d + h) >= jump_probability(d)


# ---------------------------------------------------------------- step

def test_step_conserves_mass():
    s = fresh_state()
    k = new_symmetric(0, 1)
    for n in range(1, 200):
        x = s.position
        step(s, k)
        assert abs(s.position - x) == 1
        assert s.profile.total() == n == s.step


def test_step_saturated_repulsion():
    k = new_symmetric(0, 1000.0)
    prof = LocalTimeProfile({-1: 1.0})  # l(-1/2) = 1 > l(1/2) = 0
    s = WalkState(0, 0, prof, FixedDraws([0.999999999]))
    step(s, k)
    assert s.position == 1


def test_two_forced_right_steps_build_the_start_profile():
    kernel, init = preset("second_derivative")
    s = fresh_state(rng=FixedDraws([0.0, 0.0]))
    step(s, kernel)
    step(s, kernel)
    assert s.position == 2
    seen = {o: s.profile.relative(2, o) for o in (-5, -3, -1, 1, 3)}
    assert seen == {-5: 0.0, -3: 1.0, -1: 1.0, 1: 0.0, 3: 0.0}
    assert {o for o, v in seen.items() if v} == set(init)


def test_step_counter_overflow():
    s = fresh_state()
    s.step = engine.MAX_STEPS
    with pytest.raises(RunLengthError):
        step(s, new_symmetric(0, 1))


def test_step_matches_run():
    k = new_symmetric(-0.4, 1.3)
    s = WalkState(0, 0, LocalTimeProfile(), engine.stream(9, 3))
    path = [0]
    for _ in range(5000):
        path.append(step(s, k).position)
    summary = run(RunConfig(k, 5000, seed=9, run_index=3, record_trajectory=True))
    assert np.array_equal(summary.trajectory, path)


# ---------------------------------------------------------------- run

def test_zero_steps():
    s = run(RunConfig(new_symmetric(0, 1), 0, initial_position=5))
    assert s.checkpoints() == [(0, 5, 5, 5)]


def test_same_seed_same_summary():
    a = run_preset("tsrw", 200_000, seed=4)
    b = run_preset("tsrw", 200_000, seed=4)
    assert a.checkpoints() == b.checkpoints()
    assert np.array_equal(a.final_profile.counts, b.final_profile.counts)
    assert np.array_equal(a.max_lag, b.max_lag)


def test_run_index_gives_distinct_streams():
    a = run_preset("tsrw", 10_000, seed=4, run_index=0)
    b = run_preset("tsrw", 10_000, seed=4, run_index=1)
    assert a.checkpoints() != b.checkpoints()


def test_self_attractive_walk_sticks_to_one_edge():
    stuck = 0
    for s in range(20):
        summary = run(RunConfig(new_symmetric(0, -1), 10**5, seed=s))
        stuck += int(summary.range_max[-1] - summary.range_min[-1]) == 1
    assert stuck >= 10


def test_checkpoint_times():
    t = checkpoint_times(10**6, 1.1)
    assert t[0] == 0 and t[-1] == 10**6
    assert np.all(np.diff(t) > 0)
    inner = t[1:-1]
    assert set(inner) <= {math.floor(1.1**i) for i in range(200)}


def test_checkpoint_ratio_bounds():
    for bad in (1.0, 10.5, 0.5):
        with pytest.raises(ValueError):
            RunConfig(new_symmetric(0, 1), 10, checkpoint_ratio=bad)
    with pytest.raises(RunLengthError):
        RunConfig(new_symmetric(0, 1), engine.MAX_STEPS)


def test_prefix_consistency_and_conservation():
    long = run_preset("third_derivative", 300_000, seed=2, record_trajectory=True)
    for n in (1, 17, 65_536, 100_000, 131_073):
        short = run_preset("third_derivative", n, seed=2)
        assert short.final_profile.total() == n
        assert short.position[-1] == long.trajectory[n]


def test_checkpoints_agree_with_trajectory():
    s = run_preset("tsrw", 100_000, seed=1, record_trajectory=True)
    tr = s.trajectory
    assert np.all(np.abs(np.diff(tr)) == 1)
    assert np.array_equal(s.position, tr[s.n])
    assert np.array_equal(s.range_max, np.maximum.accumulate(tr)[s.n])
    assert np.array_equal(s.range_min, np.minimum.accumulate(tr)[s.n])
    assert np.array_equal(s.max_lag, np.maximum.accumulate(np.maximum.accumulate(tr) - tr)[s.n])


def test_counts_zero_outside_visited_range():
    s = run_preset("tsrw", 50_000, seed=3)
    p = s.final_profile
    lo, hi = int(s.range_min[-1]), int(s.range_max[-1])
    idx = np.arange(p.counts.shape[0]) + p.origin
    assert not p.counts[(idx < lo) | (idx >= hi)].any()
    assert p.total() == 50_000


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(sorted(engine.PRESETS)), st.floats(-1e6, 1e6), st.integers(0, 2**32))
def test_height_shift_leaves_run_identical(name, level, seed):
    kernel, init = preset(name)
    base = run(RunConfig(kernel, 20_000, seed=seed, initial_profile=init, record_trajectory=True))
    lifted = run(RunConfig(kernel, 20_000, seed=seed, initial_profile=init, initial_level=level,
                           record_trajectory=True))
    assert np.array_equal(base.trajectory, lifted.trajectory)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["tsrw", "third_derivative", "trap"]), st.integers(0, 2**32))
def test_mirror_coupling(name, seed):
    kernel, _ = preset(name)
    a = run(RunConfig(kernel, 30_000, seed=seed, record_trajectory=True))
    b = run(RunConfig(kernel, 30_000, seed=seed, record_trajectory=True, flip_draws=True))
    assert np.array_equal(a.trajectory, -b.trajectory)


def test_log_walk_saturation_safety():
    s = run_preset("log_walk", 10**6, seed=0)
    p = s.final_profile
    kernel = s.kernel
    assert p.counts.max() > 2**17
    for x in range(int(s.range_min[-1]), int(s.range_max[-1]) + 1):
        d = drift(p, x, kernel)
        assert math.isfinite(d)
        assert 0.0 <= jump_probability(d) <= 1.0


# ---------------------------------------------------------------- presets

def test_preset_coefficients():
    assert preset("tsrw") == (new_symmetric(0, 1), {})
    k, init = preset("second_derivative")
    assert dict(k.coeffs) == {-3: -0.5, -1: 0.5, 1: 0.5, 3: -0.5}
    assert init == {-1: 1.0, -3: 1.0}
    assert sum(k.coeffs.values()) == 0
    # the naive log scheme 2 l(-3/2) - l(-1/2) - l(1/2), negated
    assert dict(preset("log_walk")[0].coeffs) == {-3: -2.0, -1: 1.0, 1: 1.0}
    assert dict(preset("ballistic")[0].coeffs) == {-1: 1.0, 1: -2.0, 3: 1.0}
    assert preset("third_derivative")[0] == new_symmetric(-1, 3)
    assert preset("trap")[0] == new_symmetric(1, 0)


def test_preset_returns_copies():
    _, init = preset("second_derivative")
    init[-1] = 99.0
    assert preset("second_derivative")[1][-1] == 1.0


def test_unknown_preset():
    with pytest.raises(UnknownPresetError):
        preset("nope")
    with pytest.raises(LookupError):
        preset("nope")


def test_profile_table():
    s = run_preset("second_derivative", 1000, seed=0)
    rows = s.final_profile.edge_table()
    edges = [r[0] for r in rows]
    assert edges == sorted(edges)
    assert {r[0]: r[2] for r in rows if r[2]} == {-1: 1.0, -2: 1.0}
    assert sum(r[1] for r in rows) == 1000
