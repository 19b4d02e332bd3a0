"""Stepping engine: local-time profile, drift, jump law and checkpointed runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _core
from .kernel import InteractionKernel, new_general, new_symmetric, format_literal

RNG_ID = "philox4x64-10/seedsequence(master,spawn_key=(run_index,))/double53"
CHUNK = 1 << 16
MAX_STEPS = 2**62


class RunLengthError(OverflowError):
    pass


class UnknownPresetError(LookupError):
    pass


def jump_probability(d: float) -> float:
    """Logistic response ``F(d) = e^d / (e^d + e^-d)``, saturating beyond |d| > 400."""
    if math.isnan(d):
        raise ValueError("drift is NaN")
    if d > _core.SATURATION:
        return 1.0
    if d < -_core.SATURATION:
        return 0.0
    if d >= 0:
        return 1.0 / (1.0 + math.exp(-2.0 * d))
    e = math.exp(2.0 * d)
    return e / (1.0 + e)


def stream(seed: int, run_index: int = 0) -> np.random.Generator:
    """Independent per-run generator derived from ``(master seed, run index)``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(run_index),))
    return np.random.Generator(np.random.Philox(ss))


class LocalTimeProfile:
    """Edge local times on a dense growable array.

    ``counts[i]`` is the number of crossings of the edge whose left endpoint
    is ``origin + i``.  ``initial`` holds a sparse real-valued starting
    profile (absolute edge -> value) and ``level`` a constant added to every
    edge; neither changes ``counts``.
    """

    def __init__(self, initial: Mapping[int, float] | None = None, level: float = 0.0,
                 size: int = 64, center: int = 0):
        self.initial = {int(k): float(v) for k, v in (initial or {}).items() if v != 0}
        self.level = float(level)
        lo = min([center] + list(self.initial))
        hi = max([center] + list(self.initial))
        size = max(size, 2 * (hi - lo) + 16)
        self.origin = (lo + hi) // 2 - size // 2
        self.counts = np.zeros(size, dtype=np.int64)
        self.init = np.zeros(size, dtype=np.float64)
        self.last_visit = np.full(size, -1, dtype=np.int64)
        self._fill_init()

    def _fill_init(self):
        for e, v in self.initial.items():
            self.init[e - self.origin] = v

    def copy(self) -> "LocalTimeProfile":
        new = LocalTimeProfile.__new__(LocalTimeProfile)
        new.initial = dict(self.initial)
        new.level = self.level
        new.origin = self.origin
        new.counts = self.counts.copy()
        new.init = self.init.copy()
        new.last_visit = self.last_visit.copy()
        return new

    def grow(self, left: bool, right: bool):
        n = self.counts.shape[0]
        pad_l = n if left else 0
        pad_r = n if right else 0
        self.counts = np.pad(self.counts, (pad_l, pad_r))
        self.init = np.pad(self.init, (pad_l, pad_r))
        self.last_visit = np.pad(self.last_visit, (pad_l, pad_r), constant_values=-1)
        self.origin -= pad_l

    def ensure(self, lo: int, hi: int):
        """Make edges ``lo..hi`` addressable."""
        while lo < self.origin:
            self.grow(True, False)
        while hi >= self.origin + self.counts.shape[0]:
            self.grow(False, True)

    def count(self, edge: int) -> int:
        i = edge - self.origin
        if 0 <= i < self.counts.shape[0]:
            return int(self.counts[i])
        return 0

    def value(self, edge: int) -> float:
        """Total local time ``L(edge)`` including the initial profile."""
        return self.count(edge) + self.initial.get(edge, 0.0) + self.level

    def relative(self, position: int, o2: int) -> float:
        """``l(e) = L(position + e)`` with ``o2 = 2e``."""
        return self.value(position + (o2 - 1) // 2)

    def total(self) -> int:
        return int(self.counts.sum())

    def visited_edges(self) -> tuple[int, int] | None:
        nz = np.flatnonzero(self.counts)
        if nz.size == 0:
            return None
        return self.origin + int(nz[0]), self.origin + int(nz[-1])

    def edge_table(self) -> list[tuple[int, int, float]]:
        """Rows ``(edge_left_endpoint, count, initial_value)`` over visited and initialized edges."""
        edges = set(self.initial)
        span = self.visited_edges()
        if span:
            edges.update(range(span[0], span[1] + 1))
        return [(e, self.count(e), self.initial.get(e, 0.0) + self.level) for e in sorted(edges)]


@dataclass
class WalkState:
    position: int
    step: int
    profile: LocalTimeProfile
    rng: np.random.Generator


def _dipole_arrays(kernel: InteractionKernel):
    terms = kernel.dipoles()
    w = np.array([t[0] for t in terms], dtype=np.float64)
    p = np.array([(t[1] - 1) // 2 for t in terms], dtype=np.int64)
    m = np.array([(t[2] - 1) // 2 for t in terms], dtype=np.int64)
    return w, p, m


def _margin(kernel: InteractionKernel) -> int:
    return max(abs(o) for o in kernel.coeffs) + 2


def drift(profile: LocalTimeProfile, position: int, kernel: InteractionKernel) -> float:
    """``D = sum_e a_e (counts + initial)(position + e)``, evaluated as the engine does."""
    profile.ensure(position - _margin(kernel), position + _margin(kernel))
    w, p, m = _dipole_arrays(kernel)
    return float(_core.drift_at(profile.counts, profile.init, position - profile.origin, w, p, m))


def step(state: WalkState, kernel: InteractionKernel, flip: bool = False) -> WalkState:
    """Advance one step in place using exactly one uniform draw."""
    if state.step >= MAX_STEPS:
        raise RunLengthError("step counter would overflow")
    d = drift(state.profile, state.position, kernel)
    u = state.rng.random()
    if flip:
        u = 1.0 - u
    prof = state.profile
    if _core.jump_right(d, u):
        prof.counts[state.position - prof.origin] += 1
        state.position += 1
    else:
        prof.counts[state.position - 1 - prof.origin] += 1
        state.position -= 1
    state.step += 1
    prof.ensure(state.position, state.position)
    prof.last_visit[state.position - prof.origin] = state.step
    return state


def relative_profile(rel: Mapping[int, float], x0: int) -> dict[int, float]:
    """Convert ``{2e: value}`` seen from ``x0`` into absolute left endpoints."""
    return {x0 + (o2 - 1) // 2: float(v) for o2, v in rel.items()}


def checkpoint_times(steps: int, ratio: float) -> np.ndarray:
    """``0`` then the distinct values of ``floor(ratio**i)`` below ``steps``, then ``steps``."""
    times = [0]
    i = 0
    while True:
        t = int(math.floor(ratio ** i))
        if t >= steps:
            break
        if t > times[-1]:
            times.append(t)
        i += 1
    if steps > 0:
        times.append(steps)
    return np.array(times, dtype=np.int64)


@dataclass
class RunConfig:
    kernel: InteractionKernel
    steps: int
    seed: int = 0
    initial_position: int = 0
    initial_profile: Mapping[int, float] = field(default_factory=dict)
    initial_level: float = 0.0
    checkpoint_ratio: float = 1.1
    record_trajectory: bool = False
    run_index: int = 0
    flip_draws: bool = False

    def __post_init__(self):
        if not (1.0 < self.checkpoint_ratio <= 10.0):
            raise ValueError("checkpoint_ratio must lie in (1, 10]")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.steps >= MAX_STEPS:
            raise RunLengthError("run length exceeds the step counter range")

    def profile_literal(self) -> str:
        return format_literal(self.initial_profile) if self.initial_profile else "zero"


@dataclass
class RunSummary:
    """Checkpoint table ``(n, X_n, range_min, range_max)`` plus the final state.

    ``max_lag[i]`` is ``max_{m <= n_i} (S_m - X_m)`` with ``S`` the running maximum.
    ``mid_profile`` is a copy of the profile at ``n = steps // 2``.
    """

    config: RunConfig
    n: np.ndarray
    position: np.ndarray
    range_min: np.ndarray
    range_max: np.ndarray
    max_lag: np.ndarray
    final_profile: LocalTimeProfile
    final_state: WalkState
    steps: int
    trajectory: np.ndarray | None = None
    mid_profile: LocalTimeProfile | None = None

    @property
    def kernel(self) -> InteractionKernel:
        return self.config.kernel

    @property
    def x0(self) -> int:
        return self.config.initial_position

    def checkpoints(self) -> list[tuple[int, int, int, int]]:
        return list(zip(self.n.tolist(), self.position.tolist(),
                        self.range_min.tolist(), self.range_max.tolist()))


def run(config: RunConfig) -> RunSummary:
    """Simulate ``config.steps`` steps; a pure function of the config."""
    kernel = config.kernel
    x0 = config.initial_position
    prof = LocalTimeProfile(relative_profile(config.initial_profile, x0),
                            level=config.initial_level, center=x0,
                            size=max(64, 4 * _margin(kernel)))
    rng = stream(config.seed, config.run_index)
    w, p, m = _dipole_arrays(kernel)
    margin = _margin(kernel)

    ckpt = checkpoint_times(config.steps, config.checkpoint_ratio)
    nck = ckpt.shape[0]
    ck_n = np.zeros(nck, dtype=np.int64)
    ck_x = np.zeros(nck, dtype=np.int64)
    ck_min = np.zeros(nck, dtype=np.int64)
    ck_max = np.zeros(nck, dtype=np.int64)
    ck_lag = np.zeros(nck, dtype=np.int64)
    ck_x[0] = ck_min[0] = ck_max[0] = x0
    st = np.zeros(_core.NSTATE, dtype=np.int64)
    st[_core.POS] = x0
    st[_core.RMIN] = st[_core.RMAX] = x0
    st[_core.CKPT] = 1
    traj = np.empty(config.steps + 1 if config.record_trajectory else 0, dtype=np.int64)
    if config.record_trajectory:
        traj[0] = x0
    prof.last_visit[x0 - prof.origin] = 0

    half = config.steps // 2
    mid = prof.copy() if half == 0 else None
    done = 0
    while done < config.steps:
        # chunks never straddle the midpoint so the snapshot is exact
        limit = half if done < half else config.steps
        draws = rng.random(min(CHUNK, limit - done))
        t = 0
        while t < draws.shape[0]:
            t = _core.advance(prof.counts, prof.init, prof.last_visit, prof.origin, st,
                              draws, t, config.flip_draws, w, p, m, margin,
                              ckpt, ck_n, ck_x, ck_min, ck_max, ck_lag, traj)
            if t < draws.shape[0]:
                i = int(st[_core.POS]) - prof.origin
                prof.grow(i < margin, i >= prof.counts.shape[0] - margin)
        done += draws.shape[0]
        if done == half:
            mid = prof.copy()

    pos = int(st[_core.POS])
    state = WalkState(pos, int(st[_core.STEP]), prof, rng)
    return RunSummary(config, ck_n, ck_x, ck_min, ck_max, ck_lag, prof, state,
                      config.steps, traj if config.record_trajectory else None, mid)


# ------------------------------------------------------------------ presets

PRESETS: dict[str, tuple[InteractionKernel, dict[int, float]]] = {
    "tsrw": (new_symmetric(0, 1), {}),
    "third_derivative": (new_symmetric(-1, 3), {}),
    "trap": (new_symmetric(1, 0), {}),
    "second_derivative": (new_general({-3: -0.5, -1: 0.5, 1: 0.5, 3: -0.5}), {-1: 1.0, -3: 1.0}),
    "log_walk": (new_general({-3: -2, -1: 1, 1: 1}), {}),
    "ballistic": (new_general({-1: 1, 1: -2, 3: 1}), {}),
    # -(1/2) times the fourth difference -l(-5/2) + 3l(-3/2) - 2l(-1/2) - 2l(1/2) + 3l(3/2) - l(5/2)
    "fourth_derivative": (
        new_general({-5: 0.5, -3: -1.5, -1: 1.0, 1: 1.0, 3: -1.5, 5: 0.5}),
        {-1: 1.0, -3: 1.0, -5: 1.0},
    ),
}


def preset(name: str) -> tuple[InteractionKernel, dict[int, float]]:
    try:
        kernel, init = PRESETS[name]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    return kernel, dict(init)
