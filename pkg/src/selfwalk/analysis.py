"""Offline classification of runs from their checkpoint summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .kernel import InteractionKernel


class InsufficientRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Thresholds:
    """Band limits for the phase decision tree; all overridable."""

    min_steps: int = 10**6
    # a pure log n curve has log-log slope ~ ln2/ln(N) ~ 0.1 over [sqrt N, N] at N = 1e6
    log_slope: float = 0.2
    log_ratio: tuple[float, float] = (0.5, 1.5)
    ballistic_slope: float = 0.9
    sqrt_lag: int = 2
    sqrt_ratio: tuple[float, float] = (0.9, 1.1)
    diffusive: tuple[float, float] = (0.45, 0.55)
    slow: tuple[float, float] = (0.1, 0.45)


DEFAULT_THRESHOLDS = Thresholds()

STUCK_PROXY = (
    "finite-time proxy: global range frozen over the last half of checkpoints, "
    "sites visited in the last half equal those visited in the last quarter, "
    "and the inward drift at both ends of that interval grew since mid-run"
)


@dataclass(frozen=True)
class ExponentEstimate:
    slope: float
    stderr: float
    window: tuple[int, int]
    statistic: str = "max_{m<=n} |X_m - X_0|"
    stuck: bool = False


@dataclass(frozen=True)
class Trap:
    interval: tuple[int, int]
    k_sites: int
    reinforcing: bool
    inward_mid: tuple[float, float]
    inward_final: tuple[float, float]


@dataclass(frozen=True)
class PhaseLabel:
    label: str
    k_sites: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def __str__(self):
        return f"stuck({self.k_sites})" if self.label == "stuck" else self.label


def displacement(summary) -> np.ndarray:
    """``max_{m<=n} |X_m - X_0|`` at each checkpoint."""
    return np.maximum(summary.range_max - summary.x0, summary.x0 - summary.range_min)


def scaling_exponent(summary) -> ExponentEstimate:
    """Log-log slope of the running maximal displacement over checkpoints with ``n >= sqrt(steps)``."""
    n = np.asarray(summary.n)
    if n.shape[0] < 8:
        raise ValueError("need at least 8 checkpoints")
    sel = (n >= math.sqrt(summary.steps)) & (n > 0)
    if sel.sum() < 2:
        raise ValueError("fewer than two checkpoints in the regression window")
    x = np.log(n[sel].astype(float))
    stat = displacement(summary)[sel]
    window = (int(n[sel][0]), int(n[sel][-1]))
    if stat[0] == stat[-1]:
        return ExponentEstimate(0.0, 0.0, window, stuck=True)
    y = np.log(stat.astype(float))
    xm = x - x.mean()
    sxx = float(xm @ xm)
    slope = float(xm @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xm
    dof = x.shape[0] - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return ExponentEstimate(slope, stderr, window)


def _inward(profile, kernel, lo, hi):
    return engine.drift(profile, lo, kernel), -engine.drift(profile, hi, kernel)


def find_trap(summary) -> Trap | None:
    """Interval the walk is confined to at the end of the run, if any.

    Requires the global range to be frozen over the last half of
    checkpoints and the set of sites visited in the last half of the run to
    coincide with the set visited in the last quarter.
    """
    span = summary.range_max - summary.range_min
    n = np.asarray(summary.n)
    late = n >= math.sqrt(summary.steps)
    if summary.steps == 0 or np.any(span[late] != span[-1]):
        return None
    prof = summary.final_profile
    lv = prof.last_visit
    half = np.flatnonzero(lv >= summary.steps // 2)
    quarter = np.flatnonzero(lv >= (3 * summary.steps) // 4)
    if half.size == 0 or half.size != quarter.size or np.any(half != quarter):
        return None
    lo, hi = int(half[0]) + prof.origin, int(half[-1]) + prof.origin
    k = summary.kernel
    fin = _inward(prof, k, lo, hi)
    if summary.mid_profile is None:
        return Trap((lo, hi), hi - lo + 1, False, (math.nan, math.nan), fin)
    mid = _inward(summary.mid_profile.copy(), k, lo, hi)
    reinforcing = fin[0] > mid[0] and fin[1] > mid[1]
    return Trap((lo, hi), hi - lo + 1, reinforcing, mid, fin)


def detect_stuck(summary) -> tuple[tuple[int, int], int] | None:
    """``(interval, k_sites)`` when the walk looks permanently stuck, else None."""
    trap = find_trap(summary)
    if trap is None or not trap.reinforcing:
        return None
    return trap.interval, trap.k_sites


@dataclass(frozen=True)
class SqrtSignature:
    ratio: float
    max_lag: int


def sqrt_signature(summary) -> SqrtSignature:
    """``(X_n - X_0) / sqrt(2n)`` at the last checkpoint, with ``max_m (S_m - X_m)``."""
    n = int(summary.n[-1])
    if n == 0:
        raise ValueError("empty run has no sqrt signature")
    x = int(summary.position[-1]) - summary.x0
    return SqrtSignature(x / math.sqrt(2 * n), int(summary.max_lag[-1]))


def log_signature(summary) -> tuple[float, float]:
    """``((X_n - X_0) log 2 / log n, mean adjacent edge ratio)`` over the interior of the range.

    The ratio drops the leftmost edge and the frontier edge, whose counts
    are still being built.
    """
    lo, hi = int(summary.range_min[-1]), int(summary.range_max[-1])
    if hi - lo + 1 < 6:
        raise InsufficientRangeError(f"range of {hi - lo + 1} sites is too small")
    n = int(summary.n[-1])
    prof = summary.final_profile
    counts = np.array([prof.value(e) for e in range(lo, hi)], dtype=float)
    ratios = counts[2:-1] / counts[1:-2]
    x = int(summary.position[-1]) - summary.x0
    return x * math.log(2) / math.log(n), float(ratios.mean())


def grows_right(summary) -> bool:
    """Range growth only at the right end over the last half of checkpoints, walker at the front."""
    late = np.asarray(summary.n) >= math.sqrt(summary.steps)
    return bool(np.all(summary.range_min[late] == summary.range_min[-1])
                and summary.range_max[-1] > summary.range_max[late][0]
                and summary.max_lag[-1] - summary.max_lag[late][0] <= 0
                and summary.range_max[-1] - summary.position[-1] <= 2)


def _log_linear(summary, th: Thresholds) -> bool:
    n = int(summary.n[-1])
    x = int(summary.position[-1]) - summary.x0
    if n < 2 or x == 0:
        return False
    ratio = abs(x) * math.log(2) / math.log(n)
    return th.log_ratio[0] <= ratio <= th.log_ratio[1]


def classify_phase(summary, kernel: InteractionKernel | None = None,
                   thresholds: Thresholds = DEFAULT_THRESHOLDS) -> PhaseLabel:
    """Decision tree over the run's signatures; a pure function of its inputs."""
    th = thresholds
    if summary.steps < th.min_steps:
        raise ValueError(f"classification needs at least {th.min_steps} steps")
    if kernel is not None and kernel != summary.kernel:
        summary = replace(summary, config=replace(summary.config, kernel=kernel))
    diag: dict = {"stuck_proxy": STUCK_PROXY}
    est = scaling_exponent(summary)
    sig = sqrt_signature(summary)
    diag.update(slope=est.slope, stderr=est.stderr, sqrt_ratio=sig.ratio, max_lag=sig.max_lag)
    try:
        diag["log_ratio"], diag["growth_ratio"] = log_signature(summary)
    except InsufficientRangeError:
        pass
    trap = find_trap(summary)
    if trap is not None:
        diag["trap"] = trap
        if trap.reinforcing:
            return PhaseLabel("stuck", trap.k_sites, diag)
        # confinement that does not strengthen is escaped eventually
        return PhaseLabel("slow_trapped", None, diag)
    s = est.slope
    if s < th.log_slope and _log_linear(summary, th):
        return PhaseLabel("logarithmic", None, diag)
    if s > th.ballistic_slope:
        return PhaseLabel("ballistic", None, diag)
    if sig.max_lag <= th.sqrt_lag and th.sqrt_ratio[0] <= sig.ratio <= th.sqrt_ratio[1]:
        return PhaseLabel("sqrt_deterministic", None, diag)
    if th.diffusive[0] <= s <= th.diffusive[1]:
        return PhaseLabel("diffusive_band", None, diag)
    if th.diffusive[1] < s < th.ballistic_slope:
        return PhaseLabel("superdiffusive_band", None, diag)
    if th.slow[0] < s < th.slow[1]:
        return PhaseLabel("slow_trapped", None, diag)
    return PhaseLabel("unclassified", None, diag)


def summary_from_trajectory(traj, steps: int | None = None, ratio: float = 1.1,
                            kernel: InteractionKernel | None = None):
    """Build a checkpoint summary from an explicit position sequence (for synthetic checks)."""
    traj = np.asarray(traj, dtype=np.int64)
    steps = traj.shape[0] - 1 if steps is None else steps
    times = engine.checkpoint_times(steps, ratio)
    run_max = np.maximum.accumulate(traj)
    run_min = np.minimum.accumulate(traj)
    lag = np.maximum.accumulate(run_max - traj)
    prof = engine.LocalTimeProfile(center=int(traj[0]))
    lo, hi = int(traj.min()), int(traj.max())
    prof.ensure(lo - 4, hi + 4)
    from ._core import replay_counts
    prof.counts = replay_counts(traj, prof.origin, prof.counts.shape[0])
    for t, x in enumerate(traj.tolist()):
        prof.last_visit[x - prof.origin] = t
    if kernel is None:
        from .kernel import new_symmetric
        kernel = new_symmetric(0, 1)
    cfg = engine.RunConfig(kernel, steps, initial_position=int(traj[0]), checkpoint_ratio=ratio)
    state = engine.WalkState(int(traj[-1]), steps, prof, engine.stream(0))
    return engine.RunSummary(cfg, times, traj[times], run_min[times], run_max[times],
                             lag[times], prof, state, steps, traj, None)
