"""Second-derivative walk driven by a hashed family of signs xi^x_{j,k}.

The walk steps by ``xi^x_{j,k}`` where ``x`` is the current site, ``j`` is
half the current value of ``Delta = -2 D`` and ``k`` counts the visits to
``x`` with that same ``Delta``.  Each xi is a deterministic function of
``(seed, x, 2j, k)``, so the family is fixed before the walk runs and can
be audited afterwards.

Between ``sigma_x`` and ``sigma_{x+1}`` the left local time at ``-1/2``
(seen from the walker) changes by ``2 M'``, where ``M'`` counts the keys
``(x, j, 1)`` used in that stretch with ``j <= 0`` and ``xi = -1``, minus
those with ``j > 0`` and ``xi = +1``.  When every ``j`` is consumed this is
``1 - M^x``.  ``literal_residual`` keeps the ``2 M^x`` form for comparison.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _core, engine
from .kernel import InteractionKernel

A_SAMPLE = 10_000
J_WINDOW = 40


class HistoryError(ValueError):
    pass


def _twoj(j) -> int:
    t = 2 * j
    if t != int(t):
        raise ValueError(f"j = {j} is not a half-integer")
    return int(t)


class XiFamily:
    """Lazily evaluated, memoized ``xi^x_{j,k}`` with ``P(+1) = F(-j)``."""

    def __init__(self, seed: int):
        self.seed = int(seed) & (2**64 - 1)
        self.memo: dict[tuple[int, int, int], int] = {}

    @staticmethod
    def p_plus(j) -> float:
        return engine.jump_probability(-float(j))

    def value(self, x: int, twoj: int, k: int) -> int:
        key = (int(x), int(twoj), int(k))
        v = self.memo.get(key)
        if v is None:
            v = int(_core.xi_value(np.uint64(self.seed), np.int64(x), np.int64(twoj), np.int64(k)))
            self.memo[key] = v
        return v

    def xi(self, x: int, j, k: int = 1) -> int:
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        return self.value(x, _twoj(j), k)

    def m(self, x: int, jmax: int = J_WINDOW) -> int:
        """``M^x`` over integer ``|j| <= jmax`` (k = 1)."""
        return sum(self.value(x, 2 * j, 1) == 1 for j in range(0, jmax + 1)) - sum(
            self.value(x, 2 * j, 1) == -1 for j in range(-jmax, 0))


@dataclass
class CoupledRun:
    """Trajectory plus the key ``(x, Delta, k)`` consumed at every step."""

    seed: int
    kernel: InteractionKernel
    trajectory: np.ndarray
    deltas: np.ndarray
    ks: np.ndarray
    family: XiFamily
    initial: dict[int, float]
    parity_violations: list = field(default_factory=list)
    complete: bool = True

    @property
    def steps(self) -> int:
        return self.trajectory.shape[0] - 1

    def keys(self) -> np.ndarray:
        """Rows ``(x, 2j, k, xi)`` in step order."""
        t = self.trajectory
        return np.stack([t[:-1], self.deltas, self.ks, t[1:] - t[:-1]], axis=1)

    def realized_m(self) -> dict[int, int]:
        """``M^x`` from the realized k = 1, integer-j keys of every site."""
        t = self.trajectory
        xs, d, k, v = t[:-1], self.deltas, self.ks, t[1:] - t[:-1]
        sel = (k == 1) & (d % 2 == 0)
        out: dict[int, int] = {}
        for x, dd, vv in zip(xs[sel].tolist(), d[sel].tolist(), v[sel].tolist()):
            if dd >= 0 and vv == 1:
                out[x] = out.get(x, 0) + 1
            elif dd < 0 and vv == -1:
                out[x] = out.get(x, 0) - 1
            else:
                out.setdefault(x, 0)
        return out


def run_coupled(n: int, seed: int, kernel: InteractionKernel | None = None,
                initial: dict[int, float] | None = None) -> CoupledRun:
    """Run ``n`` steps of the coupled walk from 0.

    Defaults to the second-derivative kernel ``-Delta/2`` with
    ``l(-1/2) = l(-3/2) = 1``.  ``Delta`` must be an integer for the given
    kernel and profile; its parity is logged against the rule that Delta is
    even whenever ``X >= 0``.
    """
    if kernel is None:
        kernel, default_init = engine.preset("second_derivative")
        initial = default_init if initial is None else initial
    initial = dict(initial or {})
    margin = engine._margin(kernel)
    lo = -(n + margin + 4)
    size = 2 * (n + margin + 4) + 1
    init_counts = np.zeros(size, dtype=np.int64)
    for e, v in engine.relative_profile(initial, 0).items():
        if v != int(v):
            raise ValueError("coupled walk needs an integer initial profile")
        init_counts[e - lo] = int(v)
    w, p, m = engine._dipole_arrays(kernel)
    fam = XiFamily(seed)
    traj, deltas, ks, ok = _core.coupled_walk(np.uint64(fam.seed), n, margin, w, p, m, init_counts, lo)
    run = CoupledRun(seed, kernel, traj, deltas, ks, fam, initial, complete=bool(ok))
    bad = np.flatnonzero((traj[:-1] >= 0) & (deltas % 2 != 0))
    run.parity_violations = [(int(s), int(traj[s]), int(deltas[s])) for s in bad[:1000]]
    return run


def engine_endpoints(n: int, seeds, kernel=None, initial=None) -> np.ndarray:
    """``X_n`` of direct engine runs with the same kernel and initial profile."""
    if kernel is None:
        kernel, initial = engine.preset("second_derivative")
    return np.array([engine.run(engine.RunConfig(kernel, n, seed=s, initial_profile=initial or {},
                                                 checkpoint_ratio=10.0)).position[-1]
                     for s in seeds])


def coupled_endpoints(n: int, seeds, kernel=None, initial=None) -> np.ndarray:
    return np.array([run_coupled(n, s, kernel, initial).trajectory[-1] for s in seeds])


# ---------------------------------------------------------------- scenario

def _origin(traj):
    return int(traj.min()) - 4


def sigma_times(trajectory) -> dict[int, int | None]:
    """``sigma_x`` for every ``x >= 1`` up to one past the maximum; None where never satisfied."""
    traj = np.asarray(trajectory, dtype=np.int64)
    lo = _origin(traj)
    sigma, _ = _core.sigma_scan(traj, lo, int(traj.max()) - lo + 6)
    return {x: (int(sigma[x]) if sigma[x] >= 0 else None) for x in range(1, sigma.shape[0])}


@dataclass(frozen=True)
class XRecord:
    """One site of the scenario check.

    ``m`` is M^x over the k = 1, integer-j keys consumed at x before
    sigma_{x+1}; ``m_prime`` is the signed count of those keys that deviate
    from the ideal pattern, ``#{j <= 0: xi = -1} - #{j > 0: xi = +1}``.
    ``increment`` is ``l(-1/2)`` at sigma_{x+1} minus ``l(-1/2)`` at sigma_x.
    """

    x: int
    sigma: int
    e1: bool
    e2: bool
    e3: bool
    e4: bool
    m: int | None = None
    m_prime: int | None = None
    increment: int | None = None

    @property
    def residual(self) -> int | None:
        return None if self.increment is None else self.increment - 2 * self.m_prime

    @property
    def literal_residual(self) -> int | None:
        return None if self.increment is None else self.increment - 2 * self.m

    @property
    def recursion_ok(self) -> bool | None:
        return None if self.residual is None else self.residual == 0

    @property
    def conditions(self) -> bool:
        return self.e1 and self.e2 and self.e3 and self.e4


@dataclass
class ScenarioReport:
    records: list
    max_lag: int
    lag_ok: bool
    flag: bool
    first_failure: tuple | None
    steps: int
    final_position: int
    x_start: int = 1

    def record(self, x: int) -> XRecord:
        return next(r for r in self.records if r.x == x)

    @property
    def sqrt_ratio(self) -> float:
        return self.final_position / math.sqrt(2 * self.steps) if self.steps else math.nan

    def recursion_pairs(self) -> list[XRecord]:
        """Records where E(x) and E(x+1) both hold and the recursion is defined."""
        by_x = {r.x: r for r in self.records}
        return [r for r in self.records if r.residual is not None and r.conditions
                and r.x + 1 in by_x and by_x[r.x + 1].conditions]

    def recursion_residuals(self) -> list[int]:
        return [r.residual for r in self.recursion_pairs()]

    def csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(header)
        buf.write("x,sigma_x,e1,e2,e3,e4,M_x,recursion_ok\n")
        for r in self.records:
            ok = "" if r.recursion_ok is None else int(r.recursion_ok)
            m = "" if r.m is None else r.m
            buf.write(f"{r.x},{r.sigma},{int(r.e1)},{int(r.e2)},{int(r.e3)},{int(r.e4)},{m},{ok}\n")
        fail = "" if self.first_failure is None else f"{self.first_failure[0]}:{self.first_failure[1]}"
        buf.write(f"# flag={int(self.flag)} first_failure={fail} max_lag={self.max_lag}\n")
        return buf.getvalue()


def _key_counts(xs, d, v):
    """(M, M') over k = 1 integer-j keys given as site, Delta and step arrays."""
    up = v == 1
    m = int(np.count_nonzero((d >= 0) & up) - np.count_nonzero((d < 0) & ~up))
    mp = int(np.count_nonzero((d <= 0) & ~up) - np.count_nonzero((d > 0) & up))
    return m, mp


def check_scenario(run: CoupledRun, x_start: int = 1) -> ScenarioReport:
    """Evaluate ``E(x)`` for every x >= x_start with sigma_x defined, the lag bound and the
    local-time recursion.

    Thresholds ``x/8``, ``x/10``, ``x/6`` and ``sqrt(x)`` are floored.
    Local times at sigma_x include the initial profile.  The flag needs the
    lag bound, every E(x), and a zero recursion residual wherever E(x) and
    E(x+1) both hold.
    """
    if run is None or run.trajectory is None or run.trajectory.shape[0] == 0:
        raise HistoryError("scenario check needs the full trajectory")
    traj = run.trajectory
    lo = _origin(traj)
    size = int(traj.max()) - lo + 6
    sigma, at = _core.sigma_scan(traj, lo, size)
    init = np.zeros(size, dtype=np.int64)
    for e, v in engine.relative_profile(run.initial, 0).items():
        init[e - lo] = int(v)
    smax = np.maximum.accumulate(traj)
    lag = smax - traj
    edges = np.minimum(traj[1:], traj[:-1])

    # k = 1 integer-j keys grouped by site, in time order
    steps = np.flatnonzero((run.ks == 1) & (run.deltas % 2 == 0))
    steps = steps[np.argsort(traj[steps], kind="stable")]
    sites = traj[steps]

    def ell(x, col):  # L(edge x-3+col) at sigma_x, initial profile included
        return int(at[x, col]) + int(init[x - 3 + col - lo])

    records = []
    defined = [x for x in range(max(1, x_start), sigma.shape[0]) if sigma[x] >= 0]
    for x in defined:
        s = int(sigma[x])
        prev = int(sigma[x - 1]) if x - 1 >= 1 and sigma[x - 1] >= 0 else 0
        e1 = bool(smax[s] <= x)
        seg = traj[min(prev, s): s + 1]
        e2 = bool(seg.min() >= x - 2 and seg.max() <= x)
        m10 = x // 10
        e3 = bool(s >= m10 and np.all(edges[s - m10: s] == x - 1))
        l1, l3 = ell(x, 1), ell(x, 0)
        e4 = bool(abs(l1 - l3) <= math.isqrt(x) and min(l1, l3) > x // 6 and max(l1, l3) < 50 * x)
        a, b = np.searchsorted(sites, [x, x + 1])
        at_x = steps[a:b]
        nxt = int(sigma[x + 1]) if x + 1 < sigma.shape[0] and sigma[x + 1] >= 0 else None
        if nxt is not None:
            at_x = at_x[at_x < nxt]
        m, mp = _key_counts(x, run.deltas[at_x], traj[at_x + 1] - traj[at_x])
        inc = ell(x + 1, 1) - l1 if nxt is not None else None
        records.append(XRecord(x, s, e1, e2, e3, e4, m, mp, inc))

    first = None
    if np.any(lag > 2):
        first = (int(np.argmax(lag > 2)), "lag")
    by_x = {r.x: r for r in records}
    for r in records:
        if first is not None:
            break
        for name in ("e1", "e2", "e3", "e4"):
            if not getattr(r, name):
                first = (r.x, name)
                break
        nx = by_x.get(r.x + 1)
        if first is None and r.residual not in (None, 0) and nx is not None and nx.conditions:
            first = (r.x, "recursion")
    return ScenarioReport(records, int(lag.max()), bool(lag.max() <= 2), first is None, first,
                          run.steps, int(traj[-1]), x_start)


# ------------------------------------------------------------------ A, B, C

@dataclass(frozen=True)
class ABCReport:
    a_pass: bool
    b_pass: bool
    c_pass: bool
    a_keys_checked: int
    a_sampled: bool
    a_first_failure: tuple | None
    b_first_failure: int | None
    c_first_failure: int | None
    m_values: tuple

    @property
    def passed(self) -> bool:
        return self.a_pass and self.b_pass and self.c_pass


def _a_keys(x: int, realized: np.ndarray | None, rng: np.random.Generator, thr: float,
            sample: int, jmax: int):
    """Audited ``(2j, k)`` pairs with ``j > thr`` and ``k <= 100 x^2``: realized ones plus a sample."""
    kmax = 100 * x * x
    out = []
    if realized is not None and realized.size:
        sel = (realized[:, 0] == x) & (np.abs(realized[:, 1]) > 2 * thr) & (realized[:, 2] <= kmax)
        out.extend((abs(int(d)), int(k)) for _, d, k in realized[sel][:, :3])
    if kmax >= 1:
        lo2 = int(math.floor(2 * thr)) + 1
        twoj = rng.integers(lo2, 2 * jmax + 1, size=sample)
        ks = rng.integers(1, kmax + 1, size=sample)
        out.extend(zip(twoj.tolist(), ks.tolist()))
    return out


def check_ABC(family: XiFamily, x_max: int, run: CoupledRun | None = None,
              sample: int = A_SAMPLE, jmax: int = J_WINDOW) -> ABCReport:
    """Audit events A, B and C on ``0 <= x <= x_max``.

    A is checked on realized keys of ``run`` (if given) plus ``sample``
    keys per x drawn uniformly from half-integer ``j`` in ``(sqrt(x)/100, jmax]``
    and ``k`` in ``[1, 100 x^2]``; B and C use integer ``|j| <= jmax``.
    """
    if x_max > 500:
        raise ValueError("x_max is limited to 500")
    rng = np.random.default_rng([family.seed, 0xABC])
    realized = run.keys() if run is not None else None
    a_fail = None
    checked = 0
    b_fail = c_fail = None
    ms = []
    total = 0
    for x in range(0, x_max + 1):
        thr = math.sqrt(x) / 100
        if a_fail is None:
            for twoj, k in _a_keys(x, realized, rng, thr, sample, jmax):
                checked += 1
                if family.value(x, twoj, k) != -1 or family.value(x, -twoj, k) != 1:
                    a_fail = (x, twoj, k)
                    break
        exceptions = sum((family.value(x, 2 * j, 1) == 1) + (family.value(x, -2 * j, 1) == -1)
                         for j in range(1, jmax + 1))
        if b_fail is None and exceptions > math.sqrt(x) / 100:
            b_fail = x
        mx = family.m(x, jmax)
        ms.append(mx)
        total += mx
        if c_fail is None and x >= 1 and not (x / 4 <= total <= 4 * x):
            c_fail = x
    return ABCReport(a_fail is None, b_fail is None, c_fail is None, checked, True,
                     a_fail, b_fail, c_fail, tuple(ms))


# ---------------------------------------------------------------- logarithmic scenario

@dataclass(frozen=True)
class LogRecord:
    """The walk at ``n_x``, the first time ``L(x - 1/2)`` exceeds ``L(x - 3/2) / 2``.

    ``u, v, w`` are the local times of the edges at ``x - 5/2, x - 3/2, x - 1/2``.
    """

    x: int
    n: int
    position: int
    at_max: bool
    u: float
    v: float
    w: float

    @property
    def window_ok(self) -> bool:
        v = self.v
        return 0.9 * v / 2 <= self.u <= 1.1 * v / 2 and v / 2 <= self.w <= v


def log_scenario(trajectory, initial: dict[int, float] | None = None) -> list[LogRecord]:
    """Diagnostic U, V, W readings along the doubling scenario of the logarithmic walk.

    ``initial`` maps absolute left endpoints to initial local times.  This
    only reports the readings; it does not decide whether the scenario holds.
    """
    tr = np.asarray(trajectory, dtype=np.int64)
    if tr.shape[0] < 2:
        return []
    initial = initial or {}
    edges = np.minimum(tr[1:], tr[:-1])
    running_max = np.maximum.accumulate(tr)
    out = []
    start = 0
    for x in range(int(tr[0]) + 2, int(tr.max()) + 1):
        # the edge x - 1/2 has left endpoint x - 1
        base = 2 * initial.get(x - 1, 0.0) - initial.get(x - 2, 0.0)
        gap = base + np.cumsum(2 * (edges == x - 1).astype(np.int64) - (edges == x - 2))
        hit = np.flatnonzero(gap[start:] > 0)
        if hit.size == 0:
            break
        n = start + int(hit[0]) + 1
        seen = edges[:n]
        u, v, w = (initial.get(e, 0.0) + float(np.count_nonzero(seen == e)) for e in (x - 3, x - 2, x - 1))
        out.append(LogRecord(x, n, int(tr[n]), bool(tr[n] == running_max[n]), u, v, w))
        start = n - 1
    return out
