"""The environment seen from the walker as a Markov chain on gradient profiles.

Conventions, fixed by the exact checks below:

* ``eta(x) = l(x + 1/2) - l(x - 1/2)``, so the drift is ``sum_x c(x) eta(x)``
  with ``c = kernel.eta_coeffs``.
* Shifts are derived from the crossing itself: a right jump adds one to the
  crossed edge and recenters, ``R eta(x) = eta(x+1) + delta_{-1}(x) - delta_0(x)``;
  likewise ``L eta(x) = eta(x-1) + delta_0(x) - delta_1(x)``.
* The Gibbs precision is ``alpha = -c`` and
  ``log pi0(eta) = -1/2 sum_{x,y} eta(x) eta(y) alpha(y - x)`` with eta = 0
  outside the window.  With this pairing
  ``log pi0(R eta) - log pi0(eta) = D(eta) - D(R eta)`` holds exactly.
* The jump chain of the process that jumps right at rate ``e^D`` and left at
  rate ``e^-D`` has stationary weight ``pi0 * tau`` with
  ``tau = e^D + e^-D``; the exact check confirms this and rejects ``pi0 / tau``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _core, engine
from .kernel import (InteractionKernel, eta_coeffs, is_positive_definite, new_symmetric,
                     precision)

MAX_WINDOW = 4
MAX_HEIGHT = 5
MAX_STATES = 3_000_000
SIGN_CONVENTION = "alpha = -c; R eta(x) = eta(x+1) + d_{-1} - d_0; L eta(x) = eta(x-1) + d_0 - d_1"


class WindowOverflowError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


class ResourceLimitError(MemoryError):
    pass


class ParityError(ValueError):
    pass


@dataclass(frozen=True)
class GradientProfile:
    """Integer gradient ``eta`` on ``[-w, w]``, zero outside, with ``eta(x) + 1{x=0}`` even."""

    values: tuple[int, ...]

    def __post_init__(self):
        if len(self.values) % 2 != 1:
            raise ValueError("window must have odd length 2w + 1")
        for x, v in zip(self.sites, self.values):
            if (v + (x == 0)) % 2:
                raise ParityError(f"eta({x}) = {v} breaks the parity of Omega")

    @classmethod
    def from_dict(cls, eta: dict[int, int], w: int) -> "GradientProfile":
        if any(abs(x) > w for x, v in eta.items() if v):
            raise WindowOverflowError("support exceeds the window")
        return cls(tuple(int(eta.get(x, 0)) for x in range(-w, w + 1)))

    @classmethod
    def minimal(cls, w: int) -> "GradientProfile":
        """The state with ``eta(0) = 1`` and zero elsewhere."""
        return cls.from_dict({0: 1}, w)

    @property
    def w(self) -> int:
        return len(self.values) // 2

    @property
    def sites(self) -> range:
        return range(-self.w, self.w + 1)

    def __getitem__(self, x: int) -> int:
        return self.values[x + self.w] if abs(x) <= self.w else 0

    def as_dict(self) -> dict[int, int]:
        return {x: v for x, v in zip(self.sites, self.values) if v}

    def mirror(self) -> "GradientProfile":
        """Gradient of the profile reflected through the walker: ``-eta(-x)``."""
        return GradientProfile(tuple(-v for v in reversed(self.values)))

    def profile(self) -> dict[int, float]:
        """Edge profile (by left endpoint, walker at 0) whose gradient is eta; zero far left."""
        out, acc = {}, 0
        for x, v in zip(self.sites, self.values):
            acc += v
            out[x] = float(acc)
        return out


def _check_window(w: int):
    if w < 1:
        raise ValueError("window half-width must be at least 1")


def shift_right(eta: GradientProfile) -> GradientProfile:
    _check_window(eta.w)
    if eta[-eta.w] != 0:
        raise WindowOverflowError("right shift pushes eta(-w) out of the window")
    v = list(eta.values[1:]) + [0]
    v[eta.w - 1] += 1
    v[eta.w] -= 1
    return GradientProfile(tuple(v))


def shift_left(eta: GradientProfile) -> GradientProfile:
    _check_window(eta.w)
    if eta[eta.w] != 0:
        raise WindowOverflowError("left shift pushes eta(w) out of the window")
    v = [0] + list(eta.values[:-1])
    v[eta.w] += 1
    v[eta.w + 1] -= 1
    return GradientProfile(tuple(v))


def _coeff_vector(table: dict[int, float], w: int, what: str) -> np.ndarray:
    if any(abs(x) > w for x in table):
        raise WindowOverflowError(f"{what} support does not fit in window of half-width {w}")
    out = np.zeros(2 * w + 1)
    for x, v in table.items():
        out[x + w] = v
    return out


def eta_drift(eta: GradientProfile, kernel: InteractionKernel) -> float:
    """``sum_x c(x) eta(x)``."""
    c = _coeff_vector(eta_coeffs(kernel), eta.w, "kernel")
    return float(c @ np.asarray(eta.values, dtype=float))


def _alpha_matrix(kernel: InteractionKernel, w: int, literal_sign: bool = False,
                  require_pd: bool = True) -> np.ndarray:
    if require_pd and not literal_sign and not is_positive_definite(kernel):
        raise NotPositiveDefiniteError(f"kernel {kernel} is not positive definite")
    alpha = eta_coeffs(kernel) if literal_sign else precision(kernel)
    m = 2 * w + 1
    a = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            a[i, j] = alpha.get(j - i, 0.0)
    return a


def gibbs_log_weight(eta: GradientProfile, kernel: InteractionKernel,
                     literal_sign: bool = False, require_pd: bool = True) -> float:
    """Unnormalized ``log pi0(eta)`` with free boundary.

    ``literal_sign=True`` uses ``alpha = +c`` instead (diagnostic only; it
    skips the positive-definiteness check and fails the RN identity).
    ``require_pd=False`` evaluates the finite-window weight for any symmetric
    kernel; it is only a measure in infinite volume when the check passes.
    """
    a = _alpha_matrix(kernel, eta.w, literal_sign, require_pd)
    v = np.asarray(eta.values, dtype=float)
    return float(-0.5 * v @ a @ v)


def rn_identity_residual(eta: GradientProfile, kernel: InteractionKernel,
                         literal_sign: bool = False, require_pd: bool = True) -> float:
    """``|[log pi0(R eta) - log pi0(eta)] - [D(eta) - D(R eta)]|``.

    Both eta and R eta must vanish at the window edges.
    """
    r = shift_right(eta)
    if eta[-eta.w] or eta[eta.w] or r[-r.w] or r[r.w]:
        raise WindowOverflowError("eta and R eta must be strictly inside the window")
    lhs = (gibbs_log_weight(r, kernel, literal_sign, require_pd)
           - gibbs_log_weight(eta, kernel, literal_sign, require_pd))
    rhs = eta_drift(eta, kernel) - eta_drift(r, kernel)
    return abs(lhs - rhs)


def log_waiting_time(eta: GradientProfile, kernel: InteractionKernel) -> float:
    d = eta_drift(eta, kernel)
    return float(np.logaddexp(d, -d))


def waiting_time(eta: GradientProfile, kernel: InteractionKernel) -> float:
    """``tau = e^D + e^-D`` (may be inf).

    This is the total jump rate out of ``eta``; the mean holding time is ``1 / tau``.
    """
    d = eta_drift(eta, kernel)
    with np.errstate(over="ignore"):
        return float(np.exp(d) + np.exp(-d))


def discrete_stationary_logweight(eta: GradientProfile, kernel: InteractionKernel,
                                  literal: bool = False) -> float:
    """Unnormalized log weight of the jump chain's stationary law, ``log pi0 + log tau``.

    ``literal=True`` returns ``log pi0 - log tau`` instead, kept for comparison.
    """
    g = gibbs_log_weight(eta, kernel)
    t = log_waiting_time(eta, kernel)
    return g - t if literal else g + t


# ------------------------------------------------------------ truncated chain

@dataclass
class TruncatedChain:
    """Jump chain restricted to ``[-w, w]`` and ``|eta| <= H``.

    ``right``/``left`` hold destination indices, -1 where the move leaves
    the box; the missing mass is ``leakage``.
    """

    w: int
    H: int
    states: np.ndarray
    drift: np.ndarray
    p: np.ndarray
    right: np.ndarray
    left: np.ndarray
    leakage: np.ndarray

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def index(self, eta: GradientProfile) -> int:
        idx = _encode(np.asarray([eta.values]), self.w, self.H)[0]
        if idx < 0:
            raise KeyError("state outside the box")
        return int(idx)

    def state(self, i: int) -> GradientProfile:
        return GradientProfile(tuple(int(v) for v in self.states[i]))

    def push(self, mu: np.ndarray) -> np.ndarray:
        """``mu P`` with leaked mass dropped."""
        out = np.zeros(self.size)
        ok = self.right >= 0
        np.add.at(out, self.right[ok], (mu * self.p)[ok])
        ok = self.left >= 0
        np.add.at(out, self.left[ok], (mu * (1.0 - self.p))[ok])
        return out

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``P f`` with ``f = 0`` off the box."""
        fr = np.where(self.right >= 0, f[self.right], 0.0)
        fl = np.where(self.left >= 0, f[self.left], 0.0)
        return self.p * fr + (1.0 - self.p) * fl

    def row_sums(self) -> np.ndarray:
        return np.where(self.right >= 0, self.p, 0.0) + np.where(self.left >= 0, 1.0 - self.p, 0.0)


def _site_values(x: int, H: int) -> np.ndarray:
    start = -H if (H + (x == 0)) % 2 == 0 else -H + 1
    return np.arange(start, H + 1, 2)


def state_count(w: int, H: int) -> int:
    return math.prod(len(_site_values(x, H)) for x in range(-w, w + 1))


def enumerate_states(w: int, H: int) -> np.ndarray:
    """All Omega states in the box, in lexicographic order over ``(x, eta(x))``."""
    grids = [_site_values(x, H) for x in range(-w, w + 1)]
    return np.array(list(itertools.product(*grids)), dtype=np.int64).reshape(-1, 2 * w + 1)


def _encode(states: np.ndarray, w: int, H: int) -> np.ndarray:
    idx = np.zeros(states.shape[0], dtype=np.int64)
    inside = np.ones(states.shape[0], dtype=bool)
    for col, x in enumerate(range(-w, w + 1)):
        vals = _site_values(x, H)
        v = states[:, col]
        inside &= (v >= vals[0]) & (v <= vals[-1])
        idx = idx * len(vals) + (v - vals[0]) // 2
    return np.where(inside, idx, -1)


def _shift_arrays(states: np.ndarray, w: int):
    r = np.zeros_like(states)
    r[:, :-1] = states[:, 1:]
    r[:, w - 1] += 1
    r[:, w] -= 1
    lost_r = states[:, 0] != 0
    l = np.zeros_like(states)
    l[:, 1:] = states[:, :-1]
    l[:, w] += 1
    l[:, w + 1] -= 1
    lost_l = states[:, -1] != 0
    return r, lost_r, l, lost_l


def build_chain(kernel: InteractionKernel, w: int, H: int) -> TruncatedChain:
    if w > MAX_WINDOW or H > MAX_HEIGHT or state_count(w, H) > MAX_STATES:
        raise ResourceLimitError(
            f"box w={w}, H={H} has {state_count(w, H)} states; limits are "
            f"w <= {MAX_WINDOW}, H <= {MAX_HEIGHT}, {MAX_STATES} states")
    _check_window(w)
    states = enumerate_states(w, H)
    c = _coeff_vector(eta_coeffs(kernel), w, "kernel")
    drift = states @ c
    p = np.array([engine.jump_probability(d) for d in drift])
    r, lost_r, l, lost_l = _shift_arrays(states, w)
    right = np.where(lost_r, -1, _encode(r, w, H))
    left = np.where(lost_l, -1, _encode(l, w, H))
    leak = np.where(right < 0, p, 0.0) + np.where(left < 0, 1.0 - p, 0.0)
    return TruncatedChain(w, H, states, drift, p, right, left, leak)


def log_weights(chain: TruncatedChain, kernel: InteractionKernel, which: str = "discrete",
                require_pd: bool = True) -> np.ndarray:
    """Unnormalized log weights over the box: ``"gibbs"`` (pi0), ``"discrete"`` (pi0 tau) or
    ``"literal"`` (pi0 / tau)."""
    a = _alpha_matrix(kernel, chain.w, require_pd=require_pd)
    s = chain.states.astype(float)
    g = -0.5 * np.einsum("ni,ij,nj->n", s, a, s)
    t = np.logaddexp(chain.drift, -chain.drift)
    return {"gibbs": g, "discrete": g + t, "literal": g - t}[which]


def _normalize(logw: np.ndarray) -> np.ndarray:
    p = np.exp(logw - logw.max())
    return p / p.sum()


def interior_mask(chain: TruncatedChain) -> np.ndarray:
    """States whose two possible predecessors both lie in the box."""
    s, w = chain.states, chain.w
    # predecessor by a right jump: eta'(y) = eta(y-1) - d_0(y) + d_1(y)
    pr = np.zeros_like(s)
    pr[:, 1:] = s[:, :-1]
    pr[:, w] -= 1
    pr[:, w + 1] += 1
    # predecessor by a left jump: eta'(y) = eta(y+1) - d_{-1}(y) + d_0(y)
    pl = np.zeros_like(s)
    pl[:, :-1] = s[:, 1:]
    pl[:, w - 1] -= 1
    pl[:, w] += 1
    ok_r = (s[:, -1] == 0) & (_encode(pr, w, chain.H) >= 0)
    ok_l = (s[:, 0] == 0) & (_encode(pl, w, chain.H) >= 0)
    return ok_r & ok_l


def rn_residuals(chain: TruncatedChain, kernel: InteractionKernel, literal_sign: bool = False,
                 require_pd: bool = True) -> np.ndarray:
    """RN identity residual on every box state with eta and R eta inside the window."""
    w = chain.w
    s = chain.states
    r, lost, _, _ = _shift_arrays(s, w)
    ok = ~lost & (s[:, -1] == 0) & (r[:, 0] == 0) & (r[:, -1] == 0)
    a = _alpha_matrix(kernel, w, literal_sign, require_pd)
    c = _coeff_vector(eta_coeffs(kernel), w, "kernel")
    sf, rf = s[ok].astype(float), r[ok].astype(float)
    g = lambda v: -0.5 * np.einsum("ni,ij,nj->n", v, a, v)
    return np.abs((g(rf) - g(sf)) - (sf @ c - rf @ c))


@dataclass(frozen=True)
class StationarityReport:
    kernel: str
    w: int
    H: int
    states: int
    interior_states: int
    rn_checked: int
    rn_residual: float
    interior_residual: float
    leakage: float
    literal_residual: float
    gibbs_residual: float
    composition_exact: bool
    parity_preserved: bool
    convention: str = SIGN_CONVENTION

    @property
    def passed(self) -> bool:
        return (self.rn_residual < 1e-9 and self.interior_residual <= 5 * self.leakage
                and self.composition_exact and self.parity_preserved)

    def text(self) -> str:
        lines = [
            "# stationarity report",
            f"kernel: {self.kernel}",
            f"window_half_width: {self.w}",
            f"height_cutoff: {self.H}",
            f"states: {self.states}",
            f"interior_states: {self.interior_states}",
            f"rn_states_checked: {self.rn_checked}",
            f"rn_identity_max_residual: {self.rn_residual:.3e}",
            f"interior_l1_residual_pi0_tau: {self.interior_residual:.3e}",
            f"leakage: {self.leakage:.3e}",
            f"interior_l1_residual_pi0_over_tau: {self.literal_residual:.3e}",
            f"interior_l1_residual_pi0: {self.gibbs_residual:.3e}",
            f"shift_composition_exact: {self.composition_exact}",
            f"parity_preserved: {self.parity_preserved}",
            f"sign_convention: {self.convention}",
            f"result: {'PASS' if self.passed else 'FAIL'}",
        ]
        return "\n".join(lines) + "\n"


def check_shift_laws(chain: TruncatedChain) -> tuple[bool, bool]:
    """(composition laws exact, parity preserved) over every box state, windows padded by 2."""
    w = chain.w
    pad = np.zeros((chain.size, 2 * (w + 2) + 1), dtype=np.int64)
    pad[:, 2:-2] = chain.states
    r, lr, l, ll = _shift_arrays(pad, w + 2)
    lr_, _, _, _ = _shift_arrays(l, w + 2)
    _, _, rl, _ = _shift_arrays(r, w + 2)
    c = w + 2
    expect_lr = pad.copy()
    expect_lr[:, c] += 2
    expect_lr[:, c + 1] -= 2
    expect_rl = pad.copy()
    expect_rl[:, c - 1] += 2
    expect_rl[:, c] -= 2
    composition = (not lr.any() and not ll.any()
                   and np.array_equal(rl, expect_lr) and np.array_equal(lr_, expect_rl))
    odd0 = np.zeros(pad.shape[1], dtype=np.int64)
    odd0[c] = 1
    parity = bool(np.all((r + odd0) % 2 == 0) and np.all((l + odd0) % 2 == 0))
    return bool(composition), parity


def _interior_l1(chain, kernel, which, interior, require_pd):
    pi = _normalize(log_weights(chain, kernel, which, require_pd))
    return float(np.abs(chain.push(pi) - pi)[interior].sum()), pi


def exact_stationarity_check(kernel: InteractionKernel, w: int = 2, H: int = 3,
                             require_pd: bool = True) -> StationarityReport:
    """Exact finite-box check of the RN identity and of the discrete stationarity of ``pi0 tau``.

    The identities checked are algebraic in a finite window, so
    ``require_pd=False`` runs them for indefinite symmetric kernels too.
    """
    if not kernel.is_symmetric:
        raise NotPositiveDefiniteError(f"kernel {kernel} is not left-right symmetric")
    if require_pd and not is_positive_definite(kernel):
        raise NotPositiveDefiniteError(f"kernel {kernel} is not positive definite")
    chain = build_chain(kernel, w, H)
    interior = interior_mask(chain)
    rn = rn_residuals(chain, kernel, require_pd=require_pd)
    res, pi = _interior_l1(chain, kernel, "discrete", interior, require_pd)
    lit, _ = _interior_l1(chain, kernel, "literal", interior, require_pd)
    gib, _ = _interior_l1(chain, kernel, "gibbs", interior, require_pd)
    comp, par = check_shift_laws(chain)
    return StationarityReport(
        kernel=str(kernel), w=w, H=H, states=chain.size, interior_states=int(interior.sum()),
        rn_checked=int(rn.shape[0]), rn_residual=float(rn.max()) if rn.size else 0.0,
        interior_residual=res, leakage=float(pi @ chain.leakage),
        literal_residual=lit, gibbs_residual=gib,
        composition_exact=comp, parity_preserved=par,
    )


def dirichlet_form(chain: TruncatedChain, kernel: InteractionKernel, f: np.ndarray,
                   which: str = "gibbs") -> float:
    """``sum_eta mu(eta) f(eta) (I - P) f(eta)`` over the box, ``mu`` normalized, f = 0 off the box."""
    mu = _normalize(log_weights(chain, kernel, which))
    return float(mu @ (f * (f - chain.apply(f))))


def stationary_leakage(chain: TruncatedChain, kernel: InteractionKernel, which: str = "gibbs") -> float:
    mu = _normalize(log_weights(chain, kernel, which))
    return float(mu @ chain.leakage)


# ------------------------------------------------- third-derivative gradients

@dataclass(frozen=True)
class MomentRow:
    edge2: int
    mean: float
    stderr: float
    variance: float
    excess_kurtosis: float
    lag1_corr: float


@dataclass(frozen=True)
class MomentTable:
    kernel: str
    steps: int
    burn_in: int
    seed: int
    rows: list
    eta_mean: dict


def _on_boundary_line(kernel: InteractionKernel) -> bool:
    if not kernel.is_symmetric or not set(kernel.coeffs) <= {-3, -1, 1, 3}:
        return False
    a, b = kernel.weight(-3), kernel.weight(-1)
    return b > 0 and a == -b / 3


def gradient_chain_moments(kernel: InteractionKernel | None = None, n: int = 10**6,
                           seed: int = 0, burn_in: int = 10**5, edges=(-5, -3, -1, 1, 3, 5),
                           batches: int = 50, flip_draws: bool = False) -> MomentTable:
    """Moments of ``grad eta(e) = eta(e+1/2) - eta(e-1/2)`` seen from the walker.

    Samples after ``burn_in`` steps; standard errors from ``batches`` batch means.
    """
    kernel = kernel or new_symmetric(-1, 3)
    if not _on_boundary_line(kernel):
        raise ValueError(f"kernel {kernel} is not on the a = -b/3 line")
    summary = engine.run(engine.RunConfig(kernel, burn_in + n, seed=seed, record_trajectory=True,
                                          flip_draws=flip_draws))
    traj = summary.trajectory
    lo, hi = int(traj.min()) - 8, int(traj.max()) + 8
    edges = tuple(edges)
    # grad eta at offset e: L(X+e+1) - 2 L(X+e) + L(X+e-1) on edges by left endpoint X + (2e-1)//2
    offs = np.array([(o - 1) // 2 for o in edges], dtype=np.int64)
    sites = np.arange(-3, 4, dtype=np.int64)
    grad, eta = _core.gradient_samples(traj, lo, hi - lo + 1, burn_in, offs, sites)
    rows = []
    g = grad.astype(float)
    for k, o in enumerate(edges):
        col = g[:, k]
        mean = col.mean()
        var = col.var()
        kurt = float(((col - mean) ** 4).mean() / var**2 - 3.0) if var > 0 else math.nan
        bm = np.array([b.mean() for b in np.array_split(col, batches)])
        se = float(bm.std(ddof=1) / math.sqrt(batches))
        if k + 1 < len(edges):
            nxt = g[:, k + 1]
            corr = float(np.corrcoef(col, nxt)[0, 1]) if var > 0 and nxt.var() > 0 else math.nan
        else:
            corr = math.nan
        rows.append(MomentRow(o, float(mean), se, float(var), kurt, corr))
    eta_mean = {int(x): float(eta[:, i].mean()) for i, x in enumerate(sites)}
    return MomentTable(str(kernel), n, burn_in, seed, rows, eta_mean)
