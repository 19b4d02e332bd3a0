"""Compiled inner loops.  Everything here works on plain arrays."""

import math

import numpy as np
from numba import njit, types
from numba.typed import Dict

SATURATION = 400.0

# indices into the packed integer state vector
POS, STEP, RMIN, RMAX, MAXLAG, CKPT = range(6)
NSTATE = 6


@njit(cache=True, nogil=True)
def jump_right(d, u):
    """Decide a right jump for drift ``d`` and uniform ``u`` on the 2**-53 grid.

    Negative drifts compare ``1 - u`` against ``F(-d)`` so that the decision
    for ``(-d, 1 - u)`` is the mirror of the decision for ``(d, u)``.
    """
    if d > SATURATION:
        return True
    if d < -SATURATION:
        return False
    if d >= 0.0:
        return u < 1.0 / (1.0 + math.exp(-2.0 * d))
    return (1.0 - u) > 1.0 / (1.0 + math.exp(2.0 * d))


@njit(cache=True, nogil=True)
def drift_at(counts, init, i, w, p, m):
    d = 0.0
    for t in range(w.shape[0]):
        a = i + p[t]
        b = i + m[t]
        d += w[t] * (float(counts[a] - counts[b]) + (init[a] - init[b]))
    return d


@njit(cache=True, nogil=True)
def advance(counts, init, last_visit, origin, st, draws, start, flip,
            w, p, m, margin, ckpt_t, ck_n, ck_x, ck_min, ck_max, ck_lag, traj):
    """Step until the draws run out or the walker nears the array boundary.

    Returns the index of the first unused draw.
    """
    pos = st[POS]
    n = st[STEP]
    rmin = st[RMIN]
    rmax = st[RMAX]
    maxlag = st[MAXLAG]
    ci = st[CKPT]
    size = counts.shape[0]
    record = traj.shape[0] > 0
    nck = ckpt_t.shape[0]
    t = start
    while t < draws.shape[0]:
        i = pos - origin
        if i < margin or i >= size - margin:
            break
        u = draws[t]
        if flip:
            u = 1.0 - u
        t += 1
        d = drift_at(counts, init, i, w, p, m)
        if jump_right(d, u):
            counts[i] += 1
            pos += 1
            if pos > rmax:
                rmax = pos
        else:
            counts[i - 1] += 1
            pos -= 1
            if pos < rmin:
                rmin = pos
        n += 1
        lag = rmax - pos
        if lag > maxlag:
            maxlag = lag
        last_visit[pos - origin] = n
        if record:
            traj[n] = pos
        if ci < nck and ckpt_t[ci] == n:
            ck_n[ci] = n
            ck_x[ci] = pos
            ck_min[ci] = rmin
            ck_max[ci] = rmax
            ck_lag[ci] = maxlag
            ci += 1
    st[POS] = pos
    st[STEP] = n
    st[RMIN] = rmin
    st[RMAX] = rmax
    st[MAXLAG] = maxlag
    st[CKPT] = ci
    return t


@njit(cache=True, nogil=True)
def replay_counts(traj, origin, size):
    """Edge counts (indexed by left endpoint minus ``origin``) after a trajectory."""
    counts = np.zeros(size, dtype=np.int64)
    for n in range(1, traj.shape[0]):
        counts[min(traj[n], traj[n - 1]) - origin] += 1
    return counts


@njit(cache=True, nogil=True)
def gradient_samples(traj, origin, size, burn, offs, sites):
    """Replay a trajectory; after ``burn`` steps record second differences of the
    edge counts at ``X + offs`` and gradients at ``X + sites`` every step."""
    counts = np.zeros(size, dtype=np.int64)
    n = traj.shape[0] - 1
    grad = np.empty((n - burn, offs.shape[0]), dtype=np.int32)
    eta = np.empty((n - burn, sites.shape[0]), dtype=np.int32)
    for t in range(1, n + 1):
        counts[min(traj[t], traj[t - 1]) - origin] += 1
        if t > burn:
            i = traj[t] - origin
            for k in range(offs.shape[0]):
                q = i + offs[k]
                grad[t - burn - 1, k] = counts[q + 1] - 2 * counts[q] + counts[q - 1]
            for k in range(sites.shape[0]):
                q = i + sites[k]
                eta[t - burn - 1, k] = counts[q] - counts[q - 1]
    return grad, eta


# ----------------------------------------------------------------- xi family

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True, nogil=True)
def splitmix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def key_uniform(seed, x, twoj, k):
    """Uniform on the 2**-53 grid from a chained splitmix64 hash of the key."""
    h = splitmix64(np.uint64(seed))
    h = splitmix64(h ^ np.uint64(x))
    h = splitmix64(h ^ np.uint64(twoj))
    h = splitmix64(h ^ np.uint64(k))
    return float(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def xi_value(seed, x, twoj, k):
    # P(+1) = F(-j), the same decision rule as a walker with drift -j
    return 1 if jump_right(-0.5 * twoj, key_uniform(seed, x, twoj, k)) else -1


_KEY = types.UniTuple(types.int64, 2)


@njit(cache=True, nogil=True)
def coupled_walk(seed, n, margin_init, w, p, m, init_counts, origin):
    """Second-derivative walk driven by the xi family.

    Uses the general drift form over integer counts: ``Delta = -2 * drift``
    where ``w, p, m`` describe the drift.  Returns positions, the Delta seen
    at each step and the visit counter k for the key (x, Delta).
    """
    size = init_counts.shape[0]
    counts = init_counts.copy()
    zero = np.zeros(size)
    traj = np.empty(n + 1, dtype=np.int64)
    deltas = np.empty(n, dtype=np.int64)
    ks = np.empty(n, dtype=np.int64)
    seen = Dict.empty(key_type=_KEY, value_type=types.int64)
    pos = 0
    traj[0] = 0
    for s in range(n):
        i = pos - origin
        if i < margin_init or i >= size - margin_init:
            return traj[: s + 1], deltas[:s], ks[:s], False
        dlt = -2.0 * drift_at(counts, zero, i, w, p, m)
        twoj = int(round(dlt))
        key = (pos, twoj)
        k = seen.get(key, 0) + 1
        seen[key] = k
        deltas[s] = twoj
        ks[s] = k
        if xi_value(seed, pos, twoj, k) == 1:
            counts[i] += 1
            pos += 1
        else:
            counts[i - 1] += 1
            pos -= 1
        traj[s + 1] = pos
    return traj, deltas, ks, True


@njit(cache=True, nogil=True)
def sigma_scan(traj, origin, size):
    """First time sigma_x (x >= 1) the walker sits at x - 1 after more than
    floor(x / 8) crossings of edge {x-1, x}; -1 where never.

    Also returns the crossing counts of edges x-3, x-2, x-1 at sigma_x.
    """
    counts = np.zeros(size, dtype=np.int64)
    xmax = traj.max() + 1
    nx = max(xmax + 1, 1)
    sigma = np.full(nx, -1, dtype=np.int64)
    at = np.zeros((nx, 3), dtype=np.int64)
    for t in range(traj.shape[0]):
        if t > 0:
            counts[min(traj[t], traj[t - 1]) - origin] += 1
        x = traj[t] + 1
        if x >= 1 and sigma[x] < 0:
            i = traj[t] - origin
            if counts[i] > x // 8:
                sigma[x] = t
                at[x, 0] = counts[i - 2]
                at[x, 1] = counts[i - 1]
                at[x, 2] = counts[i]
    return sigma, at
