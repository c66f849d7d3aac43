"""Monte Carlo moments along killed random walk paths.

The walk jumps at rate 2 d kappa to a uniform unit neighbor and is
killed on leaving the box or touching a hard-core site; each surviving
path carries weight exp(integral of v along the path).  Averaging those
weights reproduces the lattice moment solved by the direct PDE route,
which is exactly what the agreement tests check.
"""

import math
from dataclasses import dataclass

import numpy as np

from .analytics import rate_I
from .seeding import derive_seed, generator
from .solver import BoxDomain

_CHUNK = 8192


@dataclass(frozen=True)
class FKEstimate:
    log_value: float
    stderr_log: float
    n_paths: int
    n_killed: int
    t: float
    kappa: float

    @property
    def all_killed(self):
        return self.n_killed == self.n_paths


def _kill_bounds(env, box):
    """Center and radius of the killing box; None means the whole window."""
    if box is None:
        return np.zeros(env.dim, dtype=np.int64), env.radius
    if not isinstance(box, BoxDomain):
        raise TypeError("box must be a BoxDomain or None")
    return np.asarray(box.center, dtype=np.int64), box.radius


def _chunk_log_weights(env, x, kappa, t, n, rng, center, radius):
    """Log path weights for one chunk; killed paths come back as -inf."""
    d = env.dim
    rate = 2.0 * d * kappa
    v = env.v_plus - env.v_minus
    hard = env.hardcore
    pos = np.tile(x, (n, 1))
    logw = np.zeros(n)
    t_now = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    if hard[env.flat_index(x)]:
        return np.full(n, -math.inf)
    while True:
        open_ = t_now < t
        if not open_.any():
            break
        dt = rng.exponential(1.0 / rate, size=n)
        dirs = rng.integers(0, 2 * d, size=n)
        act = open_ & alive
        if not act.any():
            break
        dwell = np.minimum(dt[act], t - t_now[act])
        logw[act] += v[env.flat_index(pos[act])] * dwell
        t_now[open_] += dt[open_]
        jump = act & (t_now < t)
        if jump.any():
            axes = (dirs[jump] >> 1).astype(np.int64)
            signs = 1 - 2 * (dirs[jump] & 1)
            moved = pos[jump]
            moved[np.arange(len(axes)), axes] += signs
            pos[jump] = moved
            out = np.abs(moved - center).max(axis=1) > radius
            dead = out.copy()
            inside = ~out
            if inside.any():
                dead[inside] = hard[env.flat_index(moved[inside])]
            idx = np.nonzero(jump)[0][dead]
            alive[idx] = False
            logw[idx] = -math.inf
    return logw


def fk_path_log_weights(env, x, kappa, t, n_paths, seed, box=None):
    """Per-path log weights, -inf for killed paths, in a fixed path order.

    The random stream consumed per path does not depend on the box, so
    runs with the same seed and different boxes follow identical walk
    trajectories.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if t < 0 or kappa < 0:
        raise ValueError("t and kappa must be >= 0")
    center, radius = _kill_bounds(env, box)
    if np.abs(x - center).max() > radius:
        raise ValueError("start point outside the killing box")
    if kappa == 0.0 or t == 0.0:
        if env.hardcore[env.flat_index(x)]:
            return np.full(n_paths, -math.inf)
        val = float((env.v_plus - env.v_minus)[env.flat_index(x)]) * t
        return np.full(n_paths, val)
    out = np.empty(n_paths)
    done = 0
    ci = 0
    while done < n_paths:
        n = min(_CHUNK, n_paths - done)
        rng = generator(derive_seed(seed, "fk", ci))
        out[done : done + n] = _chunk_log_weights(env, x, kappa, t, n, rng, center, radius)
        done += n
        ci += 1
    return out


def fk_estimate(env, x, kappa, t, n_paths, seed, box=None):
    """Monte Carlo estimate of m(x, t) from killed weighted paths.

    Averaging uses a max shift so huge weights never overflow; the
    standard error is reported on the log scale (delta method).  If
    every path is killed the log value is -inf with a zero error bar.
    """
    logw = fk_path_log_weights(env, x, kappa, t, n_paths, seed, box=box)
    n_killed = int(np.isinf(logw).sum())
    if n_killed == n_paths:
        return FKEstimate(-math.inf, 0.0, n_paths, n_killed, float(t), float(kappa))
    peak = float(logw[~np.isinf(logw)].max())
    w = np.exp(logw - peak)
    mean = float(w.mean())
    if n_paths > 1:
        sd = float(w.std(ddof=1))
        stderr = sd / (mean * math.sqrt(n_paths))
    else:
        stderr = math.inf
    return FKEstimate(peak + math.log(mean), stderr, n_paths, n_killed, float(t), float(kappa))


def wilson_interval(k, n, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class ExitTailRow:
    radius: int
    t: float
    p_hat: float
    upper: float
    bound: float

    @property
    def ok(self):
        return self.upper <= self.bound


def exit_tail_mc(kappa, n_paths, seed, radii=(1, 2, 3, 4, 5), times=(0.5, 1.0, 2.0, 3.0, 4.0)):
    """Exceedance of the walk range versus the Chernoff exit bound.

    Simulates the 1-d rate-2*kappa walk and compares the Wilson upper
    confidence limit of P(max |X_s| >= R) against
    min(1, 4 exp(-2 kappa t I(R / (2 kappa t)))) on the radius/time grid.
    """
    rows = []
    for ti, t in enumerate(times):
        rng = generator(derive_seed(seed, "exit", ti))
        rate = 2.0 * kappa * t
        counts = rng.poisson(rate, size=n_paths)
        kmax = int(counts.max(initial=0))
        runmax = np.zeros(n_paths)
        if kmax > 0:
            steps = rng.integers(0, 2, size=(n_paths, kmax)) * 2 - 1
            mask = np.arange(kmax)[None, :] < counts[:, None]
            walk = np.cumsum(np.where(mask, steps, 0), axis=1)
            runmax = np.abs(walk).max(axis=1)
        for R in radii:
            k = int((runmax >= R).sum())
            _, hi = wilson_interval(k, n_paths)
            y = R / (2.0 * kappa * t)
            bound = min(1.0, 4.0 * math.exp(-2.0 * kappa * t * float(rate_I(y))))
            rows.append(ExitTailRow(int(R), float(t), k / n_paths, hi, bound))
    return rows
