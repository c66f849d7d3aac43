"""Across-environment moment statistics and dependence diagnostics.

Everything here averages over independent environment replicas: the
annealed growth estimate, the intermittency gap at tilt theta, spatial
correlation profiles, and a block partition scheme used to bound how
much of a box sits near block boundaries.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .environments import sample_environment
from .seeding import derive_seed, generator
from .solver import log_center_moment_windows_1d, required_radius, solve_untruncated

_BOOTSTRAP = 1000
_CI = 99.0


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class H1Estimate:
    """log of the replica-averaged moment, with a percentile bootstrap CI."""

    value: float
    ci_lo: float
    ci_hi: float
    n_replica: int
    t: float
    kappa: float


@dataclass(frozen=True)
class FThetaEstimate:
    """Intermittency gap (log E m^(1+theta) - (1+theta) log E m)/theta."""

    value: float
    ci_lo: float
    ci_hi: float
    theta: float
    n_replica: int
    t: float
    kappa: float


def _replica_log_moments(family, kappa, t, n_replica, seed, dim=1, tol=1e-6):
    """log m(0, t) for independent environment replicas; -inf if killed.

    One dimension without a hard core runs as a single batched
    eigendecomposition over stacked tridiagonal windows; other cases
    fall back to per-replica solves.
    """
    if kappa == 0.0:
        out = np.empty(n_replica)
        for i in range(n_replica):
            env = sample_environment(family, dim, 0, derive_seed(seed, "env", i))
            if env.hardcore[0]:
                out[i] = -math.inf
            else:
                out[i] = (env.v_plus[0] - env.v_minus[0]) * t
        return out
    R = required_radius(kappa, t, tol, dim)
    if dim == 1 and not family.has_hardcore_atom:
        width = 2 * R + 1
        vs = np.empty((n_replica, width))
        for i in range(n_replica):
            env = sample_environment(family, 1, R, derive_seed(seed, "env", i))
            vs[i] = env.v_plus - env.v_minus
        out = np.empty(n_replica)
        chunk = max(1, 2**24 // (width * width))
        for s in range(0, n_replica, chunk):
            e = min(s + chunk, n_replica)
            out[s:e] = log_center_moment_windows_1d(vs[s:e], kappa, t)
        return out
    out = np.empty(n_replica)
    origin = (0,) * dim
    for i in range(n_replica):
        env = sample_environment(family, dim, R, derive_seed(seed, "env", i))
        man, off, _ = solve_untruncated(env, origin, kappa, t, tol=tol)
        out[i] = math.log(man) + off if man > 0 else -math.inf
    return out


def _log_mean(logs):
    peak = float(np.max(logs))
    if not math.isfinite(peak):
        return -math.inf
    return peak + math.log(float(np.mean(np.exp(logs - peak))))


def _bootstrap_indices(n, seed):
    rng = generator(derive_seed(seed, "bootstrap", 0))
    return rng.integers(0, n, size=(_BOOTSTRAP, n))


def estimate_H1(family, kappa, t, n_replica, seed, dim=1, tol=1e-6):
    """Annealed growth estimate log <m(0, t)> over environment replicas.

    The confidence interval is a 99 percent percentile bootstrap taken in
    log space, so it stays meaningful when a few replicas dominate the
    mean.
    """
    if n_replica < 50:
        raise ValueError("need at least 50 replicas")
    logs = _replica_log_moments(family, kappa, t, n_replica, seed, dim=dim, tol=tol)
    value = _log_mean(logs)
    peak = float(np.max(logs))
    w = np.exp(logs - peak) if math.isfinite(peak) else np.zeros_like(logs)
    idx = _bootstrap_indices(n_replica, seed)
    means = w[idx].mean(axis=1)
    with np.errstate(divide="ignore"):
        boot = np.log(means) + peak
    half = (100.0 - _CI) / 2.0
    lo, hi = np.percentile(boot, [half, 100.0 - half])
    return H1Estimate(value, float(lo), float(hi), n_replica, float(t), float(kappa))


def estimate_F_theta(family, theta, kappa, t, n_replica, seed, dim=1, tol=1e-6):
    """Intermittency gap estimate from one common set of replicas.

    Both empirical means share the same replicas, and each bootstrap
    resample recomputes the pair jointly, so the strong positive
    coupling between them tightens the interval instead of widening it.
    """
    if theta <= -1 or theta == 0:
        raise ValueError("theta must be > -1 and nonzero")
    if n_replica < 50:
        raise ValueError("need at least 50 replicas")
    logs = _replica_log_moments(family, kappa, t, n_replica, seed, dim=dim, tol=tol)
    peak = float(np.max(logs))
    if not math.isfinite(peak):
        raise ValueError("all replicas were killed")
    w = np.exp(logs - peak)
    wq = np.exp((1.0 + theta) * (logs - peak))

    def gap(mean_w, mean_wq):
        log_m1 = np.log(mean_w) + peak
        log_mq = np.log(mean_wq) + (1.0 + theta) * peak
        return (log_mq - (1.0 + theta) * log_m1) / theta

    value = float(gap(w.mean(), wq.mean()))
    idx = _bootstrap_indices(n_replica, seed)
    with np.errstate(divide="ignore"):
        boot = gap(w[idx].mean(axis=1), wq[idx].mean(axis=1))
    half = (100.0 - _CI) / 2.0
    lo, hi = np.percentile(boot, [half, 100.0 - half])
    return FThetaEstimate(value, float(lo), float(hi), float(theta), n_replica, float(t), float(kappa))


@dataclass(frozen=True)
class CorrelationProfile:
    lags: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    n_replica: int
    dependence_radius: int


def correlation_profile(family, kappa, t, lags, n_replica, seed, tol=1e-4):
    """Replica correlation of m(0, t) with m(y, t) at the given 1-d lags.

    m(x, t) only reads the environment within the truncation radius of
    x, so lags beyond twice that radius compare functions of disjoint
    site sets and the true correlation is exactly zero.
    """
    lags = np.asarray(lags, dtype=np.int64)
    if np.any(lags < 0):
        raise ValueError("lags must be >= 0")
    R = required_radius(kappa, t, tol, 1)
    span = int(lags.max(initial=0)) + R
    width = 2 * R + 1
    vals = np.empty((n_replica, len(lags) + 1))
    for i in range(n_replica):
        env = sample_environment(family, 1, span, derive_seed(seed, "env", i))
        v = np.where(env.hardcore, 0.0, env.v_plus - env.v_minus)
        sites = np.concatenate([[0], lags])
        if kappa == 0.0:
            idx = sites + span
            vals[i] = np.where(env.hardcore[idx], -math.inf, v[idx] * t)
        else:
            if env.hardcore.any():
                for j, y in enumerate(sites):
                    man, off, _ = solve_untruncated(env, (int(y),), kappa, t, tol=tol)
                    vals[i, j] = math.log(man) + off if man > 0 else -math.inf
            else:
                rows = np.stack([v[y + span - R : y + span + R + 1] for y in sites])
                vals[i] = log_center_moment_windows_1d(rows, kappa, t)
    peak = vals[np.isfinite(vals)].max()
    m = np.exp(vals - peak)
    base = m[:, 0]
    rs = np.empty(len(lags))
    for j in range(len(lags)):
        other = m[:, j + 1]
        sa = base.std()
        sb = other.std()
        if sa == 0.0 or sb == 0.0:
            rs[j] = 0.0
        else:
            rs[j] = float(np.corrcoef(base, other)[0, 1])
    return CorrelationProfile(lags=lags, r=rs, n_replica=n_replica, dependence_radius=R)


@dataclass(frozen=True)
class PartitionPlan:
    """Partition of the 1-d index range [-L, L] into q contiguous blocks.

    The first qbar blocks have length Lp + 1 and the rest length Lp, so
    the lengths add up to 2L + 1 exactly.
    """

    L: int
    Lp: int
    q: int
    qbar: int
    sizes: tuple
    starts: tuple


def build_partitions(L, Lp):
    L = int(L)
    Lp = int(Lp)
    if L < 0 or Lp < 1:
        raise PartitionError("need L >= 0 and Lp >= 1")
    n = 2 * L + 1
    q = -(-n // (Lp + 1))
    qbar = n - q * Lp
    if qbar < 0:
        raise PartitionError(f"no block count fits: 2L+1 = {n} < q*Lp = {q * Lp}")
    sizes = tuple([Lp + 1] * qbar + [Lp] * (q - qbar))
    starts = tuple(-L + int(s) for s in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    return PartitionPlan(L=L, Lp=Lp, q=q, qbar=qbar, sizes=sizes, starts=starts)


def strip_fraction(plan, r, dim=1):
    """Fraction of the box outside the shrunken main blocks.

    Every block keeps a centered core of side Lp - 2r (empty if r is too
    large); the rest of the box is the boundary strip.
    """
    core = max(0, plan.Lp - 2 * r)
    n = 2 * plan.L + 1
    return 1.0 - (plan.q**dim * core**dim) / (n**dim)


def strip_fraction_bound(Lp, r, dim=1):
    """Upper bound ((Lp+1)^d - (Lp-2r)^d) / Lp^d for the strip fraction."""
    core = max(0, Lp - 2 * r)
    return ((Lp + 1) ** dim - core**dim) / (Lp**dim)


@dataclass(frozen=True)
class BlockVarianceReport:
    var_direct: float
    var_reconstructed: float
    ratio: float
    dependence_radius: int
    n_replica: int


def block_variance(family, kappa, t, L, n_replica, seed, tol=1e-4):
    """Variance of the box sum versus its covariance reconstruction.

    The direct route takes the across-replica variance of sum over
    |x| <= L of m(x, t).  The reconstruction averages the lag covariance
    c(y) over positions (symmetrized in the sign of y), keeps only lags
    within twice the truncation radius where dependence can live, and
    sums c(y) times the number of site pairs at lag y.  The ratio of the
    two sits near 1 whenever L dominates the dependence radius.
    """
    R = required_radius(kappa, t, tol, 1)
    n_sites = 2 * L + 1
    if kappa == 0.0:
        R = 0
    logs = np.empty((n_replica, n_sites))
    width = 2 * R + 1
    for i in range(n_replica):
        env = sample_environment(family, 1, L + R, derive_seed(seed, "env", i))
        if env.hardcore.any():
            raise ValueError("block variance path expects no hard cores")
        v = env.v_plus - env.v_minus
        if kappa == 0.0:
            logs[i] = v[R : R + n_sites] * t if R else v * t
        else:
            windows = np.lib.stride_tricks.sliding_window_view(v, width)
            chunk = max(1, 2**24 // (width * width))
            for s in range(0, n_sites, chunk):
                e = min(s + chunk, n_sites)
                logs[i, s:e] = log_center_moment_windows_1d(windows[s:e], kappa, t)
    peak = float(logs.max())
    m = np.exp(logs - peak)
    totals = m.sum(axis=1)
    var_direct = float(totals.var(ddof=1))
    centered = m - m.mean(axis=0, keepdims=True)
    max_lag = min(2 * R, n_sites - 1)
    var_recon = 0.0
    for y in range(0, max_lag + 1):
        prod = centered[:, : n_sites - y] * centered[:, y:]
        c_y = float(prod.sum()) / ((n_replica - 1) * (n_sites - y))
        weight = n_sites - y
        var_recon += (1.0 if y == 0 else 2.0) * c_y * weight
    ratio = var_direct / var_recon if var_recon > 0 else math.nan
    return BlockVarianceReport(
        var_direct=var_direct,
        var_reconstructed=var_recon,
        ratio=ratio,
        dependence_radius=R,
        n_replica=n_replica,
    )
