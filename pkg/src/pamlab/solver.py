"""Lattice moment solver for du/dt = kappa*Delta*u + v*u with Dirichlet kill.

The discrete Laplacian is Delta f(x) = sum over unit neighbors e of
f(x+e) - 2d f(x); sites outside the active set (outside the box, or hard
core) carry the value 0.  Solutions grow like e^{max(v) t}, so fields are
stored as a mantissa array plus one shared additive log offset.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .analytics import rate_I
from .environments import effective_potential

DENSE_LIMIT = 4000


class SolverError(RuntimeError):
    pass


class StiffnessError(SolverError):
    """Explicit integrator ran out of step budget.

    Carries the largest |v| on the active set, the usual culprit.
    """

    def __init__(self, message, max_abs_v=None):
        super().__init__(message)
        self.max_abs_v = max_abs_v


@dataclass(frozen=True)
class BoxDomain:
    """A centered box inside a sampled window, minus hard-core sites."""

    env: object
    center: tuple
    radius: int

    def __post_init__(self):
        center = tuple(int(c) for c in np.atleast_1d(np.asarray(self.center)))
        object.__setattr__(self, "center", center)
        if len(center) != self.env.dim:
            raise ValueError("center dimension does not match the environment")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if max(abs(c) for c in center) + self.radius > self.env.radius:
            raise ValueError("box does not fit inside the sampled window")

    @property
    def dim(self):
        return self.env.dim

    @property
    def side(self):
        return 2 * self.radius + 1

    @property
    def n_box(self):
        return self.side**self.dim

    def box_coords(self):
        """All box sites, C-ordered; cached on first use."""
        cached = self.__dict__.get("_box_coords")
        if cached is None:
            axes = [np.arange(c - self.radius, c + self.radius + 1) for c in self.center]
            grid = np.meshgrid(*axes, indexing="ij")
            cached = np.stack(grid, axis=-1).reshape(-1, self.dim).astype(np.int64)
            self.__dict__["_box_coords"] = cached
        return cached

    def env_indices(self):
        cached = self.__dict__.get("_env_indices")
        if cached is None:
            cached = self.env.flat_index(self.box_coords())
            self.__dict__["_env_indices"] = cached
        return cached

    def active_mask(self):
        """Boolean over box sites; False on hard cores."""
        cached = self.__dict__.get("_active_mask")
        if cached is None:
            cached = ~self.env.hardcore[self.env_indices()]
            self.__dict__["_active_mask"] = cached
        return cached

    @property
    def n_active(self):
        return int(self.active_mask().sum())

    def potential(self):
        """Finite v on active sites, in active order."""
        idx = self.env_indices()[self.active_mask()]
        return self.env.v_plus[idx] - self.env.v_minus[idx]

    def _neighbor_pairs(self):
        """Index pairs (i, j), i < j in active order, of lattice neighbors."""
        cached = self.__dict__.get("_pairs")
        if cached is None:
            S = self.side
            lo = np.asarray(self.center) - self.radius
            rel = self.box_coords()[self.active_mask()] - lo
            powers = S ** np.arange(self.dim - 1, -1, -1, dtype=np.int64)
            flat = rel @ powers
            lookup = np.full(S**self.dim, -1, dtype=np.int64)
            lookup[flat] = np.arange(len(flat))
            ii, jj = [], []
            for k in range(self.dim):
                ok = rel[:, k] + 1 < S
                shifted = flat[ok] + powers[k]
                j = lookup[shifted]
                hit = j >= 0
                ii.append(np.nonzero(ok)[0][hit])
                jj.append(j[hit])
            cached = (np.concatenate(ii), np.concatenate(jj))
            self.__dict__["_pairs"] = cached
        return cached

    def operator_dense(self, kappa):
        """kappa*Delta + v as a dense symmetric matrix on the active set."""
        n = self.n_active
        A = np.zeros((n, n))
        np.fill_diagonal(A, self.potential() - 2.0 * self.dim * kappa)
        i, j = self._neighbor_pairs()
        A[i, j] = kappa
        A[j, i] = kappa
        return A

    def operator_sparse(self, kappa):
        n = self.n_active
        i, j = self._neighbor_pairs()
        diag = self.potential() - 2.0 * self.dim * kappa
        rows = np.concatenate([np.arange(n), i, j])
        cols = np.concatenate([np.arange(n), j, i])
        vals = np.concatenate([diag, np.full(len(i), kappa), np.full(len(j), kappa)])
        return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class MomentField:
    """Values on a box as mantissa * e^log_offset, zero on inactive sites.

    After construction the largest mantissa is exactly 1 (or the field is
    identically zero), so mantissas never overflow no matter how large
    v*t gets.
    """

    domain: BoxDomain
    t: float
    kappa: float
    mantissa: np.ndarray = field(repr=False)
    log_offset: float = 0.0

    def log_values(self):
        """Per-box-site log m; -inf where the solution vanishes."""
        with np.errstate(divide="ignore"):
            return np.log(self.mantissa) + self.log_offset

    def value_at(self, coord):
        """(mantissa, log_offset) at one lattice coordinate."""
        coord = np.asarray(coord, dtype=np.int64).reshape(-1)
        delta = coord - np.asarray(self.domain.center)
        if np.any(np.abs(delta) > self.domain.radius):
            raise IndexError("coordinate outside the box")
        rel = delta + self.domain.radius
        S = self.domain.side
        idx = 0
        for k in range(self.domain.dim):
            idx = idx * S + int(rel[k])
        return float(self.mantissa[idx]), self.log_offset

    def log_total(self):
        """log sum over the box."""
        s = float(self.mantissa.sum())
        return -math.inf if s == 0.0 else math.log(s) + self.log_offset


def _normalized_field(domain, t, kappa, active_values, extra_offset):
    """Embed active-set values into the box and renormalize the scale."""
    m = np.asarray(active_values, dtype=np.float64)
    lo = m.min() if len(m) else 0.0
    if lo < 0.0:
        if lo < -1e-10 * max(m.max(), 1e-300):
            raise SolverError(f"solver produced negative mass {lo:.3e}")
        m = np.maximum(m, 0.0)
    peak = m.max() if len(m) else 0.0
    off = extra_offset
    if peak > 0.0:
        m = m / peak
        off = off + math.log(peak)
    full = np.zeros(domain.n_box)
    full[domain.active_mask()] = m
    return MomentField(domain=domain, t=float(t), kappa=float(kappa), mantissa=full, log_offset=float(off))


def _solve_dense_eig(domain, kappa, t):
    A = domain.operator_dense(kappa)
    w, Q = np.linalg.eigh(A)
    lam0 = w[-1]
    weights = Q.sum(axis=0) * np.exp((w - lam0) * t)
    m = Q @ weights
    return m, lam0 * t


def _solve_krylov(domain, kappa, t):
    A = domain.operator_sparse(kappa)
    c = float(domain.potential().max())
    B = (A - c * scipy.sparse.identity(domain.n_active, format="csr")) * t
    m = scipy.sparse.linalg.expm_multiply(B, np.ones(domain.n_active))
    return m, c * t


def _solve_rk4(domain, kappa, t, tol):
    """Adaptive explicit RK4 with step doubling and per-step rescaling."""
    if domain.n_active <= 512:
        A = domain.operator_dense(kappa)
    else:
        A = domain.operator_sparse(kappa)
    v = domain.potential()
    vmax_abs = float(np.abs(v).max()) if len(v) else 0.0
    hmax = 0.5 / (2 * domain.dim * kappa + max(float(np.maximum(v, 0.0).max(initial=0.0)), 0.0) + 1e-30)
    hmax = min(hmax, t) if t > 0 else t

    def rk4(y, h):
        k1 = A @ y
        k2 = A @ (y + 0.5 * h * k1)
        k3 = A @ (y + 0.5 * h * k2)
        k4 = A @ (y + h * k3)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    y = np.ones(domain.n_active)
    off = 0.0
    done = 0.0
    h = hmax
    budget = 50000
    while done < t:
        if budget <= 0:
            raise StiffnessError(
                f"step budget exhausted at t={done:.3g} of {t:.3g}", max_abs_v=vmax_abs
            )
        budget -= 1
        h = min(h, t - done)
        coarse = rk4(y, h)
        fine = rk4(rk4(y, 0.5 * h), 0.5 * h)
        scale = float(np.abs(fine).max())
        if scale == 0.0:
            y = fine
            done += h
            continue
        err = float(np.abs(fine - coarse).max()) / scale
        if not math.isfinite(err) or err > max(tol, 1e-14):
            h *= 0.5
            if h < t * 1e-12:
                raise StiffnessError(
                    f"step size underflow at t={done:.3g}", max_abs_v=vmax_abs
                )
            continue
        y = fine / scale
        off += math.log(scale)
        done += h
        h = min(h * 1.5, hmax)
    return y, off


def solve_truncated(env, box, kappa, t, method="auto", tol=1e-10):
    """Truncated moment field on a box with Dirichlet zero outside.

    method: "dense-eig" (symmetric eigendecomposition, the reference for
    small active sets), "krylov-expm" (sparse matrix exponential action),
    "rk4" (adaptive explicit integrator), or "auto".
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    domain = box if isinstance(box, BoxDomain) else BoxDomain(env, box, 0)
    n = domain.n_active
    if n == 0 or t == 0.0:
        vals = np.ones(n)
        return _normalized_field(domain, t, kappa, vals, 0.0)
    if kappa == 0.0:
        v = domain.potential()
        peak = float(v.max())
        return _normalized_field(domain, t, kappa, np.exp((v - peak) * t), peak * t)
    if method == "auto":
        method = "dense-eig" if n <= DENSE_LIMIT else "krylov-expm"
    if method == "dense-eig":
        if n > DENSE_LIMIT:
            raise SolverError(f"dense-eig limited to {DENSE_LIMIT} sites, got {n}")
        m, off = _solve_dense_eig(domain, kappa, t)
    elif method == "krylov-expm":
        m, off = _solve_krylov(domain, kappa, t)
    elif method == "rk4":
        m, off = _solve_rk4(domain, kappa, t, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _normalized_field(domain, t, kappa, m, off)


def required_radius(kappa, t, tol, d=1):
    """Smallest safe truncation radius for the untruncated moment.

    Charges the exit-probability bound 4 e^(-2 kappa t I(R/(2 kappa t)))
    against tol^2 (so the walk-confinement error is tol-squared small,
    leaving headroom for the e^(2 d kappa t) mass factor), and never goes
    below (kappa t)^(3/2).
    """
    kt = float(kappa) * float(t)
    if kt <= 0.0:
        return 0
    if not 0 < tol < 1:
        raise ValueError("tol must be in (0, 1)")
    target = -2.0 * math.log(tol)
    R = 1
    while 2.0 * kt * rate_I(R / (2.0 * kt)) - 2.0 * d * kt < target:
        R += 1
        if R > 10**6:
            raise SolverError("truncation radius exceeds 1e6")
    return max(math.ceil(kt**1.5), R)


def solve_untruncated(env, x, kappa, t, tol=1e-8, method="auto"):
    """(mantissa, log_offset, radius_used) of m(x, t) on the full lattice.

    Picks the radius from required_radius and solves the truncated
    problem on the box around x; for kappa = 0 the answer e^{v(x) t} is
    exact with radius 0.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if kappa == 0.0 or t == 0.0:
        idx = env.flat_index(x)
        if env.hardcore[idx]:
            return 0.0, 0.0, 0
        v = float(env.v_plus[idx] - env.v_minus[idx])
        return 1.0, v * t, 0
    R = required_radius(kappa, t, tol, env.dim)
    if int(np.abs(x).max()) + R > env.radius:
        raise SolverError(
            f"window radius {env.radius} too small: need radius {R} around {tuple(int(c) for c in x)}"
        )
    box = BoxDomain(env, tuple(int(c) for c in x), R)
    fld = solve_truncated(env, box, kappa, t, method=method, tol=tol)
    man, off = fld.value_at(x)
    return man, off, R


def log_center_moment_windows_1d(v_windows, kappa, t):
    """log m(center, t) for a stack of 1-d Dirichlet windows.

    v_windows has shape (B, m) of finite potentials; each row is solved
    with the tridiagonal operator kappa*Delta + v via a batched
    symmetric eigendecomposition.  Returns shape (B,) of log values.
    """
    v_windows = np.asarray(v_windows, dtype=np.float64)
    B, m = v_windows.shape
    if not np.all(np.isfinite(v_windows)):
        raise SolverError("batched 1-d path needs finite potentials")
    A = np.zeros((B, m, m))
    idx = np.arange(m)
    A[:, idx, idx] = v_windows - 2.0 * kappa
    A[:, idx[:-1], idx[1:]] = kappa
    A[:, idx[1:], idx[:-1]] = kappa
    w, Q = np.linalg.eigh(A)
    lam0 = w[:, -1]
    weights = Q.sum(axis=1) * np.exp((w - lam0[:, None]) * t)
    mc = np.einsum("bk,bk->b", Q[:, m // 2, :], weights)
    mc = np.maximum(mc, 1e-300)
    return np.log(mc) + lam0 * t


def empirical_average(env, L, kappa, t, tol=1e-8):
    """Box average m^L = |Λ_L|^-1 Σ_{|x| <= L} m(x, t) as (mantissa, log_offset).

    Hard-core sites contribute zero.  For kappa > 0 in one dimension
    without hard cores the per-site solves collapse into one batched
    sliding-window eigendecomposition; otherwise sites are solved one by
    one.
    """
    L = int(L)
    if L < 0:
        raise ValueError("L must be >= 0")
    n_box = (2 * L + 1) ** env.dim
    if kappa == 0.0 or t == 0.0:
        coords = _box_coords(env.dim, L)
        idx = env.flat_index(coords)
        v = effective_potential(env)[idx]
        finite = np.isfinite(v)
        if not finite.any():
            return 0.0, 0.0
        logs = v[finite] * t
        peak = float(logs.max())
        total = peak + math.log(np.exp(logs - peak).sum())
        return 1.0, total - math.log(n_box)
    R = required_radius(kappa, t, tol, env.dim)
    if L + R > env.radius:
        raise SolverError(f"window radius {env.radius} too small: need {L + R}")
    if env.dim == 1 and not env.hardcore.any():
        v = effective_potential(env)
        lo = env.flat_index(np.array([-L - R]))
        hi = env.flat_index(np.array([L + R]))
        segment = v[lo : hi + 1]
        logs = np.empty(2 * L + 1)
        width = 2 * R + 1
        chunk = max(1, 2**24 // (width * width))
        windows = np.lib.stride_tricks.sliding_window_view(segment, width)
        for s in range(0, 2 * L + 1, chunk):
            e = min(s + chunk, 2 * L + 1)
            logs[s:e] = log_center_moment_windows_1d(windows[s:e], kappa, t)
        peak = float(logs.max())
        total = peak + math.log(np.exp(logs - peak).sum())
        return 1.0, total - math.log(n_box)
    logs = []
    for coord in _box_coords(env.dim, L):
        if env.hardcore[env.flat_index(coord)]:
            continue
        man, off, _ = solve_untruncated(env, coord, kappa, t, tol=tol)
        if man > 0:
            logs.append(math.log(man) + off)
    if not logs:
        return 0.0, 0.0
    logs = np.asarray(logs)
    peak = float(logs.max())
    total = peak + math.log(np.exp(logs - peak).sum())
    return 1.0, total - math.log(n_box)


def _box_coords(dim, radius):
    axes = [np.arange(-radius, radius + 1)] * dim
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack(grid, axis=-1).reshape(-1, dim).astype(np.int64)


def padded_with_hardcore(env, pad):
    """Copy of the environment with a hard-core ring of width `pad` added.

    Used to check that Dirichlet padding leaves solutions unchanged.
    """
    from .environments import Environment, sample_environment

    big = sample_environment(env.family, env.dim, env.radius + pad, env.seed, env.baseline_death)
    hard = big.hardcore.copy()
    coords = big.coords()
    ring = np.abs(coords).max(axis=1) > env.radius
    hard[ring] = True
    vp = big.v_plus.copy()
    vm = big.v_minus.copy()
    vp[ring] = 0.0
    vm[ring] = 0.0
    inner = big.flat_index(env.coords())
    vp[inner] = env.v_plus
    vm[inner] = env.v_minus
    hard[inner] = env.hardcore
    return Environment(
        family=env.family,
        dim=env.dim,
        radius=env.radius + pad,
        seed=env.seed,
        baseline_death=env.baseline_death,
        v_plus=vp,
        v_minus=vm,
        hardcore=hard,
    )
