"""Closed-form and quadrature analytics for the annealed moment scales.

The central object is the cumulant generating function
H(t) = log E[exp(t v(0))].  Writing the expectation through the quantile
function and substituting u = 1 - e^(-s) gives

    E[exp(t v)] = int_0^1 exp(t q(u)) du = int_0^inf exp(t qtilde(s) - s) ds,

with qtilde the quantile in exponential scale.  The substitution absorbs
the u -> 1 tail that dominates heavy-tailed families.  A second
substitution s = e^z removes the remaining endpoint trouble at s -> 0
(the log-integrand becomes smooth and unimodal in z, decaying at least
linearly on the left flank and double-exponentially on the right), so an
adaptive Gauss-Legendre scheme with log-domain accumulation reaches
absolute log-accuracy around 1e-10.

Everything downstream (cumulant exponents, transition exponents, growth
scales, critical curves, the random-walk exit rate) lives here as pure
functions of a TailFamily.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .environments import TailFamily

_LOG_WINDOW = 60.0  # integrand kept down to exp(-60) relative to its peak
_PANEL_TOL = 1e-10
_MAX_PANELS = 20000
_MAX_DEPTH = 48

_GL_CACHE = {}


class QuadratureError(RuntimeError):
    """Adaptive quadrature ran out of panel budget.

    Carries the achieved log-error bound in `achieved`.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class RootBracketError(RuntimeError):
    """A root finder failed to bracket a sign change.

    Carries the last bracket tried in `bracket`.
    """

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


def rate_I(y):
    """Large-deviation rate y*asinh(y) - sqrt(1+y^2) + 1 for walk exits.

    Equals sup over lam of [lam*y - (cosh(lam) - 1)], the Legendre
    transform of the jump cumulant; increasing on y >= 0 with I(0) = 0.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("rate_I is defined for y >= 0")
    out = y * np.arcsinh(y) - np.hypot(1.0, y) + 1.0
    return float(out) if out.ndim == 0 else out


def _gl_nodes(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _log_integrand_z(family, t):
    """G(z) = t*qtilde(e^z) - e^z + z after the substitution s = e^z."""
    k = family.kind
    if k == "weibull":
        rho = family.rho
        return lambda z: t * np.exp(z / rho) - np.exp(z) + z
    if k == "double_exp":
        slope = t * family.rho + 1.0
        return lambda z: slope * z - np.exp(z)
    if k == "sq_double_exp":
        # valid on z >= 0 only; the flat piece below is handled in closed form
        return lambda z: t * np.sqrt(z) - np.exp(z) + z
    if k == "frechet":
        rho = family.rho
        return lambda z: -t * np.exp(-z / rho) - np.exp(z) + z
    raise ValueError(f"no integral representation for family {k!r}")


def _peak(family, t):
    """Argmax of the log-integrand; closed forms except one bisection."""
    k = family.kind
    if k == "weibull":
        return (t / family.rho) ** (family.rho / (family.rho - 1.0))
    if k == "double_exp":
        return family.rho * t
    if k == "frechet":
        return (t / family.rho) ** (family.rho / (family.rho + 1.0))
    # sq_double_exp: stationarity reads 2 s sqrt(log s) = t on (1, inf);
    # the left side increases from 0, so a doubling bracket always closes.
    lo, hi = 1.0, 2.0
    while 2.0 * hi * math.sqrt(math.log(hi)) < t:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 2.0 * mid * math.sqrt(math.log(mid)) < t:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _upper_cut(G, zpeak, Gpeak):
    # right flank falls off like -e^z, so a doubling walk closes fast
    step = 1.0
    hi = zpeak + step
    while G(hi) > Gpeak - _LOG_WINDOW:
        step *= 2.0
        hi = zpeak + step
        if step > 1e6:
            raise QuadratureError("no upper truncation point found")
    return hi


def _lower_cut(G, zpeak, Gpeak, floor):
    """Walk left from the peak until the integrand is window-negligible.

    With floor = -inf the left flank decays at least linearly in z, so a
    doubling walk crosses the window.  The almost-bounded family has a
    hard floor at z = 0 (its closed-form piece lives below); when the
    whole flank above the floor stays inside the window, the floor
    itself is the cut.
    """
    if math.isfinite(floor):
        if zpeak <= floor:
            return floor
        lo = floor + 0.5 * (zpeak - floor)
        while G(lo) > Gpeak - _LOG_WINDOW:
            gap = lo - floor
            if gap < 1e-12 * max(1.0, abs(zpeak)):
                return floor
            lo = floor + 0.5 * gap
        return lo
    step = 1.0
    lo = zpeak - step
    while G(lo) > Gpeak - _LOG_WINDOW:
        step *= 2.0
        lo = zpeak - step
        if step > 1e6:
            raise QuadratureError("no lower truncation point found")
    return lo


def _panel_log(g, a, b, n):
    """log of int_a^b e^g via n-point Gauss-Legendre, evaluated stably."""
    x, w = _gl_nodes(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return float(logsumexp(g(mid + half * x) + np.log(half * w)))


def _adaptive_log_integral(g, a, b):
    """Adaptive bisection with 16-point panels, accumulated in log space.

    A panel is accepted when its one-panel estimate agrees with the sum
    of its two halves to _PANEL_TOL in log value.  The total log error is
    a convex combination of per-panel log errors (each panel contributes
    proportionally to its mass), so the worst accepted panel bounds it.
    """
    stack = [(a, b, 0)]
    leaf_logs = []
    worst = 0.0
    while stack:
        if len(leaf_logs) + len(stack) > _MAX_PANELS:
            raise QuadratureError(
                f"panel budget {_MAX_PANELS} exhausted", achieved=worst
            )
        pa, pb, depth = stack.pop()
        whole = _panel_log(g, pa, pb, 16)
        mid = 0.5 * (pa + pb)
        halves = np.logaddexp(_panel_log(g, pa, mid, 16), _panel_log(g, mid, pb, 16))
        if whole == -np.inf and halves == -np.inf:
            err = 0.0
        elif not (np.isfinite(whole) and np.isfinite(halves)):
            err = np.inf
        else:
            err = abs(whole - halves)
        if err <= _PANEL_TOL or depth >= _MAX_DEPTH:
            leaf_logs.append(halves)
            worst = max(worst, 0.0 if err == np.inf else err)
        else:
            stack.append((pa, mid, depth + 1))
            stack.append((mid, pb, depth + 1))
    total = float(logsumexp(leaf_logs))
    if worst > 1e-9:
        raise QuadratureError(
            f"quadrature stalled at log-error {worst:.3e}", achieved=worst
        )
    return total, worst


@lru_cache(maxsize=4096)
def _cumulant_smooth(family, t):
    G = _log_integrand_z(family, t)
    floor = 0.0 if family.kind == "sq_double_exp" else -math.inf
    zpeak = math.log(_peak(family, t))
    Gpeak = float(G(zpeak))
    lo = _lower_cut(G, zpeak, Gpeak, floor)
    hi = _upper_cut(G, zpeak, Gpeak)
    total, _ = _adaptive_log_integral(G, lo, hi)
    if family.kind == "sq_double_exp":
        # atom at 0 plus the flat quantile below s = 1: int_0^1 e^{-s} ds
        total = float(np.logaddexp(total, math.log(-math.expm1(-1.0))))
    return total


def cumulant_H(family, t):
    """H(t) = log E[exp(t v(0))] for t >= 0.

    Hard core is exact (the surviving mass is 1-p at every t, including
    t = 0); continuous families go through the adaptive quadrature.
    """
    t = float(t)
    if t < 0:
        raise ValueError("cumulant_H needs t >= 0")
    if family.kind == "hard_core":
        return math.log1p(-family.p)
    if t == 0.0:
        return 0.0
    return _cumulant_smooth(family, t)


def cumulant_exponent_G(family, theta, t):
    """G_theta(t) = (H((1+theta)t) - (1+theta)H(t)) / theta.

    Defined for theta in (-1, 0) and (0, inf); nonnegative for
    0 < theta <= 1 by Jensen.
    """
    theta = float(theta)
    if theta == 0.0 or theta <= -1.0:
        raise ValueError("theta must be nonzero and > -1")
    return (cumulant_H(family, (1.0 + theta) * t) - (1.0 + theta) * cumulant_H(family, t)) / theta


def cumulant_gap(family, s):
    """k(s) = H(2s) - 2 H(s), the doubling gap of the cumulant."""
    return cumulant_H(family, 2.0 * s) - 2.0 * cumulant_H(family, s)


@dataclass(frozen=True)
class ExponentTable:
    """Transition exponents and the growth-scale descriptor of a family.

    j_kind names the time scale J(t) that box exponents are measured
    against: "cumulant" (H(t)), "linear" (t), "almost_bounded"
    (t/(2 sqrt(log t))), "frechet_scaled" (t/alpha_t^2 up to an unknown
    positive constant), "hardcore_shape" (t^(d/(d+2)) up to an unknown
    positive constant).  empirical_only marks families whose exponents
    are not backed by a closed-form J, so experiments must calibrate the
    scale from data.
    """

    family: TailFamily
    dim: int
    gamma1: float
    gamma2: float
    j_kind: str
    empirical_only: bool = False
    nu: float | None = None


def transition_exponents(family, d=1):
    """gamma1, gamma2 and the J descriptor for a family in dimension d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    k = family.kind
    if k == "weibull":
        rho = family.rho
        g1 = 1.0 / (rho - 1.0)
        # doubling derivation: F_theta(2t)/F_theta(t) -> 2^(rho/(rho-1));
        # a circulating summary-table shorthand 2^(1-gamma1)*gamma1
        # disagrees for every rho and is not used (see tests).
        g2 = 2.0 ** (rho / (rho - 1.0)) * g1
        return ExponentTable(family, d, g1, g2, "cumulant")
    if k == "double_exp":
        rho = family.rho
        return ExponentTable(family, d, rho, 2.0 * rho, "linear")
    if k == "sq_double_exp":
        # regular-variation index 1 for this example, hence gamma1 = 1
        return ExponentTable(family, d, 1.0, 2.0, "almost_bounded")
    if k == "frechet":
        nu = 1.0 / (d + 2 + 2.0 * family.rho)
        g1 = nu * nu
        g2 = 2.0 ** (1.0 - nu * nu) * g1
        return ExponentTable(family, d, g1, g2, "frechet_scaled", nu=nu)
    # hard core: only the shape of the scale is known
    g1 = 2.0 / (d + 2.0)
    g2 = 2.0 ** (1.0 - g1) * g1
    return ExponentTable(family, d, g1, g2, "hardcore_shape", empirical_only=True)


def frechet_alpha(family, d, t):
    """Scale alpha_t solving k(t a^-d) a^2 = t a^-d by bisection.

    k is the doubling gap of the numerically computed H.  The left side
    over the right is increasing in a for d = 1, so an expanding bracket
    around a = 1 closes; failure to bracket raises RootBracketError.
    """
    if family.kind != "frechet":
        raise ValueError("alpha-scale is defined for the frechet family")
    t = float(t)
    if t <= 0:
        raise ValueError("t must be > 0")

    def phi(a):
        s = t * a ** (-float(d))
        return cumulant_gap(family, s) * a * a - s

    lo = hi = 1.0
    for _ in range(200):
        if phi(lo) < 0.0:
            break
        lo *= 0.5
    else:
        raise RootBracketError("no lower bracket for alpha", bracket=(lo, hi))
    for _ in range(200):
        if phi(hi) > 0.0:
            break
        hi *= 2.0
    else:
        raise RootBracketError("no upper bracket for alpha", bracket=(lo, hi))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 0.5 * (lo + hi)


def growth_J(family, d, t):
    """Evaluate the growth scale J(t) for a family in dimension d.

    For the two families whose constant (chi, c2) has no closed form the
    value is the shape only; regime experiments calibrate the constant
    empirically.
    """
    t = float(t)
    if t <= 0:
        raise ValueError("growth_J needs t > 0")
    k = family.kind
    if k == "weibull":
        return cumulant_H(family, t)
    if k == "double_exp":
        return t
    if k == "sq_double_exp":
        if t <= math.e:
            raise ValueError("almost-bounded growth scale needs t > e")
        return t / (2.0 * math.sqrt(math.log(t)))
    if k == "frechet":
        alpha = frechet_alpha(family, d, t)
        return t / (alpha * alpha)
    # hard core
    return t ** (d / (d + 2.0))


def critical_a(family, gamma, d=1):
    """Critical normalizer exponent a(gamma) on 0 < gamma <= gamma1.

    Weibull and frechet reach a(gamma1) = 1; the double-exponential
    form peaks at a(gamma1) = rho instead, which is why no unit value is
    asserted for it.  The hard-core family has no critical curve here.
    """
    if family.kind == "hard_core":
        raise ValueError("no critical function for the hard-core family")
    gamma = float(gamma)
    table = transition_exponents(family, d)
    if not 0.0 < gamma <= table.gamma1:
        raise ValueError(
            f"gamma must lie in (0, {table.gamma1:g}] for {family.label()}"
        )
    k = family.kind
    if k == "weibull":
        rho = family.rho
        return (rho / (rho - 1.0)) * ((rho - 1.0) * gamma) ** (1.0 / rho) - gamma
    if k == "double_exp":
        rho = family.rho
        return gamma * math.exp((gamma - rho) / rho)
    if k == "sq_double_exp":
        # almost-bounded class with index 1
        return gamma * math.exp(gamma - 1.0)
    nu2 = table.nu * table.nu
    return (1.0 - nu2) * (gamma / nu2) ** (-nu2 / (1.0 - nu2)) + gamma


def intermittency_shape_f1(family, theta, d=1):
    """Limit shape f1(theta) with F_theta(t) ~ f1(theta) J(t).

    Increasing in theta with f1(theta) -> gamma1 as theta -> 0; used to
    calibrate the unknown multiplicative constant in J from measured
    F_theta values.
    """
    theta = float(theta)
    if theta == 0.0 or theta <= -1.0:
        raise ValueError("theta must be nonzero and > -1")
    k = family.kind
    u = 1.0 + theta
    if k == "weibull":
        rp = family.rho / (family.rho - 1.0)
        return (u**rp - u) / theta
    if k == "double_exp":
        return family.rho * u * math.log(u) / theta
    if k == "sq_double_exp":
        return u * math.log(u) / theta
    if k == "frechet":
        nu = 1.0 / (d + 2 + 2.0 * family.rho)
        return (u - u ** (1.0 - nu * nu)) / theta
    raise ValueError("no intermittency shape for the hard-core family")
