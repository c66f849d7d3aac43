"""Principal Dirichlet eigenpairs and eigenvalue sandwich checks.

The operator is kappa*Delta + v on the active set of a box with zero
boundary conditions.  Its top eigenvalue lambda0 pins the growth of the
truncated moment field: e^{t lambda0} <= sum over the box of m, and no
single site exceeds sqrt(|U|) e^{t lambda0}.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .solver import BoxDomain, SolverError, solve_truncated, DENSE_LIMIT


@dataclass(frozen=True)
class SpectrumSlice:
    """Top of the spectrum on one box.

    eigenvalues is descending; psi0 is the unit principal vector embedded
    in box order (zeros on inactive sites) and normalized so its sum is
    positive.
    """

    domain: BoxDomain
    kappa: float
    eigenvalues: np.ndarray = field(repr=False)
    psi0: np.ndarray = field(repr=False)
    method: str = "dense-eig"
    residual: float = 0.0

    @property
    def lambda0(self):
        return float(self.eigenvalues[0])

    @property
    def n_active(self):
        return self.domain.n_active


def _power_top(A, tol=1e-10, max_iter=500000):
    """Dominant eigenpair of symmetric A by shifted power iteration.

    The shift makes A + cI positive definite so the algebraically largest
    eigenvalue of A is the dominant one of the shifted matrix.
    """
    n = A.shape[0]
    diag = A.diagonal()
    off = np.abs(A).sum(axis=1)
    off = np.asarray(off).reshape(-1) - np.abs(diag)
    lower = float((diag - off).min())
    c = 1.0 - min(lower, 0.0)
    psi = np.full(n, 1.0 / math.sqrt(n))
    lam = 0.0
    res = math.inf
    for _ in range(max_iter):
        z = A @ psi
        lam = float(psi @ z)
        res = float(np.linalg.norm(z - lam * psi))
        if res <= tol:
            break
        y = z + c * psi
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            raise SolverError("power iteration collapsed to zero")
        psi = y / norm
    else:
        raise SolverError(f"power iteration stalled at residual {res:.3e}")
    return lam, psi, res


def principal_eigen(env, box, kappa, n_top=2, tol=1e-10):
    """Top eigenvalues and principal vector on a box.

    Dense symmetric eigendecomposition up to 4000 active sites; above
    that a shifted power iteration run to the requested residual, which
    then reports the top eigenvalue only.
    """
    domain = box if isinstance(box, BoxDomain) else BoxDomain(env, box, 0)
    n = domain.n_active
    if n == 0:
        raise SolverError("empty active set has no spectrum")
    if n <= DENSE_LIMIT:
        A = domain.operator_dense(kappa)
        w, Q = np.linalg.eigh(A)
        order = np.argsort(w)[::-1]
        top = w[order[: max(1, n_top)]]
        psi = Q[:, order[0]]
        lam = float(top[0])
        res = float(np.linalg.norm(A @ psi - lam * psi))
        method = "dense-eig"
        eigs = np.array(top, dtype=np.float64)
    else:
        A = domain.operator_sparse(kappa)
        lam, psi, res = _power_top(A, tol=tol)
        method = "power"
        eigs = np.array([lam])
    if psi.sum() < 0:
        psi = -psi
    full = np.zeros(domain.n_box)
    full[domain.active_mask()] = psi
    return SpectrumSlice(
        domain=domain,
        kappa=float(kappa),
        eigenvalues=eigs,
        psi0=full,
        method=method,
        residual=res,
    )


@dataclass(frozen=True)
class SandwichReport:
    """Margins of the two-sided eigenvalue bound on one box.

    lower_margin = log sum m - t lambda0, upper_margin =
    0.5 log |U| + t lambda0 - max log m.  Both should be nonnegative;
    violations are reported here, never raised.
    """

    lambda0: float
    t: float
    n_active: int
    lower_margin: float
    upper_margin: float

    @property
    def passed(self):
        slack = -1e-9
        return self.lower_margin >= slack and self.upper_margin >= slack


def verify_sandwich(env, box, kappa, t, method="auto"):
    """Check e^{t lambda0} <= sum m and max m <= sqrt(|U|) e^{t lambda0}."""
    domain = box if isinstance(box, BoxDomain) else BoxDomain(env, box, 0)
    slice_ = principal_eigen(env, domain, kappa, n_top=1)
    fld = solve_truncated(env, domain, kappa, t, method=method)
    lam0 = slice_.lambda0
    logs = fld.log_values()[domain.active_mask()]
    log_sum = fld.log_total()
    lower = log_sum - t * lam0
    upper = 0.5 * math.log(domain.n_active) + t * lam0 - float(logs.max())
    return SandwichReport(
        lambda0=lam0,
        t=float(t),
        n_active=domain.n_active,
        lower_margin=float(lower),
        upper_margin=float(upper),
    )
