"""Primal-dual interior-point solver for separable convex QPs and LPs.

Solves::

    minimize    1/2 x' diag(q) x + c' x
    subject to  A x <= b
                x[i] >= 0  for i in the bounded set

with Mehrotra predictor-corrector steps.  Each Newton system is solved in its
sparse quasi-definite form ``[[D, A'], [A, -S/Z]]`` with a tiny diagonal
regularization, where ``D = q + y/x``.  Every variable must be bounded or have
positive curvature.  Pure LPs take separate primal and dual step lengths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, InvalidParameterError


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-15
    max_iter: int = 200
    step_fraction: float = 0.995
    regularization: float = 1e-12


@dataclass
class IpmResult:
    x: np.ndarray
    z: np.ndarray
    objective: float
    iterations: int
    gap: float
    primal_residual: float
    dual_residual: float


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def solve(
    q: np.ndarray,
    c: np.ndarray,
    A: sp.spmatrix,
    b: np.ndarray,
    bounded: np.ndarray,
    x0: np.ndarray,
    config: SolverConfig = SolverConfig(),
) -> IpmResult:
    q = np.asarray(q, dtype=float)
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    A = sp.csr_matrix(A)
    At = A.T.tocsr()
    bounded = np.asarray(bounded, dtype=bool)
    m, n = A.shape
    if np.any(q < 0):
        raise InvalidParameterError("q must be non-negative")
    if np.any((q == 0) & ~bounded):
        raise InvalidParameterError("every variable needs curvature or a bound")

    x = np.array(x0, dtype=float)
    if np.any(x[bounded] <= 0):
        raise InvalidParameterError("bounded variables must start strictly positive")
    s = b - A @ x
    s = np.where(s > 0, s, 1.0)
    z = np.ones(m)
    y = np.ones(int(bounded.sum()))
    n_comp = m + y.size
    linear = not np.any(q)
    c_norm = 1.0 + np.linalg.norm(c, np.inf)

    def newton(rp, rd, r_sz, r_xy, lu):
        rhs_x = -rd
        rhs_x[bounded] += r_xy / x[bounded]
        sol = lu.solve(np.concatenate([rhs_x, -rp - r_sz / z]))
        dx, dz = sol[:n], sol[n:]
        ds = -rp - A @ dx
        dy = (r_xy - y * dx[bounded]) / x[bounded]
        return dx, ds, dz, dy

    for it in range(1, config.max_iter + 1):
        xb = x[bounded]
        rd = q * x + c + At @ z
        rd[bounded] -= y
        rp = A @ x + s - b
        comp = float(s @ z + xb @ y)
        mu = comp / n_comp
        pobj = 0.5 * float(x @ (q * x)) + float(c @ x)
        rp_n = float(np.linalg.norm(rp, np.inf))
        rd_n = float(np.linalg.norm(rd, np.inf))
        # residuals are judged against the size of the terms they are made of, so tiny
        # optimal corrections still get relative accuracy
        p_scale = max(float(np.linalg.norm(b, np.inf)), float(np.linalg.norm(s, np.inf)))
        d_scale = max(c_norm - 1.0, float(np.linalg.norm(q * x, np.inf)), float(np.linalg.norm(At @ z, np.inf)))
        if (
            rp_n <= config.rel_tol * p_scale + config.abs_tol
            and rd_n <= config.rel_tol * d_scale + config.abs_tol
            and (comp <= config.rel_tol * abs(pobj) or comp <= config.abs_tol)
        ):
            return IpmResult(x, z, pobj, it - 1, comp, rp_n, rd_n)

        D = q.copy()
        D[bounded] += y / xb
        K = sp.bmat(
            [[sp.diags(D + config.regularization), At], [A, sp.diags(-(s / z) - config.regularization)]],
            format="csc",
        )
        lu = splu(K)

        dx, ds, dz, dy = newton(rp, rd, -s * z, -xb * y, lu)
        alpha = min(
            1.0, _max_step(s, ds), _max_step(z, dz), _max_step(xb, dx[bounded]), _max_step(y, dy)
        )
        mu_aff = float((s + alpha * ds) @ (z + alpha * dz) + (xb + alpha * dx[bounded]) @ (y + alpha * dy)) / n_comp
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        r_sz = -s * z - ds * dz + sigma * mu
        r_xy = -xb * y - dx[bounded] * dy + sigma * mu
        dx, ds, dz, dy = newton(rp, rd, r_sz, r_xy, lu)
        eta = max(config.step_fraction, 1.0 - mu)
        a_p = min(1.0, eta * min(_max_step(s, ds), _max_step(xb, dx[bounded])))
        a_d = min(1.0, eta * min(_max_step(z, dz), _max_step(y, dy)))
        if not linear:
            # with curvature the dual residual couples x and z, so both move together
            a_p = a_d = min(a_p, a_d)
        x = x + a_p * dx
        s = s + a_p * ds
        z = z + a_d * dz
        y = y + a_d * dy

    raise ConvergenceError(
        f"interior-point solver did not converge in {config.max_iter} iterations",
        {"primal_residual": rp_n, "dual_residual": rd_n, "gap": comp},
    )
