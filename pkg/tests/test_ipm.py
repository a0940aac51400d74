import cvxopt
import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

from dpecdf.errors import ConvergenceError, InvalidParameterError
from dpecdf.ipm import SolverConfig, solve

cvxopt.solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)


def random_feasible(rng, m, n):
    A = rng.normal(size=(m, n))
    x_feas = rng.random(n) + 0.1
    b = A @ x_feas + rng.random(m)
    return A, b


@pytest.mark.parametrize("seed", range(8))
def test_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    m, n = 12, 8
    A, b = random_feasible(rng, m, n)
    c = rng.random(n) - 0.3
    A = np.vstack([A, np.ones((1, n))])  # keep the LP bounded
    b = np.append(b, 50.0)
    ref = linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
    res = solve(np.zeros(n), c, sp.csr_matrix(A), b, np.ones(n, bool), np.full(n, 0.5))
    assert res.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-9)
    assert np.all(A @ res.x <= b + 1e-8) and np.all(res.x >= -1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_qp_matches_cvxopt(seed):
    rng = np.random.default_rng(100 + seed)
    m, n = 10, 6
    A, b = random_feasible(rng, m, n)
    q = rng.random(n) + 0.5
    c = rng.normal(size=n) * 3
    sol = cvxopt.solvers.qp(cvxopt.matrix(np.diag(q)), cvxopt.matrix(c), cvxopt.matrix(A), cvxopt.matrix(b))
    x_ref = np.array(sol["x"]).ravel()
    ref = 0.5 * x_ref @ (q * x_ref) + c @ x_ref
    res = solve(q, c, sp.csr_matrix(A), b, np.zeros(n, bool), np.zeros(n))
    assert res.objective == pytest.approx(ref, rel=1e-7, abs=1e-9)
    assert np.allclose(res.x, x_ref, atol=1e-6)


def test_unconstrained_minimum_inside():
    res = solve(np.array([2.0]), np.array([-2.0]), sp.csr_matrix([[1.0]]), np.array([10.0]), np.array([False]), np.array([0.0]))
    assert res.x[0] == pytest.approx(1.0, abs=1e-8)


def test_input_validation():
    A = sp.csr_matrix([[1.0]])
    with pytest.raises(InvalidParameterError):
        solve(np.array([-1.0]), np.zeros(1), A, np.ones(1), np.array([False]), np.zeros(1))
    with pytest.raises(InvalidParameterError):
        solve(np.zeros(1), np.ones(1), A, np.ones(1), np.array([False]), np.zeros(1))
    with pytest.raises(InvalidParameterError):
        solve(np.zeros(1), np.ones(1), A, np.ones(1), np.array([True]), np.zeros(1))


def test_iteration_cap():
    rng = np.random.default_rng(3)
    A, b = random_feasible(rng, 20, 10)
    with pytest.raises(ConvergenceError):
        solve(np.ones(10), rng.normal(size=10), sp.csr_matrix(A), b, np.zeros(10, bool), np.zeros(10), SolverConfig(max_iter=1))
