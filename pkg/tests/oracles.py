"""Independent reference implementations used as test oracles.

Nothing here imports the code paths under test beyond plain data types.
"""

import math

import cvxopt
import numpy as np
from scipy.optimize import linprog

cvxopt.solvers.options.update(show_progress=False, abstol=1e-13, reltol=1e-13, feastol=1e-13, maxiters=300)


def tree_nodes(depth):
    return [(j, l) for l in range(depth + 1) for j in range(1, 2 ** (depth - l) + 1)]


def path_matrix(depth, B):
    """Row k has ones on the tree nodes covering leaf B[k]."""
    nodes = tree_nodes(depth)
    col = {nd: c for c, nd in enumerate(nodes)}
    P = np.zeros((len(B), len(nodes)))
    for r, i in enumerate(B):
        for l in range(depth + 1):
            P[r, col[(math.ceil(i / 2**l), l)]] = 1.0
    return P


def smoothing_constraints(f_hat, B, depth):
    """``G nu <= h`` encoding: value >= 0 at the first point, nondecreasing, <= 1 at the last."""
    P = path_matrix(depth, B)
    f = np.asarray(f_hat, dtype=float)
    rows = [-P[0]]
    rhs = [f[0]]
    for k in range(len(B) - 1):
        rows.append(P[k] - P[k + 1])
        rhs.append(f[k + 1] - f[k])
    rows.append(P[-1])
    rhs.append(1.0 - f[-1])
    return np.array(rows), np.array(rhs), P


def reference_smoothing(f_hat, B, depth, p):
    """Optimal objective of the correction problem from off-the-shelf solvers.

    p=1: HiGHS on the split LP.  p=2: cvxopt QP, then an exact solve on the
    active constraints (minimum-norm point of that affine set), kept if it
    stays feasible and improves the objective.
    """
    G, h, _ = smoothing_constraints(f_hat, B, depth)
    nv = G.shape[1]
    if p == 1:
        res = linprog(np.ones(2 * nv), A_ub=np.hstack([G, -G]), b_ub=h, bounds=(0, None), method="highs")
        assert res.status == 0
        return float(res.fun)
    sol = cvxopt.solvers.qp(
        cvxopt.matrix(2.0 * np.eye(nv)), cvxopt.matrix(np.zeros(nv)), cvxopt.matrix(G), cvxopt.matrix(h)
    )
    x = np.array(sol["x"]).ravel()
    best = float(x @ x)
    slack = h - G @ x
    active = slack < 1e-7 * max(1.0, float(np.abs(h).max()))
    if active.any():
        Ga = G[active]
        lam = np.linalg.lstsq(Ga @ Ga.T, h[active], rcond=None)[0]
        xp = Ga.T @ lam
        if np.all(G @ xp <= h + 1e-13) and float(xp @ xp) < best:
            best = float(xp @ xp)
    return best


def direct_roc(scores, labels, thresholds):
    """TPR/FPR by sweeping thresholds over the raw records (positive when score <= t)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    P = int((y == 1).sum())
    Nn = int((y == 0).sum())
    fpr, tpr = [0.0], [0.0]
    for t in thresholds:
        pred = s <= t
        tpr.append(int((pred & (y == 1)).sum()) / P)
        fpr.append(int((pred & (y == 0)).sum()) / Nn)
    return np.array(fpr), np.array(tpr)


def plaintext_hl(probs, labels, cuts, floor=0.5):
    """Textbook HL statistic with explicit per-group loops."""
    Q = len(cuts) - 1
    H = 0.0
    for q in range(Q):
        lo, hi = cuts[q], cuts[q + 1]
        members = [
            (p, y) for p, y in zip(probs, labels) if (lo <= p if q == 0 else lo < p) and p <= hi
        ]
        o1 = sum(y for _, y in members)
        o0 = len(members) - o1
        e1 = sum(p for p, _ in members)
        e0 = sum(1 - p for p, _ in members)
        H += (o1 - e1) ** 2 / max(e1, floor) + (o0 - e0) ** 2 / max(e0, floor)
    return H


def scan_inverse(taus, values, p, lo, hi, resolution):
    """Smallest point of a fine scan whose left-snapped curve value reaches p."""
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    for t in np.arange(lo, hi + resolution / 2, resolution):
        k = int(np.searchsorted(taus, t, side="right")) - 1
        if values[max(k, 0)] >= p:
            return float(t)
    return float(hi)
