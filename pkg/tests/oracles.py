"""Independent reference computations used as test oracles."""

import numpy as np
from scipy import optimize, sparse

from racvar.transform import transform


def numerical_det(x, params, step=1e-6):
    """Determinant of a central-difference Jacobian of the transform."""
    x = np.asarray(x, dtype=float)
    d = x.size
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = step * max(1.0, abs(x[j]))
        cols.append((transform(x + e, params) - transform(x - e, params)) / (2 * e[j]))
    return float(np.linalg.det(np.column_stack(cols)))


def cvar_lp(scenarios, weights, beta, returns=None, min_return=None):
    """Exact optimum of the weighted sample CVaR problem as a linear program.

    Variables (theta, u, t) minimise u + sum(w t) / (n beta) subject to
    t >= Y theta - u, t >= 0, sum(theta) = 1 and optionally returns @ theta >= q.
    """
    y = np.asarray(scenarios, dtype=float)
    n, p = y.shape
    c = np.concatenate([np.zeros(p), [1.0], np.asarray(weights) / (n * beta)])
    a_ub = sparse.hstack([sparse.csr_matrix(y), -np.ones((n, 1)), -sparse.identity(n)]).tocsr()
    b_ub = np.zeros(n)
    if returns is not None:
        row = sparse.csr_matrix(np.concatenate([-np.asarray(returns), [0.0], np.zeros(n)])[None, :])
        a_ub = sparse.vstack([a_ub, row]).tocsr()
        b_ub = np.concatenate([b_ub, [-min_return]])
    a_eq = sparse.csr_matrix(np.concatenate([np.ones(p), [0.0], np.zeros(n)])[None, :])
    bounds = [(None, None)] * (p + 1) + [(0, None)] * n
    res = optimize.linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds,
                           method="highs")
    assert res.status == 0, res.message
    return res.fun, res.x[:p], res.x[p]


def projection_qp(theta, returns=None, min_return=None):
    """Euclidean projection by a generic constrained minimiser."""
    theta = np.asarray(theta, dtype=float)
    cons = [{"type": "eq", "fun": lambda t: t.sum() - 1.0}]
    if returns is not None:
        cons.append({"type": "ineq", "fun": lambda t: returns @ t - min_return})
    res = optimize.minimize(lambda t: 0.5 * np.sum((t - theta) ** 2), np.full(theta.size, 1 / theta.size),
                            jac=lambda t: t - theta, constraints=cons, method="SLSQP",
                            options={"ftol": 1e-14, "maxiter": 500})
    return res.x
