import numpy as np
import pytest

from oracles import cvar_lp
from racvar.losses import ConstraintSet, CreditLoss, LinearLoss
from racvar.models import CreditModelSpec, ModelSpec, sample_x
from racvar.objective import Decision, sample_path_objective
from racvar.solver import CONVERGENCE_CLASS, solve
from racvar.transform import TransformParams, identity_batch, transform_batch


class Quadratic:
    def __call__(self, u, theta):
        return (u - 3.0) ** 2, 2 * (u - 3.0), np.zeros(0)


def _problem(seed, n=500, beta=0.037, h=None, d=5):
    spec = ModelSpec.exchangeable(d)
    x = sample_x(spec, n, seed)
    tb = identity_batch(x, beta) if h is None else transform_batch(x, spec, TransformParams(h, beta))
    return sample_path_objective(tb, LinearLoss(d), beta), tb


def test_quadratic_surrogate():
    rep = solve(Quadratic(), Decision(-5.0, []), 1e-6, None)
    assert rep.converged and abs(rep.solution.u - 3.0) < 1e-3
    assert rep.oracle_calls >= rep.iterations


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("h", [None, 2.5])
def test_matches_lp_optimum(seed, h):
    obj, tb = _problem(seed, h=h)
    ref, theta_lp, _ = cvar_lp(tb.transformed, tb.lr, 0.037)
    rep = solve(obj, Decision(0.0, np.eye(5)[0]), 1e-6 * ref, ConstraintSet(), max_iter=50_000)
    assert rep.converged
    assert rep.objective_value == pytest.approx(ref, rel=1e-4)
    assert abs(rep.solution.theta.sum() - 1) < 1e-12


def test_matches_lp_with_return_floor():
    spec = CreditModelSpec.default()
    loss = CreditLoss(spec)
    x = sample_x(spec.factor_model, 2000, 3).raw
    tb = transform_batch(x, spec.factor_model, TransformParams(2.5, 1e-2))
    obj = sample_path_objective(tb, loss, 1e-2, seed=4)
    ref, theta_lp, _ = cvar_lp(obj.bound.scenarios, tb.lr, 1e-2, spec.returns, spec.min_return)
    c = loss.constraint()
    rep = solve(obj, Decision(0.0, [1.0, 0.0]), 1e-7 * ref, c)
    assert rep.objective_value == pytest.approx(ref, rel=1e-4)
    assert c.residual(rep.solution.theta) <= 1e-10


def test_warm_start_at_optimum_is_noop():
    obj, tb = _problem(11)
    first = solve(obj, Decision(0.0, np.eye(5)[0]), 1e-6, ConstraintSet())
    # a warm start carries its own gap estimate, as the RA driver passes the previous tolerance
    again = solve(obj, first.solution, 1e-6, ConstraintSet(), delta0=1e-6)
    assert again.converged and again.iterations <= 25
    assert again.objective_value <= first.objective_value + 1e-6
    assert np.allclose(again.solution.theta, first.solution.theta, atol=1e-3)


def test_best_value_monotone_and_feasible(tmp_path):
    obj, _ = _problem(2)
    path = tmp_path / "trace.csv"
    rep = solve(obj, Decision(0.0, np.eye(5)[0]), 1e-4, ConstraintSet(), trace_path=path)
    best = [row[2] for row in rep.trace]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert path.read_text().splitlines()[0] == "iteration,value,best,step,delta"
    assert rep.convergence_class == CONVERGENCE_CLASS == "linear"


def test_cap_exhaustion_flagged():
    obj, _ = _problem(5)
    rep = solve(obj, Decision(0.0, np.eye(5)[0]), 1e-9, ConstraintSet(), max_iter=5)
    assert not rep.converged and rep.iterations == 5
    assert rep.achieved_tol > 1e-9


def test_joint_u_steps_without_elimination():
    # the joint (u, theta) space is badly scaled and stalls early unless patience is long
    obj, tb = _problem(6, n=300)
    ref, _, _ = cvar_lp(tb.transformed, tb.lr, 0.037)
    rep = solve(obj, Decision(0.0, np.full(5, 0.2)), 1e-6 * ref, ConstraintSet(), exact_u=False,
                max_iter=200_000, patience=200)
    assert rep.objective_value == pytest.approx(ref, rel=1e-3)


def test_warm_start_economy():
    # reaching the same accuracy from the previous stage's answer takes fewer calls
    warm, cold = [], []
    for seed in range(20):
        prev, _ = _problem((seed, 0), n=500, h=2.5)
        stage1 = solve(prev, Decision(0.0, np.eye(5)[0]), 1e-2, ConstraintSet())
        obj, _ = _problem((seed, 1), n=2000, h=2.5)
        eps = 1e-3
        warm.append(solve(obj, stage1.solution, eps, ConstraintSet()).oracle_calls)
        obj.calls = 0
        cold.append(solve(obj, Decision(0.0, np.eye(5)[0]), eps, ConstraintSet()).oracle_calls)
    assert np.median(warm) < np.median(cold)
