import numpy as np
import pytest
from scipy.optimize import linprog

from fairdiv.lp import EQ, GE, LE, LPProblem, constraint_residual, solve_lp


def test_textbook_max():
    # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  36 at (2, 6)
    p = LPProblem([[1, 0], [0, 2], [3, 2]], [LE, LE, LE], [4, 12, 18], c=[3, 5], sense="max")
    out = solve_lp(p)
    assert out.status == "optimal"
    assert out.objective == pytest.approx(36)
    assert np.allclose(out.x, [2, 6])


def test_infeasible_and_unbounded():
    assert solve_lp(LPProblem([[1.0], [1.0]], [LE, GE], [1, 2], c=[1])).status == "infeasible"
    assert solve_lp(LPProblem([[1.0, -1.0]], [LE], [1], c=[1, 1], sense="max")).status == "unbounded"


def test_feasibility_only_and_lower_bounds():
    out = solve_lp(LPProblem([[1, 1]], [EQ], [3], sense=None, lower=[1, 1]))
    assert out.status == "optimal"
    assert out.x.sum() == pytest.approx(3)
    assert np.all(out.x >= 1 - 1e-12)


def test_negative_rhs_rows():
    out = solve_lp(LPProblem([[-1, -1]], [LE], [-2], c=[1, 2]))
    assert out.objective == pytest.approx(2)
    assert out.duals[0] == pytest.approx(-1)


def test_bad_problem_shapes():
    with pytest.raises(ValueError):
        LPProblem([[1, 2]], [LE, LE], [1])
    with pytest.raises(ValueError):
        LPProblem([[1, 2]], ["<"], [1])
    with pytest.raises(ValueError):
        LPProblem([[1, np.inf]], [LE], [1])


@pytest.mark.parametrize("seed", range(40))
def test_random_lps_match_highs(seed):
    rng = np.random.default_rng(seed)
    nrow, ncol = int(rng.integers(1, 6)), int(rng.integers(1, 7))
    A = rng.integers(-3, 4, (nrow, ncol)).astype(float)
    b = rng.integers(-2, 6, nrow).astype(float)
    rel = [rng.choice([LE, GE, EQ], p=[0.5, 0.3, 0.2]) for _ in range(nrow)]
    c = rng.integers(0, 5, ncol).astype(float)  # min c.x with c >= 0 and x >= 0 is never unbounded
    out = solve_lp(LPProblem(A, rel, b, c=c))
    ub = [(A[i], b[i]) if r == LE else (-A[i], -b[i]) for i, r in enumerate(rel) if r != EQ]
    eq = [(A[i], b[i]) for i, r in enumerate(rel) if r == EQ]
    ref = linprog(
        c,
        A_ub=np.array([u[0] for u in ub]) if ub else None,
        b_ub=np.array([u[1] for u in ub]) if ub else None,
        A_eq=np.array([e[0] for e in eq]) if eq else None,
        b_eq=np.array([e[1] for e in eq]) if eq else None,
        method="highs",
    )
    if ref.status == 2:
        assert out.status == "infeasible"
        return
    assert out.status == "optimal"
    assert out.objective == pytest.approx(ref.fun, abs=1e-7)
    p = LPProblem(A, rel, b, c=c)
    assert constraint_residual(p, out.x) <= 1e-7
    # strong duality on the posed rows
    assert out.duals @ b == pytest.approx(out.objective, abs=1e-7)


def test_duals_match_highs_marginals():
    rng = np.random.default_rng(3)
    A = rng.random((4, 6))
    b = np.ones(4)
    c = -rng.random(6)
    out = solve_lp(LPProblem(A, [LE] * 4, b, c=c))
    ref = linprog(c, A_ub=A, b_ub=b, method="highs")
    assert np.allclose(out.duals, ref.ineqlin.marginals, atol=1e-8)
