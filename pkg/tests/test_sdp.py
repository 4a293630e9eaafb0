"""Interior-point solver: documented examples, residual recomputation,
duality/determinism/scale-invariance properties, and random feasible
instances built around known solutions.
"""

import numpy as np
import pytest
import scipy.linalg as sla

from zenocert.sdp import (
    SdpOptions,
    SdpProblem,
    SdpProblemBuilder,
    SdpStatus,
    dump_problem,
    parse_dump,
    residuals,
    solve,
    verify_farkas_ray,
)


def _min_x_problem():
    # minimize x over {x PSD 1x1, x = 1}
    b = SdpProblemBuilder([1])
    row = b.new_constraint(1.0)
    b.set_entry(row, 0, 0, 0, 1.0)
    b.set_objective_entry(0, 0, 0, 1.0)
    return b.build()


def _infeasible_2x2():
    # X PSD 2x2 with X11 = 1, X22 = 1, X12 = 2: violates |X12| <= 1.
    b = SdpProblemBuilder([2])
    r = b.new_constraint(1.0)
    b.set_entry(r, 0, 0, 0, 1.0)
    r = b.new_constraint(1.0)
    b.set_entry(r, 0, 1, 1, 1.0)
    r = b.new_constraint(2.0)
    b.set_entry(r, 0, 0, 1, 1.0)
    return b.build()


def _trace_problem():
    # minimize trace(X): X11 + X22 + 2 X12 = 2, X11 - X22 = 0.
    b = SdpProblemBuilder([2])
    r = b.new_constraint(2.0)
    b.set_entry(r, 0, 0, 0, 1.0)
    b.set_entry(r, 0, 1, 1, 1.0)
    b.set_entry(r, 0, 0, 1, 2.0)
    r = b.new_constraint(0.0)
    b.set_entry(r, 0, 0, 0, 1.0)
    b.set_entry(r, 0, 1, 1, -1.0)
    b.add_trace_objective(1.0)
    return b.build()


def _trace_problem_bruteforce():
    # Independent oracle: X = [[t, s], [s, t]] PSD needs t >= |s|; the
    # constraint gives s = 1 - t, so scan t on a grid for the minimum trace.
    ts = np.linspace(0.0, 2.0, 200001)
    best = np.inf
    best_t = None
    for t in ts:
        s = 1.0 - t
        if t >= abs(s):
            if 2 * t < best:
                best, best_t = 2 * t, t
    return best, best_t


def test_minimize_single_scalar():
    sol = solve(_min_x_problem())
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.X[0][0, 0] == pytest.approx(1.0, abs=1e-7)


def test_infeasible_2x2_certificate():
    prob = _infeasible_2x2()
    sol = solve(prob)
    assert sol.status is SdpStatus.INFEASIBLE_CERTIFICATE
    # Independent recomputation of the improving-ray inequality.
    ok, report = verify_farkas_ray(prob, sol.y)
    assert ok, report


def test_trace_minimization_matches_bruteforce():
    expected, t_star = _trace_problem_bruteforce()
    assert expected == pytest.approx(1.0, abs=1e-4)
    assert t_star == pytest.approx(0.5, abs=1e-4)
    sol = solve(_trace_problem())
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.primal_objective == pytest.approx(expected, abs=1e-6)
    assert np.allclose(sol.X[0], [[0.5, 0.5], [0.5, 0.5]], atol=1e-6)


def test_residuals_of_analytic_solution():
    prob = _trace_problem()
    sol = solve(prob)
    # Exact analytic solution and multipliers: X = [[.5,.5],[.5,.5]],
    # y = (0.5, 0), S = C - A^T(y) = [[.5,-.5],[-.5,.5]].
    sol.X = [np.array([[0.5, 0.5], [0.5, 0.5]])]
    sol.y = np.array([0.5, 0.0])
    sol.S = [np.array([[0.5, -0.5], [-0.5, 0.5]])]
    rp, rd, gap = residuals(prob, sol)
    assert rp <= 1e-10
    assert rd <= 1e-10
    assert gap <= 1e-10


def test_residuals_zero_X_gives_norm_b():
    prob = _trace_problem()
    sol = solve(prob)
    sol.X = [np.zeros((2, 2))]
    sol.u = np.zeros(0)
    rp, _, _ = residuals(prob, sol)
    assert rp == pytest.approx(np.linalg.norm(prob.b))


def test_gap_perturbation_first_order():
    prob = _trace_problem()
    sol = solve(prob)
    _, _, gap0 = residuals(prob, sol)
    trace_S = float(np.trace(sol.S[0]))
    delta = 1e-4
    sol.X = [sol.X[0] + delta * np.eye(2)]
    _, _, gap1 = residuals(prob, sol)
    assert gap1 - gap0 == pytest.approx(delta * trace_S, rel=1e-6)


def test_weak_duality_and_determinism():
    probs = [_min_x_problem(), _trace_problem()]
    for prob in probs:
        s1 = solve(prob)
        s2 = solve(prob)
        assert s1.status is SdpStatus.OPTIMAL
        # Weak duality up to the termination tolerance.
        assert s1.primal_objective >= s1.dual_objective - 1e-8 * (
            1 + abs(s1.primal_objective)
        )
        # Bitwise determinism of the iterate sequence.
        assert s1.iterations == s2.iterations
        assert np.array_equal(s1.X[0], s2.X[0])
        assert np.array_equal(s1.y, s2.y)


def _scale_rows(prob: SdpProblem, factor: float) -> SdpProblem:
    A = [factor * Ab for Ab in prob.A]
    F = factor * prob.F
    return SdpProblem(
        prob.block_sizes, prob.free_count, A, F, factor * prob.b, prob.C,
        prob.c_free,
    )


def test_scale_invariance_of_status():
    for make in (_min_x_problem, _infeasible_2x2, _trace_problem):
        base = solve(make())
        scaled = solve(_scale_rows(make(), 10.0))
        assert base.status is scaled.status


def _random_feasible_problem(rng, nblocks=2, m=6, nf=2):
    sizes = [int(rng.integers(2, 5)) for _ in range(nblocks)]
    builder = SdpProblemBuilder(sizes, free_count=nf)
    # Choose a strictly feasible primal-dual pair and derive consistent data.
    X_star, S_star = [], []
    for n in sizes:
        Gx = rng.normal(size=(n, n))
        X_star.append(Gx @ Gx.T + 0.5 * np.eye(n))
        Gs = rng.normal(size=(n, n))
        S_star.append(Gs @ Gs.T + 0.5 * np.eye(n))
    u_star = rng.normal(size=nf)
    y_star = rng.normal(size=m)
    A_mats = []
    Fmat = rng.normal(size=(m, nf))
    for i in range(m):
        row_mats = []
        for n in sizes:
            Ai = rng.normal(size=(n, n))
            row_mats.append(0.5 * (Ai + Ai.T))
        A_mats.append(row_mats)
    for i in range(m):
        rhs = sum(float(np.sum(A_mats[i][b] * X_star[b])) for b in range(nblocks))
        rhs += float(Fmat[i] @ u_star)
        row = builder.new_constraint(rhs)
        for b, n in enumerate(sizes):
            for p in range(n):
                for q in range(p, n):
                    v = A_mats[i][b][p, q]
                    builder.set_entry(row, b, p, q, v if p == q else 2.0 * v)
        for k in range(nf):
            builder.set_free(row, k, float(Fmat[i, k]))
    # C = A^T(y*) + S*, c_f = F^T y*: strong duality holds at (X*, u*, y*, S*).
    for b, n in enumerate(sizes):
        Cb = S_star[b] + sum(y_star[i] * A_mats[i][b] for i in range(m))
        for p in range(n):
            for q in range(p, n):
                v = Cb[p, q]
                builder.set_objective_entry(b, p, q, v if p == q else 2.0 * v)
    cf = Fmat.T @ y_star
    for k in range(nf):
        builder.set_objective_free(k, float(cf[k]))
    return builder.build()


def test_random_feasible_problems_reach_optimal():
    rng = np.random.default_rng(2718)
    for trial in range(50):
        prob = _random_feasible_problem(rng)
        sol = solve(prob)
        assert sol.status is SdpStatus.OPTIMAL, f"trial {trial}: {sol.status}"
        assert sol.duality_gap <= 1e-7
        for Xb in sol.X:
            assert float(sla.eigvalsh(Xb)[0]) >= -1e-9


def test_optimal_invariants_on_regression_set():
    for make in (_min_x_problem, _trace_problem):
        sol = solve(make())
        assert sol.status is SdpStatus.OPTIMAL
        assert sol.primal_residual <= 1e-8
        assert sol.dual_residual <= 1e-8
        assert sol.duality_gap <= 1e-8
        for Xb in sol.X:
            assert float(sla.eigvalsh(Xb)[0]) >= -1e-9


def test_dump_round_trip():
    prob = _trace_problem()
    text = dump_problem(prob)
    again = parse_dump(text)
    assert again.block_sizes == prob.block_sizes
    assert np.array_equal(again.b, prob.b)
    for blk in range(len(prob.block_sizes)):
        assert np.allclose(
            again.A[blk].toarray(), prob.A[blk].toarray(), atol=0, rtol=0
        )
        assert np.allclose(again.C[blk], prob.C[blk], atol=0, rtol=0)
    s1, s2 = solve(prob), solve(again)
    assert s1.status is s2.status
    assert s1.primal_objective == pytest.approx(s2.primal_objective, abs=1e-12)
