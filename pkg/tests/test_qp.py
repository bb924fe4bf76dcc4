import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexcap.qp import (
    QpError, QpProblem, QpStatus, dual_objective, dump_problem, kkt_residuals,
    solve,
)
from oracles import lp_vertex_minimum, qp_projected_gradient


def make_feasible_lp(rng, n, m_eq=0, m_in=3):
    """Random LP guaranteed feasible and box-bounded."""
    x0 = rng.uniform(-1, 1, n)
    a_eq = rng.standard_normal((m_eq, n)) if m_eq else None
    b_eq = a_eq @ x0 if m_eq else None
    a_in = rng.standard_normal((m_in, n)) if m_in else None
    b_in = a_in @ x0 + rng.uniform(0.05, 1.0, m_in) if m_in else None
    lb = x0 - rng.uniform(0.5, 2.0, n)
    ub = x0 + rng.uniform(0.5, 2.0, n)
    c = rng.standard_normal(n)
    return QpProblem(c=c, a_eq=a_eq, b_eq=b_eq, a_in=a_in, b_in=b_in, lb=lb, ub=ub)


def make_feasible_qp(rng, n, m_eq=0, m_in=3, definite=True):
    p = make_feasible_lp(rng, n, m_eq, m_in)
    f = rng.standard_normal((n, n)) / np.sqrt(n)
    q = f @ f.T
    if definite:
        q += 0.1 * np.eye(n)
    p.q = q
    return p


class TestHandExamples:
    def test_min_xsq_above_one(self):
        # min x^2 s.t. x >= 1: KKT by hand gives x*=1, dual 2x = 2
        p = QpProblem(c=[0.0], q=[[2.0]], a_in=[[-1.0]], b_in=[-1.0])
        sol = solve(p)
        assert sol.optimal
        assert sol.x[0] == pytest.approx(1.0, abs=1e-8)
        assert sol.y_in[0] == pytest.approx(2.0, abs=1e-7)

    def test_unconstrained_parabola(self):
        # min (x-3)^2 -> x*=3, objective 0
        p = QpProblem(c=[-6.0], q=[[2.0]], c0=9.0)
        sol = solve(p)
        assert sol.optimal
        assert sol.x[0] == pytest.approx(3.0, abs=1e-8)
        assert sol.objective == pytest.approx(0.0, abs=1e-10)

    def test_equality_qp(self):
        # min x^2 + y^2 s.t. x + y = 2 -> (1, 1)
        p = QpProblem(c=[0.0, 0.0], q=2 * np.eye(2), a_eq=[[1.0, 1.0]], b_eq=[2.0])
        sol = solve(p)
        assert sol.optimal
        np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-8)
        assert sol.y_eq[0] == pytest.approx(-2.0, abs=1e-7)


class TestOracleAgreement:
    def test_random_lp_vs_vertex_enumeration(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            p = make_feasible_lp(rng, 5, m_eq=trial % 2, m_in=3)
            sol = solve(p)
            assert sol.optimal
            obj, _ = lp_vertex_minimum(p)
            assert sol.objective == pytest.approx(obj, abs=1e-6)

    def test_random_qp_vs_projected_gradient(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            p = make_feasible_qp(rng, 6, m_eq=0, m_in=4)
            sol = solve(p)
            assert sol.optimal
            x_ref = qp_projected_gradient(p)
            assert sol.objective == pytest.approx(p.objective(x_ref), abs=1e-5)
            np.testing.assert_allclose(sol.x, x_ref, atol=1e-4)


class TestKktResiduals:
    def test_optimal_point_clean(self):
        p = QpProblem(c=[0.0], q=[[2.0]], a_in=[[-1.0]], b_in=[-1.0])
        res = kkt_residuals(p, [1.0], [], [2.0])
        assert res.worst <= 1e-10

    def test_perturbed_point_reports_gradient(self):
        # x = 1.1 with dual 2: stationarity residual |2x - y| = 0.2
        p = QpProblem(c=[0.0], q=[[2.0]], a_in=[[-1.0]], b_in=[-1.0])
        res = kkt_residuals(p, [1.1], [], [2.0])
        assert res.stationarity == pytest.approx(0.2, abs=1e-12)

    def test_zero_duals_fail_certificate(self):
        p = QpProblem(c=[0.0], q=[[2.0]], a_in=[[-1.0]], b_in=[-1.0])
        res = kkt_residuals(p, [1.0], [], [0.0])
        assert res.stationarity > 1.0


class TestStatuses:
    def test_infeasible_box(self):
        # x >= 1 and x <= 0 cannot hold
        p = QpProblem(c=[1.0], a_in=[[-1.0], [1.0]], b_in=[-1.0, 0.0])
        sol = solve(p)
        assert sol.status is QpStatus.INFEASIBLE

    def test_unbounded_lp(self):
        p = QpProblem(c=[-1.0], lb=[0.0])
        sol = solve(p)
        assert sol.status is QpStatus.UNBOUNDED

    def test_empty_row_infeasible(self):
        p = QpProblem(c=[1.0], a_eq=[[0.0]], b_eq=[3.0], lb=[0.0], ub=[1.0])
        sol = solve(p)
        assert sol.status is QpStatus.INFEASIBLE

    def test_fixed_variables_presolved(self):
        p = QpProblem(c=[1.0, 1.0], lb=[2.0, 0.0], ub=[2.0, 5.0],
                      a_in=[[-1.0, -1.0]], b_in=[-3.0])
        sol = solve(p)
        assert sol.optimal
        np.testing.assert_allclose(sol.x, [2.0, 1.0], atol=1e-7)
        assert kkt_residuals(p, sol.x, sol.y_eq, sol.y_in, sol.z_lo, sol.z_up).worst <= 1e-6

    def test_all_fixed(self):
        p = QpProblem(c=[1.0], lb=[4.0], ub=[4.0])
        sol = solve(p)
        assert sol.optimal
        assert sol.x[0] == 4.0


class TestValidation:
    def test_indefinite_q_rejected(self):
        p = QpProblem(c=[0.0, 0.0], q=[[1.0, 0.0], [0.0, -1.0]])
        with pytest.raises(QpError, match="semidefinite"):
            solve(p)

    def test_asymmetric_q_rejected(self):
        p = QpProblem(c=[0.0, 0.0], q=[[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(QpError, match="symmetric"):
            solve(p)

    def test_dimension_mismatch(self):
        p = QpProblem(c=[0.0, 0.0], a_eq=[[1.0]], b_eq=[1.0])
        with pytest.raises(QpError):
            solve(p)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_kkt_certificate_property(seed):
    """Optimal returns certify: residuals and duality gap within 10*tol."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 16))
    p = make_feasible_qp(rng, n, m_eq=int(rng.integers(0, 3)),
                         m_in=int(rng.integers(0, 5)), definite=bool(rng.integers(0, 2)))
    sol = solve(p, tol=1e-8)
    assert sol.optimal
    res = kkt_residuals(p, sol.x, sol.y_eq, sol.y_in, sol.z_lo, sol.z_up)
    scale = 10 * 1e-8 * (1 + abs(sol.objective) + np.abs(p.c).max() + np.abs(p.q).max())
    assert res.worst <= scale
    assert abs(sol.objective - dual_objective(p, sol)) <= scale


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 50.0))
def test_scaling_invariance(seed, gamma):
    """Scaling (Q, c) by gamma > 0 keeps x* and scales duals by gamma."""
    rng = np.random.default_rng(seed)
    p = make_feasible_qp(rng, 5, m_in=3)
    sol = solve(p)
    p2 = QpProblem(c=gamma * p.c, q=gamma * p.q, a_in=p.a_in, b_in=p.b_in,
                   lb=p.lb, ub=p.ub)
    sol2 = solve(p2)
    assert sol.optimal and sol2.optimal
    np.testing.assert_allclose(sol2.x, sol.x, atol=1e-5)
    np.testing.assert_allclose(sol2.y_in, gamma * sol.y_in, atol=1e-5 * gamma)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_lp_special_case_vs_oracle(seed):
    """LP (Q = 0) agrees with the vertex-enumeration oracle up to n = 8."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    p = make_feasible_lp(rng, n, m_eq=int(rng.integers(0, 2)), m_in=3)
    sol = solve(p)
    assert sol.optimal
    best = lp_vertex_minimum(p)
    assert best is not None
    assert sol.objective == pytest.approx(best[0], abs=2e-6)


def test_dump_problem_smoke(tmp_path):
    p = QpProblem(c=[1.0, -1.0], q=np.eye(2), a_eq=[[1.0, 1.0]], b_eq=[1.0],
                  a_in=[[1.0, 0.0]], b_in=[0.5], lb=[0.0, 0.0], ub=[1.0, 1.0])
    path = tmp_path / "dump.txt"
    dump_problem(p, path)
    text = path.read_text()
    assert "n 2" in text and "Q" in text and "eq 1" in text
