"""Dense convex quadratic programming with primal and dual recovery.

Solves
    min  0.5 x'Qx + c'x + c0
    s.t. A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub

with a Mehrotra-style primal-dual interior-point method. Q may be zero
(LP). Duals are reported with signs such that the Lagrangian is

    L = f(x) + y_eq'(A_eq x - b_eq) + y_in'(A_in x - b_in)
        - z_lo'(x - lb) + z_up'(x - ub)

so y_in, z_lo, z_up >= 0 at an optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as sla


class QpError(ValueError):
    """Problem data fails validation (dimensions, symmetry, PSD floor)."""


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"


class KktResiduals(NamedTuple):
    stationarity: float
    primal: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


def _as2d(a, n_cols):
    if a is None:
        return np.zeros((0, n_cols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return a


@dataclass
class QpProblem:
    """Dense QP data. Q=None means LP. Infinite bounds allowed."""

    c: np.ndarray
    q: Optional[np.ndarray] = None
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    a_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    c0: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.n
        self.a_eq = _as2d(self.a_eq, n)
        self.a_in = _as2d(self.a_in, n)
        self.b_eq = (np.zeros(0) if self.b_eq is None
                     else np.asarray(self.b_eq, dtype=float).ravel())
        self.b_in = (np.zeros(0) if self.b_in is None
                     else np.asarray(self.b_in, dtype=float).ravel())
        self.lb = (np.full(n, -np.inf) if self.lb is None
                   else np.asarray(self.lb, dtype=float).ravel())
        self.ub = (np.full(n, np.inf) if self.ub is None
                   else np.asarray(self.ub, dtype=float).ravel())
        if self.q is not None:
            self.q = np.asarray(self.q, dtype=float)

    @property
    def n(self) -> int:
        return self.c.size

    def validate(self):
        n = self.n
        if self.a_eq.shape[1] != n or self.a_in.shape[1] != n:
            raise QpError("constraint matrix width does not match variable count")
        if self.a_eq.shape[0] != self.b_eq.size:
            raise QpError("a_eq/b_eq row mismatch")
        if self.a_in.shape[0] != self.b_in.size:
            raise QpError("a_in/b_in row mismatch")
        if self.lb.size != n or self.ub.size != n:
            raise QpError("bound vectors must have length n")
        if np.any(self.lb > self.ub + 1e-12):
            bad = int(np.argmax(self.lb - self.ub))
            raise QpError(f"lb > ub at variable {bad}")
        if self.q is not None:
            if self.q.shape != (n, n):
                raise QpError("Q must be n-by-n")
            qnorm = np.abs(self.q).max() if n else 0.0
            if qnorm > 0:
                asym = np.abs(self.q - self.q.T).max()
                if asym > 1e-9 * max(1.0, qnorm):
                    raise QpError(f"Q is not symmetric (max asymmetry {asym:.3e})")
                qs = 0.5 * (self.q + self.q.T)
                floor = -1e-8 * qnorm
                try:
                    np.linalg.cholesky(qs + (-floor) * np.eye(n))
                except np.linalg.LinAlgError:
                    lo = float(np.linalg.eigvalsh(qs)[0])
                    if lo < floor:
                        raise QpError(
                            f"Q is not positive semidefinite: lambda_min={lo:.3e} "
                            f"below floor {floor:.3e}") from None
                self.q = qs

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x) + self.c0
        if self.q is not None:
            val += 0.5 * float(x @ (self.q @ x))
        return val

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = self.c.copy()
        if self.q is not None:
            g += self.q @ x
        return g


@dataclass
class QpSolution:
    status: QpStatus
    x: np.ndarray
    y_eq: np.ndarray
    y_in: np.ndarray
    z_lo: np.ndarray
    z_up: np.ndarray
    objective: float
    residuals: KktResiduals
    gap: float
    iterations: int
    message: str = ""
    rel_residual: float = np.inf   # worst KKT block relative to problem scale

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def acceptable(sol: "QpSolution", rel: float = 1e-6) -> bool:
    """True when the solve is optimal or its scaled KKT residual is small
    enough to use anyway (degenerate instances can stall just short of the
    optimality tolerance)."""
    return sol.status is QpStatus.OPTIMAL or sol.rel_residual <= rel


def kkt_residuals(problem: QpProblem, x, y_eq, y_in, z_lo=None, z_up=None) -> KktResiduals:
    """Infinity-norm KKT residual blocks at an arbitrary primal/dual point.

    Pure function; usable as an external certificate check independent of
    how the point was produced.
    """
    x = np.asarray(x, dtype=float).ravel()
    y_eq = np.asarray(y_eq, dtype=float).ravel()
    y_in = np.asarray(y_in, dtype=float).ravel()
    n = problem.n
    z_lo = np.zeros(n) if z_lo is None else np.asarray(z_lo, dtype=float).ravel()
    z_up = np.zeros(n) if z_up is None else np.asarray(z_up, dtype=float).ravel()

    grad = problem.grad(x)
    if y_eq.size:
        grad += problem.a_eq.T @ y_eq
    if y_in.size:
        grad += problem.a_in.T @ y_in
    grad -= z_lo
    grad += z_up
    stat = float(np.abs(grad).max()) if n else 0.0

    prim = 0.0
    if y_eq.size:
        prim = max(prim, float(np.abs(problem.a_eq @ x - problem.b_eq).max()))
    if y_in.size:
        prim = max(prim, float(np.maximum(problem.a_in @ x - problem.b_in, 0.0).max()))
    finite_lo = np.isfinite(problem.lb)
    finite_up = np.isfinite(problem.ub)
    if finite_lo.any():
        prim = max(prim, float(np.maximum(problem.lb[finite_lo] - x[finite_lo], 0.0).max()))
    if finite_up.any():
        prim = max(prim, float(np.maximum(x[finite_up] - problem.ub[finite_up], 0.0).max()))

    comp = 0.0
    if y_in.size:
        comp = max(comp, float(np.abs(y_in * (problem.b_in - problem.a_in @ x)).max()))
    if finite_lo.any():
        comp = max(comp, float(np.abs(z_lo[finite_lo] * (x - problem.lb)[finite_lo]).max()))
    if finite_up.any():
        comp = max(comp, float(np.abs(z_up[finite_up] * (problem.ub - x)[finite_up]).max()))
    return KktResiduals(stat, prim, comp)


# ----------------------------------------------------------------------
# presolve: strip fixed variables (lb == ub) and empty rows, nothing more


@dataclass
class _Presolve:
    keep: np.ndarray            # indices of free variables
    fixed: np.ndarray           # indices of fixed variables
    fixed_vals: np.ndarray
    eq_rows: np.ndarray         # kept equality row indices
    in_rows: np.ndarray         # kept inequality row indices
    n_orig: int


def _presolve(p: QpProblem):
    fixed_mask = np.isfinite(p.lb) & np.isfinite(p.ub) & (p.ub - p.lb <= 1e-14)
    keep = np.where(~fixed_mask)[0]
    fixed = np.where(fixed_mask)[0]
    xf = 0.5 * (p.lb[fixed] + p.ub[fixed])

    b_eq = p.b_eq - (p.a_eq[:, fixed] @ xf if fixed.size else 0.0)
    b_in = p.b_in - (p.a_in[:, fixed] @ xf if fixed.size else 0.0)
    a_eq = p.a_eq[:, keep]
    a_in = p.a_in[:, keep]

    eq_nonzero = (np.abs(a_eq).max(axis=1) > 0) if a_eq.shape[0] else np.zeros(0, bool)
    in_nonzero = (np.abs(a_in).max(axis=1) > 0) if a_in.shape[0] else np.zeros(0, bool)
    # empty rows must be trivially satisfiable
    bad_eq = np.where(~eq_nonzero & (np.abs(b_eq) > 1e-9))[0]
    bad_in = np.where(~in_nonzero & (b_in < -1e-9))[0]
    if bad_eq.size or bad_in.size:
        return None, _Presolve(keep, fixed, xf, np.zeros(0, int), np.zeros(0, int), p.n)

    eq_rows = np.where(eq_nonzero)[0]
    in_rows = np.where(in_nonzero)[0]

    c = p.c[keep].copy()
    q = None
    c0 = p.c0 + float(p.c[fixed] @ xf)
    if p.q is not None:
        q = p.q[np.ix_(keep, keep)]
        if fixed.size:
            c += p.q[np.ix_(keep, fixed)] @ xf
            c0 += 0.5 * float(xf @ (p.q[np.ix_(fixed, fixed)] @ xf))
    red = QpProblem(c=c, q=q,
                    a_eq=a_eq[eq_rows], b_eq=b_eq[eq_rows],
                    a_in=a_in[in_rows], b_in=b_in[in_rows],
                    lb=p.lb[keep], ub=p.ub[keep], c0=c0)
    return red, _Presolve(keep, fixed, xf, eq_rows, in_rows, p.n)


# ----------------------------------------------------------------------
# core interior-point iteration on the slack form
#   min 0.5 x'Qx + c'x  s.t.  A x = b,  G x + s = h,  s >= 0


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _solve_reduced(q, a, g, w, rhs_x, rhs_y, factor_cache):
    import warnings as _warnings

    n = rhs_x.size
    m_eq = rhs_y.size
    if factor_cache.get("key") != "ready":
        kkt = np.zeros((n + m_eq, n + m_eq))
        h = q.copy() if q is not None else np.zeros((n, n))
        if g.shape[0]:
            h += (g.T * w) @ g
        kkt[:n, :n] = h
        if m_eq:
            kkt[:n, n:] = a.T
            kkt[n:, :n] = a
        factor_cache.update(key="ready", kkt=kkt, lu=None,
                            reg=factor_cache.get("reg", 0.0))
    kkt = factor_cache["kkt"]
    rhs = np.concatenate([rhs_x, rhs_y])
    scale = 1.0 + float(np.abs(rhs).max())
    for _ in range(8):
        if factor_cache["lu"] is None:
            reg = factor_cache["reg"]
            kkt_r = kkt
            if reg > 0:
                kkt_r = kkt.copy()
                kkt_r[:n, :n] += reg * np.eye(n)
                if m_eq:
                    kkt_r[n:, n:] -= reg * np.eye(m_eq)
            try:
                with _warnings.catch_warnings():
                    _warnings.simplefilter("ignore")
                    factor_cache["lu"] = sla.lu_factor(kkt_r, check_finite=False)
                factor_cache["kkt_r"] = kkt_r
            except (np.linalg.LinAlgError, ValueError):
                factor_cache["lu"] = None
                factor_cache["reg"] = max(reg * 100, 1e-11)
                continue
        with _warnings.catch_warnings(), np.errstate(all="ignore"):
            _warnings.simplefilter("ignore")
            sol = sla.lu_solve(factor_cache["lu"], rhs, check_finite=False)
            if np.all(np.isfinite(sol)):
                resid = np.abs(factor_cache["kkt_r"] @ sol - rhs).max()
                if resid <= 1e-6 * scale * (1.0 + np.abs(sol).max()):
                    return sol[:n], sol[n:]
        factor_cache["lu"] = None
        factor_cache["reg"] = max(factor_cache["reg"] * 100, 1e-11)
    raise np.linalg.LinAlgError("KKT factorization failed")


def _polish(q, c, a, b, g, h, x, z):
    """Active-set refinement of a near-optimal interior-point iterate.

    Primal: equality-solve the KKT system on the constraints classified as
    tight, growing the set until nothing is violated. Dual: degenerate
    vertices leave the KKT multipliers sign-indefinite, so recover a
    nonnegative multiplier vector by NNLS on the stationarity condition.
    Returns (x, y, z) or None when no valid active set is found.
    """
    from scipy.optimize import nnls

    n, m_eq, m = c.size, b.size, h.size
    s = h - g @ x
    s_scale = 1.0 + float(np.abs(s).mean())
    z_scale = 1.0 + float(np.abs(z).mean())
    tight = (z / z_scale) > (s / s_scale)
    feas_tol = 1e-7 * (1.0 + (np.abs(h).max() if m else 0.0))

    x2 = y2 = None
    for _ in range(8):
        nt = int(tight.sum())
        gt = g[tight]
        size = n + m_eq + nt
        kkt = np.zeros((size, size))
        if q is not None:
            kkt[:n, :n] = q
        if m_eq:
            kkt[:n, n:n + m_eq] = a.T
            kkt[n:n + m_eq, :n] = a
        if nt:
            kkt[:n, n + m_eq:] = gt.T
            kkt[n + m_eq:, :n] = gt
        rhs = np.concatenate([-c, b, h[tight]])
        try:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        except np.linalg.LinAlgError:
            return None
        x2 = sol[:n]
        y2 = sol[n:n + m_eq]
        slack2 = h - g @ x2 if m else np.zeros(0)
        violated = slack2 < -feas_tol
        if not violated.any():
            break
        grew = violated & ~tight
        if not grew.any():
            return None
        tight = tight | violated
    else:
        return None

    # nonnegative multipliers on the tight rows: free equality duals are
    # split into positive and negative parts for the NNLS call
    nt = int(tight.sum())
    rhs_d = -(c + (q @ x2 if q is not None else 0.0))
    cols = []
    if nt:
        cols.append(g[tight].T)
    if m_eq:
        cols.append(a.T)
        cols.append(-a.T)
    if not cols:
        z2 = np.zeros(m)
        return x2, np.zeros(0), z2
    mat = np.hstack(cols)
    try:
        mult, _ = nnls(mat, rhs_d, maxiter=10 * mat.shape[1])
    except Exception:
        return None
    zt = mult[:nt]
    if m_eq:
        y2 = mult[nt:nt + m_eq] - mult[nt + m_eq:]
    z2 = np.zeros(m)
    if nt:
        z2[tight] = zt
    return x2, y2, z2


def _worst_metric(q, c, a, b, g, h, x, y, z, scale_b, scale_c):
    rd = c + (q @ x if q is not None else 0.0)
    if b.size:
        rd = rd + a.T @ y
    if h.size:
        rd = rd + g.T @ z
    prim = np.abs(a @ x - b).max() if b.size else 0.0
    s = h - g @ x if h.size else np.zeros(0)
    if h.size:
        prim = max(prim, float(np.maximum(-s, 0.0).max()))
    obj = float(c @ x) + (0.5 * float(x @ (q @ x)) if q is not None else 0.0)
    comp = float(np.abs(s * z).sum()) if h.size else 0.0
    return max(prim / scale_b, np.abs(rd).max() / scale_c,
               comp / (1.0 + abs(obj)))


def _ipm(q, c, a, b, g, h, tol, max_iter):
    """Returns (status, x, y, z, iterations, message). z are duals of Gx<=h."""
    n = c.size
    m_eq = b.size
    m = h.size

    if m == 0:
        # equality-constrained QP: one linear solve
        kkt = np.zeros((n + m_eq, n + m_eq))
        if q is not None:
            kkt[:n, :n] = q
        if m_eq:
            kkt[:n, n:] = a.T
            kkt[n:, :n] = a
        rhs = np.concatenate([-c, b])
        try:
            sol = np.linalg.solve(kkt, rhs)
            x, y = sol[:n], sol[n:]
            return QpStatus.OPTIMAL, x, y, np.zeros(0), 1, "", 0.0
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            x, y = sol[:n], sol[n:]
            if m_eq and np.abs(a @ x - b).max() > 1e-7 * (1 + np.abs(b).max()):
                return (QpStatus.INFEASIBLE, x, y, np.zeros(0), 1,
                        "inconsistent equalities", np.inf)
            grad = c + (q @ x if q is not None else 0.0) + (a.T @ y if m_eq else 0.0)
            if np.abs(grad).max() > 1e-7 * (1 + np.abs(c).max()):
                return QpStatus.UNBOUNDED, x, y, np.zeros(0), 1, "descent ray", np.inf
            return QpStatus.OPTIMAL, x, y, np.zeros(0), 1, "", 0.0

    scale_b = 1.0 + max(np.abs(b).max() if m_eq else 0.0, np.abs(h).max() if m else 0.0)
    scale_c = 1.0 + np.abs(c).max() + (np.abs(q).max() if q is not None else 0.0)

    # Mehrotra-style start: Newton step with unit weights, then shift both
    # primal slacks and duals to an interior point balanced with the data
    cache: dict = {}
    try:
        x, y = _solve_reduced(q, a, g, np.ones(m), g.T @ h - c, b, cache)
    except np.linalg.LinAlgError:
        x, y = np.zeros(n), np.zeros(m_eq)
    s = h - g @ x
    shift = max(0.0, -1.5 * float(s.min())) + 0.1 * max(1.0, float(np.abs(s).max()))
    s = s + shift
    z = np.full(m, max(1.0, float(np.abs(c).mean())))

    best = None
    stall = 0
    no_better = 0
    it = 0
    prev_prim = np.inf
    for it in range(1, max_iter + 1):
        rd = c + (q @ x if q is not None else 0.0)
        if m_eq:
            rd = rd + a.T @ y
        rd = rd + g.T @ z
        rp = (a @ x - b) if m_eq else np.zeros(0)
        rg = g @ x + s - h
        mu = float(s @ z) / m

        prim = max(np.abs(rp).max() if m_eq else 0.0, np.abs(rg).max())
        dual = np.abs(rd).max()
        obj = float(c @ x) + (0.5 * float(x @ (q @ x)) if q is not None else 0.0)
        comp = float(s @ z)
        worst = max(prim / scale_b, dual / scale_c, comp / (1.0 + abs(obj)))
        if best is None or worst < 0.7 * best[0]:
            best = (worst, x.copy(), y.copy(), z.copy())
            no_better = 0
        else:
            no_better += 1

        if (prim <= tol * scale_b and dual <= tol * scale_c
                and comp <= tol * (1.0 + abs(obj))):
            return QpStatus.OPTIMAL, x, y, z, it, "", worst
        if no_better >= 12:
            break      # stalled (typically degeneracy); try an active-set polish

        dual_scale = max(np.abs(z).max(), np.abs(y).max() if m_eq else 0.0)
        if dual_scale > 1e13 * scale_c and prim > 1e-7 * scale_b:
            return QpStatus.INFEASIBLE, x, y, z, it, "dual iterates diverged", worst
        if mu < 1e-14 * (1 + abs(obj)) and prim > 1e-6 * scale_b:
            return (QpStatus.INFEASIBLE, x, y, z, it,
                    "gap closed with primal residual", worst)
        if np.abs(x).max() > 1e13 * scale_b and dual < 1e-6 * scale_c:
            return QpStatus.UNBOUNDED, x, y, z, it, "primal iterates diverged", worst
        if obj < -1e15 * scale_c * scale_b:
            return QpStatus.UNBOUNDED, x, y, z, it, "objective diverging", worst

        reg_memory = cache.get("reg", 0.0)
        cache.clear()
        cache["reg"] = reg_memory
        w = z / s
        try:
            # affine-scaling predictor
            r_c = s * z
            rhs_x = -rd - g.T @ (w * rg - r_c / s)
            dx_a, dy_a = _solve_reduced(q, a, g, w, rhs_x, -rp, cache)
            ds_a = -rg - g @ dx_a
            dz_a = w * (g @ dx_a + rg) - r_c / s

            alpha_p = _max_step(s, ds_a)
            alpha_d = _max_step(z, dz_a)
            mu_aff = float((s + alpha_p * ds_a) @ (z + alpha_d * dz_a)) / m
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0

            # corrector with centering
            r_c = s * z + ds_a * dz_a - sigma * mu
            rhs_x = -rd - g.T @ (w * rg - r_c / s)
            dx, dy = _solve_reduced(q, a, g, w, rhs_x, -rp, cache)
            ds = -rg - g @ dx
            dz = w * (g @ dx + rg) - r_c / s
        except np.linalg.LinAlgError:
            break

        # fraction to the boundary, never letting a slack or dual hit zero
        frac = 1.0 - max(1e-3, min(0.05, mu / (1.0 + abs(obj))))
        alpha_p = min(1.0, frac * _max_step(s, ds))
        alpha_d = min(1.0, frac * _max_step(z, dz))
        for _ in range(60):
            if np.all(s + alpha_p * ds > 0):
                break
            alpha_p *= 0.9
        for _ in range(60):
            if np.all(z + alpha_d * dz > 0):
                break
            alpha_d *= 0.9
        if max(alpha_p, alpha_d) < 1e-11:
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
        x = x + alpha_p * dx
        s = s + alpha_p * ds
        if m_eq:
            y = y + alpha_d * dy
        z = z + alpha_d * dz

        if prim > 0.5 * prev_prim or prim <= tol * scale_b:
            prev_prim = max(prim, tol * scale_b)

    metric, x, y, z = best
    polished = _polish(q, c, a, b, g, h, x, z)
    if polished is not None:
        pm = _worst_metric(q, c, a, b, g, h, *polished, scale_b, scale_c)
        if pm < metric:
            metric = pm
            x, y, z = polished
    if metric <= tol:
        return QpStatus.OPTIMAL, x, y, z, it, "polished", metric
    return QpStatus.MAX_ITER, x, y, z, it, "iteration limit reached", metric


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 100) -> QpSolution:
    """Solve the QP, returning primal, duals and a KKT certificate.

    Pure function of its inputs; concurrent calls share no state.
    """
    problem.validate()
    n = problem.n

    red, pre = _presolve(problem)
    if red is None:
        empty = KktResiduals(np.inf, np.inf, np.inf)
        return QpSolution(QpStatus.INFEASIBLE, np.zeros(n), np.zeros(problem.b_eq.size),
                          np.zeros(problem.b_in.size), np.zeros(n), np.zeros(n),
                          np.nan, empty, np.nan, 0,
                          "empty constraint row with nonzero bound")

    # assemble slack form for the reduced problem
    nr = red.n
    rows = [red.a_in]
    rhs = [red.b_in]
    lo_idx = np.where(np.isfinite(red.lb))[0]
    up_idx = np.where(np.isfinite(red.ub))[0]
    if lo_idx.size:
        e = np.zeros((lo_idx.size, nr))
        e[np.arange(lo_idx.size), lo_idx] = -1.0
        rows.append(e)
        rhs.append(-red.lb[lo_idx])
    if up_idx.size:
        e = np.zeros((up_idx.size, nr))
        e[np.arange(up_idx.size), up_idx] = 1.0
        rows.append(e)
        rhs.append(red.ub[up_idx])
    g = np.vstack(rows) if rows else np.zeros((0, nr))
    h = np.concatenate(rhs) if rhs else np.zeros(0)

    status, xr, y_eq_r, z, iters, msg, rel = _ipm(
        red.q, red.c, red.a_eq, red.b_eq, g, h, tol, max_iter)

    m_in_r = red.b_in.size
    y_in_r = z[:m_in_r] if z.size else np.zeros(m_in_r)
    z_lo_r = np.zeros(nr)
    z_up_r = np.zeros(nr)
    if z.size:
        z_lo_r[lo_idx] = z[m_in_r:m_in_r + lo_idx.size]
        z_up_r[up_idx] = z[m_in_r + lo_idx.size:]

    # expand to the original variable/row spaces
    x = np.empty(problem.n)
    x[pre.keep] = xr
    x[pre.fixed] = pre.fixed_vals
    y_eq = np.zeros(problem.b_eq.size)
    y_eq[pre.eq_rows] = y_eq_r
    y_in = np.zeros(problem.b_in.size)
    y_in[pre.in_rows] = y_in_r
    z_lo = np.zeros(problem.n)
    z_up = np.zeros(problem.n)
    z_lo[pre.keep] = z_lo_r
    z_up[pre.keep] = z_up_r
    if pre.fixed.size:
        # reduced costs of fixed variables act as bound duals
        grad = problem.grad(x)
        if y_eq.size:
            grad += problem.a_eq.T @ y_eq
        if y_in.size:
            grad += problem.a_in.T @ y_in
        gf = grad[pre.fixed]
        z_lo[pre.fixed] = np.maximum(gf, 0.0)
        z_up[pre.fixed] = np.maximum(-gf, 0.0)

    res = kkt_residuals(problem, x, y_eq, y_in, z_lo, z_up)
    obj = problem.objective(x)
    dual_obj = obj - _complementarity_sum(problem, x, y_eq, y_in, z_lo, z_up)
    gap = abs(obj - dual_obj)
    return QpSolution(status, x, y_eq, y_in, z_lo, z_up, obj, res, gap, iters,
                      msg, rel)


def _complementarity_sum(p: QpProblem, x, y_eq, y_in, z_lo, z_up) -> float:
    total = 0.0
    if y_eq.size:
        total += float(y_eq @ (p.a_eq @ x - p.b_eq))
    if y_in.size:
        total += float(y_in @ (p.a_in @ x - p.b_in))
    lo = np.isfinite(p.lb)
    up = np.isfinite(p.ub)
    total -= float(z_lo[lo] @ (x - p.lb)[lo])
    total += float(z_up[up] @ (x - p.ub)[up])
    return total


def dual_objective(p: QpProblem, sol: QpSolution) -> float:
    """Lagrangian dual value at the solution's multipliers."""
    val = -sol.y_eq @ p.b_eq if sol.y_eq.size else 0.0
    if sol.y_in.size:
        val -= sol.y_in @ p.b_in
    lo = np.isfinite(p.lb)
    up = np.isfinite(p.ub)
    val += float(sol.z_lo[lo] @ p.lb[lo])
    val -= float(sol.z_up[up] @ p.ub[up])
    if p.q is not None:
        val -= 0.5 * float(sol.x @ (p.q @ sol.x))
    return float(val) + p.c0


def dump_problem(p: QpProblem, path) -> None:
    """Plain-text matrix dump for cross-checking against external solvers."""
    with open(path, "w") as fh:
        fh.write(f"n {p.n}\nc0 {p.c0!r}\n")
        fh.write("c " + " ".join(repr(v) for v in p.c) + "\n")
        if p.q is not None:
            fh.write("Q\n")
            for row in p.q:
                fh.write(" ".join(repr(v) for v in row) + "\n")
        for name, mat, vec in (("eq", p.a_eq, p.b_eq), ("in", p.a_in, p.b_in)):
            fh.write(f"{name} {mat.shape[0]}\n")
            for row, b in zip(mat, vec):
                fh.write(" ".join(repr(v) for v in row) + " | " + repr(b) + "\n")
        fh.write("lb " + " ".join(repr(v) for v in p.lb) + "\n")
        fh.write("ub " + " ".join(repr(v) for v in p.ub) + "\n")
