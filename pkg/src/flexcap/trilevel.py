"""Tri-level fixed point: demand-curve formulation over the investment
equilibrium.

Each iteration formulates the capacity demand curves at the current
investment vector and tie-capacity limits, solves the investment
equilibrium against those curves, tests the investment change, and feeds
the equilibrium's tie usage back as next iteration's limits. Investments
start at zero with zero tie limits; iterates are relaxed toward the new
equilibrium point to damp curve/equilibrium oscillation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import qp
from .curves import DemandCurveSet, UpperLevelError, sweep_and_assemble
from .equilibrium import (EquilibriumError, EquilibriumProblem,
                          EquilibriumResult, build_equivalent_qp,
                          solve_equilibrium)
from .model import FR_PRODUCTS, PRODUCTS, ScenarioSet, SystemModel
from .products import area_requirements

MODES = ("full", "no_fr", "merged_zones")


class TrilevelError(RuntimeError):
    def __init__(self, message, kind="infeasible"):
        super().__init__(message)
        self.kind = kind


@dataclass
class IterationState:
    iteration: int
    investments: dict
    tie_limits: dict
    residual: float
    wall_time_s: float
    curves: Optional[DemandCurveSet] = None


@dataclass
class AreaCosts:
    loss_peak: float
    loss_fr: float

    @property
    def total(self) -> float:
        return self.loss_peak + self.loss_fr


@dataclass
class RunReport:
    system_fingerprint: str
    mode: str
    converged: bool
    iterations: int
    residual_trace: list
    states: list
    curves: DemandCurveSet
    equilibrium: EquilibriumResult
    capacity_market_cost: float
    area_costs: dict                  # area id -> AreaCosts
    options: dict
    eq_problem: Optional[EquilibriumProblem] = field(default=None, repr=False)

    @property
    def overall_cost(self) -> float:
        return self.capacity_market_cost + sum(c.total
                                               for c in self.area_costs.values())


def system_fingerprint(system: SystemModel) -> str:
    parts = [a.id for a in system.areas] + [u.id for u in system.units] + \
        [g.id for g in system.gencos]
    return "|".join(parts)


def _mode_settings(mode: str):
    if mode == "full":
        return PRODUCTS, False
    if mode == "no_fr":
        return ("CP",), False
    if mode == "merged_zones":
        return PRODUCTS, True
    raise TrilevelError(f"unknown mode '{mode}'", kind="config")


def run(system: SystemModel, scen: ScenarioSet, tol: float = 1.0,
        max_iter: int = 50, relax: float = 0.5, grid_points: int = 10,
        mode: str = "full", keep_curves: bool = False) -> RunReport:
    """Drive the fixed point to convergence in the investment vector
    (infinity norm, MW). relax=1 reproduces the plain iteration."""
    if tol <= 0 and not np.isinf(tol):
        raise TrilevelError("tol must be positive", kind="config")
    if max_iter < 1:
        raise TrilevelError("max_iter must be at least 1", kind="config")
    if not 0.0 < relax <= 1.0:
        raise TrilevelError("relaxation factor must lie in (0, 1]", kind="config")
    products, merged = _mode_settings(mode)

    investments = {u.id: 0.0 for u in system.units}
    tie_limits = {t.id: (0.0, 0.0) for t in system.ties}
    trace = []
    states = []
    curves = None
    result = None
    eq = None
    converged = False

    for m in range(1, max_iter + 1):
        t0 = time.perf_counter()
        try:
            curves, _ = sweep_and_assemble(system, scen, investments, tie_limits,
                                           grid_points=grid_points,
                                           products=products, merged=merged)
        except UpperLevelError as exc:
            raise TrilevelError(f"iteration {m}, curve formulation: {exc}") from exc
        try:
            eq = build_equivalent_qp(system, scen, curves)
            result = solve_equilibrium(eq)
        except EquilibriumError as exc:
            raise TrilevelError(f"iteration {m}, equilibrium: {exc}") from exc

        new_inv = result.investments
        residual = max(abs(new_inv[uid] - investments[uid]) for uid in new_inv) \
            if new_inv else 0.0
        trace.append(residual)
        tie_limits = {t.id: (abs(result.tie_cp.get(t.id, 0.0)),
                             abs(result.tie_fr.get(t.id, 0.0)))
                      for t in system.ties}
        states.append(IterationState(
            iteration=m, investments=dict(new_inv), tie_limits=dict(tie_limits),
            residual=residual, wall_time_s=time.perf_counter() - t0,
            curves=curves if keep_curves else None))
        if residual <= tol:
            converged = True
            investments = dict(new_inv)
            break
        investments = {uid: relax * new_inv[uid] + (1.0 - relax) * investments[uid]
                       for uid in new_inv}

    capacity_cost = market_capacity_cost(system, result)
    losses = evaluate_adequacy(system, scen, result, mode)
    return RunReport(
        system_fingerprint=system_fingerprint(system), mode=mode,
        converged=converged, iterations=len(trace), residual_trace=trace,
        states=states, curves=curves, equilibrium=result,
        capacity_market_cost=capacity_cost, area_costs=losses,
        options={"tol": tol, "max_iter": max_iter, "relax": relax,
                 "grid_points": grid_points, "mode": mode},
        eq_problem=eq)


def market_capacity_cost(system: SystemModel, result: EquilibriumResult) -> float:
    """Annual payment across all capacity products at the clipped prices."""
    days = system.market.capacity_days_per_year
    return days * sum(result.prices[key] * result.cleared[key]
                      for key in result.cleared)


def fr_capability(system: SystemModel, result: EquilibriumResult, mode: str):
    """Per-unit flexibility/resilience capacity backing the adequacy check.

    With the F&R products traded it is the cleared offers; without them it
    is the confidence-capped capacity left uncommitted by the generation-
    capability market (physically available, merely unpriced).
    """
    out = {}
    for u in system.units:
        if u.is_re:
            continue
        if mode == "no_fr":
            cap = u.confidence_coeff * (u.existing_mw + result.investments[u.id])
            out[u.id] = max(0.0, cap - result.offers_cp.get(u.id, 0.0))
        else:
            out[u.id] = result.offers_fr.get(u.id, 0.0)
    return out


def evaluate_adequacy(system: SystemModel, scen: ScenarioSet,
                      result: EquilibriumResult, mode: str) -> dict:
    """Expected per-area losses of the equilibrium's provisioned capacities.

    Local capability is fixed at the cleared (or, for untraded products,
    available) per-unit capacities; inter-area support re-optimizes over the
    physical tie capacity, making results comparable across market designs.
    """
    market = system.market
    req = area_requirements(system, scen)
    fr = fr_capability(system, result, mode)
    horizon, n_w = scen.n_periods, scen.n_scenarios
    pi = scen.probabilities

    local = {}
    for ai, aid in enumerate(scen.area_ids):
        units = [u for u in system.units if u.area_id == aid]
        cp = sum(result.offers_cp.get(u.id, 0.0) for u in units) + \
            sum(fr.get(u.id, 0.0) for u in units)
        cf = sum((u.ramping_coeff or 0.0) * fr.get(u.id, 0.0) for u in units)
        cm = sum((u.inertia_constant_s or 0.0) * fr.get(u.id, 0.0) for u in units)
        cr = sum((u.available_time_coeff_h or 0.0) * fr.get(u.id, 0.0)
                 for u in units)
        local[aid] = {"CP": cp, "CF": cf, "CM": cm, "CR": cr}

    # small LP: choose tie support minimizing total expected loss
    names, lb, ub = [], [], []
    co, fo = {}, {}
    for t in system.ties:
        co[t.id] = len(names)
        names.append(f"co[{t.id}]")
        lb.append(-t.capacity_mw)
        ub.append(t.capacity_mw)
        fo[t.id] = len(names)
        names.append(f"fo[{t.id}]")
        lb.append(-t.capacity_mw)
        ub.append(t.capacity_mw)
    short = {}
    cost = []
    voll = {"CP": market.voll_peak, "CF": market.voll_fluctuate,
            "CM": market.voll_inertia, "CR": market.voll_recover}
    reqs = {"CP": req.net_demand, "CF": req.ramping, "CM": req.inertia,
            "CR": req.recovery}
    cost = [0.0] * len(names)
    rows, rhs = [], []
    for ai, aid in enumerate(scen.area_ids):
        for prod in PRODUCTS:
            for t in range(horizon):
                for w in range(n_w):
                    need = float(reqs[prod][ai, t, w])
                    hi = max(need, -need, 0.0) if prod == "CF" else max(need, 0.0)
                    j = len(names)
                    names.append(f"s[{prod},{aid},{t},{w}]")
                    lb.append(0.0)
                    ub.append(hi)
                    cost.append(float(pi[w]) * voll[prod])
                    short[(prod, aid, t, w)] = j
                    tie_coefs = {}
                    for tie in system.ties:
                        inc = tie.incidence(aid)
                        if inc == 0.0:
                            continue
                        if prod == "CP":
                            tie_coefs[co[tie.id]] = inc
                            tie_coefs[fo[tie.id]] = inc
                        else:
                            coeff = system.tie_coefficient(aid, prod)
                            if coeff:
                                tie_coefs[fo[tie.id]] = inc * coeff
                    # need - local - ties - shortfall <= 0
                    row = {j: -1.0}
                    for col, v in tie_coefs.items():
                        row[col] = row.get(col, 0.0) - v
                    rows.append(row)
                    rhs.append(local[aid][prod] - need)
                    if prod == "CF":
                        row2 = dict(row)
                        rows.append(row2)
                        rhs.append(local[aid][prod] + need)
    for tie in system.ties:
        rows.append({co[tie.id]: 1.0, fo[tie.id]: 1.0})
        rhs.append(tie.capacity_mw)
        rows.append({co[tie.id]: -1.0, fo[tie.id]: -1.0})
        rhs.append(tie.capacity_mw)

    n = len(names)
    a_in = np.zeros((len(rows), n))
    for i, row in enumerate(rows):
        for jc, v in row.items():
            a_in[i, jc] = v
    problem = qp.QpProblem(c=np.array(cost), a_in=a_in, b_in=np.array(rhs),
                           lb=np.array(lb), ub=np.array(ub))
    sol = qp.solve(problem, tol=1e-8)
    if not qp.acceptable(sol):
        raise TrilevelError(f"adequacy evaluation LP ended {sol.status.value}")

    out = {}
    for ai, aid in enumerate(scen.area_ids):
        peak = 0.0
        fr_loss = 0.0
        for prod in PRODUCTS:
            for t in range(horizon):
                for w in range(n_w):
                    val = float(pi[w]) * voll[prod] * \
                        sol.x[short[(prod, aid, t, w)]]
                    if prod == "CP":
                        peak += val
                    else:
                        fr_loss += val
        out[aid] = AreaCosts(loss_peak=peak, loss_fr=fr_loss)
    return out


@dataclass
class CaseComparison:
    metrics: list            # (name, base value, variant value, delta)

    def delta(self, name: str) -> float:
        for row in self.metrics:
            if row[0] == name:
                return row[3]
        raise KeyError(name)

    def value(self, name: str, which: str) -> float:
        for row in self.metrics:
            if row[0] == name:
                return row[1] if which == "base" else row[2]
        raise KeyError(name)


def compare_cases(base: RunReport, variant: RunReport) -> CaseComparison:
    """Tabulate capacity-market cost, per-area expected losses and overall
    cost for two runs of the same system."""
    if base.system_fingerprint != variant.system_fingerprint:
        raise TrilevelError("reports come from different systems", kind="config")
    metrics = [("capacity_market_cost", base.capacity_market_cost,
                variant.capacity_market_cost,
                variant.capacity_market_cost - base.capacity_market_cost)]
    for aid in sorted(base.area_costs):
        b = base.area_costs[aid].total
        v = variant.area_costs[aid].total
        metrics.append((f"expected_loss[{aid}]", b, v, v - b))
        b_fr = base.area_costs[aid].loss_fr
        v_fr = variant.area_costs[aid].loss_fr
        metrics.append((f"expected_fr_loss[{aid}]", b_fr, v_fr, v_fr - b_fr))
    metrics.append(("overall_cost", base.overall_cost, variant.overall_cost,
                    variant.overall_cost - base.overall_cost))
    return CaseComparison(metrics=metrics)
