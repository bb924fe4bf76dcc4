"""Middle + lower levels: generation-investment equilibrium via an
equivalent quadratic program.

The Cournot game among Gencos over the four capacity products and the
energy market is solved as a single concave-objective QP whose KKT
conditions reproduce each player's profit-maximization conditions. The
objective carries, per market, the consumer-surplus integral of the
inverse demand plus a per-Genco quadratic "market power" correction whose
slope is the demand-curve slope at the cleared point; the active segment
of each piecewise curve is found by a short deterministic fixed point.

Price caps are applied as post-solve clipping for reporting only;
embedding them as constraints would reintroduce complementarity and break
the equivalent-QP property.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import qp
from .curves import DemandCurveSet, MERGED_ZONE
from .model import FR_PRODUCTS, PRODUCTS, ScenarioSet, SystemModel, UnitKind

PRODUCT_COEFF_ATTR = {"CF": "ramping_coeff", "CM": "inertia_constant_s",
                      "CR": "available_time_coeff_h"}


class EquilibriumError(RuntimeError):
    pass


def energy_inverse_demand(system: SystemModel, scen: ScenarioSet):
    """Per-(area, t, omega) intercept/slope of the energy inverse demand.

    The slope comes from the configured demand elasticity at the scenario's
    reference load; the intercept pins the price to the configured long-run
    marginal cost at that load. Cells with no load get a unit slope and
    zero intercept so nothing clears there.
    """
    market = system.market
    ref = scen.demand
    b = np.ones_like(ref)
    a = np.zeros_like(ref)
    pos = ref > 1e-9
    b[pos] = market.long_run_marginal_cost / (market.demand_elasticity * ref[pos])
    a[pos] = market.long_run_marginal_cost * (1.0 + 1.0 / market.demand_elasticity)
    return a, b


def re_profile(system: SystemModel, scen: ScenarioSet, unit_id: str) -> np.ndarray:
    """Per-MW capacity factor profile of a renewable unit (existing fleet
    output divided by existing capacity)."""
    u = system.unit(unit_id)
    return scen.re_output[scen.re_index(unit_id)] / u.existing_mw


@dataclass
class _Cols:
    names: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)

    def add(self, name, lo, hi) -> int:
        self.names.append(name)
        self.lb.append(lo)
        self.ub.append(hi)
        return len(self.names) - 1

    @property
    def n(self):
        return len(self.names)


@dataclass
class EquilibriumProblem:
    system: SystemModel
    scen: ScenarioSet
    curves: DemandCurveSet
    qp_problem: qp.QpProblem
    correction_slopes: dict       # (zone, product) -> market-power slope
    q_base: np.ndarray            # Q without the capacity-market corrections
    corr_blocks: dict             # (zone, product) -> unit-slope Q contribution
    inv: dict
    ci: dict
    fi: dict
    pe: dict                      # (unit, t, w) -> col
    spill: dict
    ec: dict
    edc: dict
    soc: dict
    co: dict
    fo: dict
    el: dict
    seg: dict                     # (zone, product, d) -> col
    lei: dict                     # (area, t, w) -> col
    zones: list
    zone_products: list           # [(zone, product)] with a usable curve
    a_ei: np.ndarray
    b_ei: np.ndarray
    tie_limits: Optional[dict]
    const: float                  # constant term of the negated objective

    def set_correction_slopes(self, slopes: dict):
        """Swap the per-market Cournot-correction slopes in place."""
        q_new = self.q_base.copy()
        for key, b_bar in slopes.items():
            if b_bar > 0:
                q_new += b_bar * self.corr_blocks[key]
        self.qp_problem.q = 0.5 * (q_new + q_new.T)
        self.correction_slopes = dict(slopes)


@dataclass
class GencoAccount:
    invest_cost: float
    generation_cost: float
    energy_revenue: float
    capacity_revenue: float

    @property
    def profit(self) -> float:
        return (self.energy_revenue + self.capacity_revenue
                - self.invest_cost - self.generation_cost)


@dataclass
class EquilibriumResult:
    investments: dict             # unit -> MW
    offers_cp: dict               # unit -> MW offered as generation capability
    offers_fr: dict               # unit -> MW offered as flexibility/resilience
    cleared: dict                 # (zone, product) -> quantity
    prices: dict                  # (zone, product) -> clipped price
    prices_raw: dict              # (zone, product) -> pre-clip price
    energy_cleared: np.ndarray    # [area, t, w]
    energy_prices: np.ndarray     # clipped
    energy_prices_raw: np.ndarray
    tie_cp: dict                  # tie -> signed capacity flow
    tie_fr: dict
    energy_flows: dict            # tie -> [t, w] array
    dispatch: dict                # unit -> [t, w] (thermal output / RE delivered)
    storage_charge: dict
    storage_discharge: dict
    storage_level: dict
    accounts: dict                # genco -> GencoAccount
    objective: float
    kkt: qp.KktResiduals
    segments: dict
    status: qp.QpStatus


def _usable_curve(curves: DemandCurveSet, zone: str, product: str):
    curve = curves.curves.get((zone, product))
    if curve is None or curve.empty:
        return None
    return curve


def _zone_of(curves: DemandCurveSet, area_id: str) -> str:
    return MERGED_ZONE if curves.merged else area_id


def build_equivalent_qp(system: SystemModel, scen: ScenarioSet,
                        curves: DemandCurveSet, tie_limits: Optional[dict] = None,
                        correction_slopes: Optional[dict] = None) -> EquilibriumProblem:
    """Assemble the negated concave objective and constraints (investment,
    offer caps, budgets, storage dynamics, tie limits, market balances).

    correction_slopes fixes each capacity market's Cournot-correction
    slope; solve_equilibrium iterates it toward the demand-curve slope at
    the cleared quantity.
    """
    market = system.market
    horizon, n_w = scen.n_periods, scen.n_scenarios
    pi = scen.probabilities
    w_e = market.energy_weight
    days = market.capacity_days_per_year

    zone_products = []
    for (zone, product), curve in sorted(curves.curves.items()):
        if curve.empty:
            continue
        if all(seg.slope <= 0.0 for seg in curve.segments):
            raise EquilibriumError(
                f"Cournot correction undefined for b = 0: demand curve for "
                f"({zone}, {product}) is flat")
        zone_products.append((zone, product))
    correction_slopes = dict(correction_slopes or {})
    for key in zone_products:
        correction_slopes.setdefault(key, curves.curves[key].segments[-1].slope)

    cols = _Cols()
    inv = {u.id: cols.add(f"inv[{u.id}]", 0.0, u.max_invest_mw)
           for u in system.units}

    zones_with = lambda prods: {z for (z, p) in zone_products if p in prods}
    cp_zones = zones_with(("CP",))
    fr_zones = zones_with(FR_PRODUCTS)

    ci, fi = {}, {}
    for u in system.units:
        zid = _zone_of(curves, u.area_id)
        if zid in cp_zones:
            ci[u.id] = cols.add(f"ci[{u.id}]", 0.0, np.inf)
        if zid in fr_zones and not u.is_re:
            fi[u.id] = cols.add(f"fi[{u.id}]", 0.0, np.inf)

    pe, spill = {}, {}
    for u in system.thermal_units:
        for t in range(horizon):
            for w in range(n_w):
                pe[(u.id, t, w)] = cols.add(f"pe[{u.id},{t},{w}]", 0.0, np.inf)
    profiles = {u.id: re_profile(system, scen, u.id) for u in system.re_units}
    for u in system.re_units:
        for t in range(horizon):
            for w in range(n_w):
                spill[(u.id, t, w)] = cols.add(f"spill[{u.id},{t},{w}]", 0.0, np.inf)
    ec, edc, soc = {}, {}, {}
    for u in system.storage_units:
        cap_e = u.storage.energy_cap_mwh
        for t in range(horizon):
            for w in range(n_w):
                ec[(u.id, t, w)] = cols.add(f"ec[{u.id},{t},{w}]", 0.0, np.inf)
                edc[(u.id, t, w)] = cols.add(f"edc[{u.id},{t},{w}]", 0.0, np.inf)
                soc[(u.id, t, w)] = cols.add(f"soc[{u.id},{t},{w}]", 0.0, cap_e)

    co, fo, el = {}, {}, {}
    for tie in system.ties:
        cap = tie.capacity_mw
        lc = lf = cap
        if tie_limits and tie.id in tie_limits:
            lc = min(cap, tie_limits[tie.id][0])
            lf = min(cap, tie_limits[tie.id][1])
        if cp_zones and not curves.merged:
            co[tie.id] = cols.add(f"co[{tie.id}]", -lc, lc)
        if fr_zones and not curves.merged:
            fo[tie.id] = cols.add(f"fo[{tie.id}]", -lf, lf)
        for t in range(horizon):
            for w in range(n_w):
                el[(tie.id, t, w)] = cols.add(f"el[{tie.id},{t},{w}]", -cap, cap)

    seg_cols = {}
    for (zone, product) in zone_products:
        curve = curves.curves[(zone, product)]
        for d, segm in enumerate(curve.segments):
            seg_cols[(zone, product, d)] = cols.add(
                f"seg[{zone},{product},{d}]", 0.0, segm.width)

    lei = {}
    for ai, aid in enumerate(scen.area_ids):
        for t in range(horizon):
            for w in range(n_w):
                lei[(aid, t, w)] = cols.add(f"lei[{aid},{t},{w}]", 0.0, np.inf)

    n = cols.n
    c_min = np.zeros(n)
    q_min = np.zeros((n, n))
    corr_blocks = {}
    const = 0.0

    rows_eq, rhs_eq = [], []
    rows_in, rhs_in = [], []

    def eq_row(coefs, rhs):
        rows_eq.append(coefs)
        rhs_eq.append(rhs)

    def in_row(coefs, rhs):
        rows_in.append(coefs)
        rhs_in.append(rhs)

    # ---- investment and offer caps
    for u in system.units:
        c_min[inv[u.id]] += u.annualized_invest_cost
        alpha, exist = u.confidence_coeff, u.existing_mw
        if u.id in ci:
            in_row({ci[u.id]: 1.0, inv[u.id]: -alpha}, alpha * exist)
        if u.id in fi:
            base = {fi[u.id]: 1.0, inv[u.id]: -alpha}
            if u.id in ci:
                base[ci[u.id]] = 1.0
            in_row(base, alpha * exist)
    for g in system.gencos:
        owned = system.genco_units(g.id)
        if not owned:
            continue
        in_row({inv[u.id]: 1.0 for u in owned},
               g.invest_budget_ratio * sum(u.existing_mw for u in owned))

    # ---- dispatch limits and costs
    for u in system.thermal_units:
        c1 = u.marginal_cost_eur_per_mwh
        c2 = u.marginal_cost_quadratic
        for t in range(horizon):
            for w in range(n_w):
                j = pe[(u.id, t, w)]
                in_row({j: 1.0, inv[u.id]: -1.0}, u.existing_mw)
                wgt = w_e * pi[w]
                c_min[j] += wgt * c1
                q_min[j, j] += 2.0 * wgt * c2
    for u in system.re_units:
        prof = profiles[u.id]
        for t in range(horizon):
            for w in range(n_w):
                j = spill[(u.id, t, w)]
                cf = float(prof[t, w])
                in_row({j: 1.0, inv[u.id]: -cf}, cf * u.existing_mw)
    for u in system.storage_units:
        sp = u.storage
        for t in range(horizon):
            for w in range(n_w):
                in_row({ec[(u.id, t, w)]: 1.0, inv[u.id]: -1.0}, u.existing_mw)
                in_row({edc[(u.id, t, w)]: 1.0, inv[u.id]: -1.0}, u.existing_mw)
                c_min[ec[(u.id, t, w)]] += w_e * pi[w] * sp.charge_cost_eur_per_mw
        # storage dynamics, anchored at the initial level each scenario,
        # and returned to it at the horizon's end
        for w in range(n_w):
            for t in range(horizon):
                coefs = {soc[(u.id, t, w)]: 1.0,
                         edc[(u.id, t, w)]: 1.0 / sp.discharge_eff,
                         ec[(u.id, t, w)]: -sp.charge_eff}
                if t > 0:
                    coefs[soc[(u.id, t - 1, w)]] = -1.0
                    eq_row(coefs, 0.0)
                else:
                    eq_row(coefs, sp.initial_energy_mwh)
            eq_row({soc[(u.id, horizon - 1, w)]: 1.0}, sp.initial_energy_mwh)

    # ---- tie limits on joint capacity use
    for tie in system.ties:
        if tie.id in co and tie.id in fo:
            in_row({co[tie.id]: 1.0, fo[tie.id]: 1.0}, tie.capacity_mw)
            in_row({co[tie.id]: -1.0, fo[tie.id]: -1.0}, tie.capacity_mw)

    # ---- capacity-product balances and surplus terms
    def genco_quantity(genco_id, zone, product):
        """Linear expression of the genco's cleared quantity in one market."""
        coefs = {}
        for u in system.genco_units(genco_id):
            if _zone_of(curves, u.area_id) != zone:
                continue
            if product == "CP":
                if u.id in ci:
                    coefs[ci[u.id]] = coefs.get(ci[u.id], 0.0) + 1.0
                if u.id in fi:
                    coefs[fi[u.id]] = coefs.get(fi[u.id], 0.0) + 1.0
            elif u.id in fi:
                coeff = getattr(u, PRODUCT_COEFF_ATTR[product]) or 0.0
                if coeff:
                    coefs[fi[u.id]] = coefs.get(fi[u.id], 0.0) + coeff
        return coefs

    for (zone, product) in zone_products:
        curve = curves.curves[(zone, product)]
        balance = {}
        for g in system.gencos:
            for col, v in genco_quantity(g.id, zone, product).items():
                balance[col] = balance.get(col, 0.0) + v
        if not curves.merged:
            for tie in system.ties:
                inc = tie.incidence(zone)
                if inc == 0.0:
                    continue
                if product == "CP":
                    if tie.id in co:
                        balance[co[tie.id]] = balance.get(co[tie.id], 0.0) + inc
                    if tie.id in fo:
                        balance[fo[tie.id]] = balance.get(fo[tie.id], 0.0) + inc
                elif tie.id in fo:
                    coeff = system.tie_coefficient(zone, product)
                    if coeff:
                        balance[fo[tie.id]] = balance.get(fo[tie.id], 0.0) + inc * coeff
        for d, segm in enumerate(curve.segments):
            balance[seg_cols[(zone, product, d)]] = -1.0
        eq_row(balance, 0.0)

        # surplus: integral of the inverse demand over the filled segments
        for d, segm in enumerate(curve.segments):
            j = seg_cols[(zone, product, d)]
            a_local = segm.intercept - segm.slope * segm.q_lo
            c_min[j] -= days * a_local
            q_min[j, j] += days * segm.slope
        # per-genco market-power correction, assembled at unit slope so the
        # pass loop can rescale it without a rebuild
        block = np.zeros((n, n))
        for g in system.gencos:
            coefs = genco_quantity(g.id, zone, product)
            if not coefs:
                continue
            idx = list(coefs)
            vec = np.array([coefs[j] for j in idx])
            block[np.ix_(idx, idx)] += days * np.outer(vec, vec)
        corr_blocks[(zone, product)] = block

    # ---- energy market
    a_ei, b_ei = energy_inverse_demand(system, scen)

    def genco_injection(genco_id, area_id, t, w):
        """(coefs, constant) of the genco's net energy sales in an area."""
        coefs, constant = {}, 0.0
        for u in system.genco_units(genco_id):
            if u.area_id != area_id:
                continue
            if u.kind is UnitKind.THERMAL:
                coefs[pe[(u.id, t, w)]] = coefs.get(pe[(u.id, t, w)], 0.0) + 1.0
            elif u.is_re:
                cf = float(profiles[u.id][t, w])
                coefs[inv[u.id]] = coefs.get(inv[u.id], 0.0) + cf
                coefs[spill[(u.id, t, w)]] = coefs.get(spill[(u.id, t, w)], 0.0) - 1.0
                constant += cf * u.existing_mw
            else:
                coefs[edc[(u.id, t, w)]] = coefs.get(edc[(u.id, t, w)], 0.0) + 1.0
                coefs[ec[(u.id, t, w)]] = coefs.get(ec[(u.id, t, w)], 0.0) - 1.0
        return coefs, constant

    for ai, aid in enumerate(scen.area_ids):
        for t in range(horizon):
            for w in range(n_w):
                j_lei = lei[(aid, t, w)]
                wgt = w_e * pi[w]
                a_v, b_v = float(a_ei[ai, t, w]), float(b_ei[ai, t, w])
                balance = {j_lei: -1.0}
                constant = 0.0
                for g in system.gencos:
                    coefs, cst = genco_injection(g.id, aid, t, w)
                    constant += cst
                    for col, v in coefs.items():
                        balance[col] = balance.get(col, 0.0) + v
                    # market-power correction: 0.5 * b * (own net sales)^2
                    if coefs or cst:
                        idx = list(coefs)
                        vec = np.array([coefs[c2] for c2 in idx])
                        if idx:
                            q_min[np.ix_(idx, idx)] += wgt * b_v * np.outer(vec, vec)
                            c_min[idx] += wgt * b_v * cst * vec
                        const += 0.5 * wgt * b_v * cst * cst
                for tie in system.ties:
                    inc = tie.incidence(aid)
                    if inc:
                        balance[el[(tie.id, t, w)]] = inc
                eq_row(balance, -constant)
                # consumer surplus of the inverse demand
                c_min[j_lei] -= wgt * a_v
                q_min[j_lei, j_lei] += wgt * b_v

    a_eq = np.zeros((len(rows_eq), n))
    for i, coefs in enumerate(rows_eq):
        for j, v in coefs.items():
            a_eq[i, j] = v
    a_in = np.zeros((len(rows_in), n))
    for i, coefs in enumerate(rows_in):
        for j, v in coefs.items():
            a_in[i, j] = v

    q_full = q_min.copy()
    for key, b_bar in correction_slopes.items():
        if b_bar > 0:
            q_full += b_bar * corr_blocks[key]
    problem = qp.QpProblem(c=c_min, q=0.5 * (q_full + q_full.T),
                           a_eq=a_eq, b_eq=np.array(rhs_eq),
                           a_in=a_in, b_in=np.array(rhs_in),
                           lb=np.array(cols.lb), ub=np.array(cols.ub), c0=const)
    return EquilibriumProblem(
        system=system, scen=scen, curves=curves, qp_problem=problem,
        correction_slopes=correction_slopes, q_base=q_min,
        corr_blocks=corr_blocks, inv=inv, ci=ci, fi=fi, pe=pe, spill=spill,
        ec=ec, edc=edc, soc=soc, co=co, fo=fo, el=el, seg=seg_cols, lei=lei,
        zones=sorted({z for z, _ in zone_products}), zone_products=zone_products,
        a_ei=a_ei, b_ei=b_ei, tie_limits=tie_limits, const=const)


def _cleared_quantities(eq: EquilibriumProblem, sol: qp.QpSolution) -> dict:
    out = {}
    for (zone, product) in eq.zone_products:
        curve = eq.curves.curves[(zone, product)]
        out[(zone, product)] = float(sum(
            sol.x[eq.seg[(zone, product, d)]] for d in range(len(curve.segments))))
    return out


def solve_equilibrium(eq: EquilibriumProblem, tol: float = 1e-8,
                      max_passes: int = 30) -> EquilibriumResult:
    """Solve the equivalent QP, relaxing each capacity market's correction
    slope toward the demand-curve slope at its cleared quantity.

    Cleared quantities can sit exactly at curve kinks (where the one-sided
    slopes differ); the damped slope iteration settles there, so
    convergence is judged on the cleared quantities themselves.
    """
    curves = eq.curves
    prev = None
    sol = None
    best = None
    for pss in range(max_passes):
        sol = qp.solve(eq.qp_problem, tol=tol, max_iter=120)
        usable = sol.status is qp.QpStatus.OPTIMAL or sol.rel_residual <= 1e-6
        if not usable:
            raise EquilibriumError(
                f"equilibrium solve ended {sol.status.value}: {sol.message} "
                f"(residuals {sol.residuals})")
        cleared = _cleared_quantities(eq, sol)
        if best is None or sol.status is qp.QpStatus.OPTIMAL:
            best = (sol, dict(eq.correction_slopes))
        if not eq.zone_products:
            break
        scale = 1.0 + max(abs(v) for v in cleared.values())
        if prev is not None and max(abs(cleared[k] - prev[k])
                                    for k in cleared) <= 1e-6 * scale:
            break
        prev = cleared
        slopes = {}
        moved = 0.0
        for key, q_total in cleared.items():
            curve = curves.curves[key]
            target = curve.segments[_segment_index(curve, q_total)].slope
            old = eq.correction_slopes[key]
            slopes[key] = 0.5 * old + 0.5 * target
            moved = max(moved, abs(slopes[key] - old) / (1.0 + old))
        if moved <= 1e-9:
            break
        eq.set_correction_slopes(slopes)
    if sol.status is not qp.QpStatus.OPTIMAL:
        sol, slopes = best
        eq.set_correction_slopes(slopes)
        if sol.status is not qp.QpStatus.OPTIMAL:
            sol = qp.solve(eq.qp_problem, tol=tol, max_iter=300)
            if sol.status is not qp.QpStatus.OPTIMAL and sol.rel_residual > 1e-5:
                raise EquilibriumError(
                    f"equilibrium solve ended {sol.status.value}: {sol.message}")
    return _extract_result(eq, sol)


def _segment_index(curve, cleared: float) -> int:
    for d, segm in enumerate(curve.segments):
        if cleared <= segm.q_hi + 1e-9:
            return d
    return len(curve.segments) - 1


def _extract_result(eq: EquilibriumProblem, sol: qp.QpSolution) -> EquilibriumResult:
    system, scen, curves = eq.system, eq.scen, eq.curves
    market = system.market
    x = sol.x
    horizon, n_w = scen.n_periods, scen.n_scenarios
    pi = scen.probabilities
    w_e = market.energy_weight
    days = market.capacity_days_per_year

    investments = {uid: float(x[j]) for uid, j in eq.inv.items()}
    offers_cp = {uid: float(x[j]) for uid, j in eq.ci.items()}
    offers_fr = {uid: float(x[j]) for uid, j in eq.fi.items()}

    cleared, prices_raw, prices = {}, {}, {}
    for (zone, product) in eq.zone_products:
        curve = curves.curves[(zone, product)]
        q_total = sum(x[eq.seg[(zone, product, d)]]
                      for d in range(len(curve.segments)))
        segm = curve.segments[_segment_index(curve, q_total)]
        raw = segm.intercept - segm.slope * q_total
        cleared[(zone, product)] = float(q_total)
        prices_raw[(zone, product)] = float(raw)
        prices[(zone, product)] = float(np.clip(raw, 0.0, curve.price_cap))

    energy_cleared = np.zeros((len(scen.area_ids), horizon, n_w))
    for (aid, t, w), j in eq.lei.items():
        energy_cleared[scen.area_ids.index(aid), t, w] = x[j]
    energy_prices_raw = eq.a_ei - eq.b_ei * energy_cleared
    energy_prices = np.clip(energy_prices_raw, 0.0, market.energy_price_cap)

    tie_cp = {tid: float(x[j]) for tid, j in eq.co.items()}
    tie_fr = {tid: float(x[j]) for tid, j in eq.fo.items()}
    energy_flows = {}
    for tie in system.ties:
        arr = np.zeros((horizon, n_w))
        for t in range(horizon):
            for w in range(n_w):
                arr[t, w] = x[eq.el[(tie.id, t, w)]]
        energy_flows[tie.id] = arr

    profiles = {u.id: re_profile(system, scen, u.id) for u in system.re_units}
    dispatch = {}
    for u in system.thermal_units:
        arr = np.zeros((horizon, n_w))
        for t in range(horizon):
            for w in range(n_w):
                arr[t, w] = x[eq.pe[(u.id, t, w)]]
        dispatch[u.id] = arr
    for u in system.re_units:
        arr = profiles[u.id] * (u.existing_mw + investments[u.id])
        for t in range(horizon):
            for w in range(n_w):
                arr[t, w] -= x[eq.spill[(u.id, t, w)]]
        dispatch[u.id] = arr
    storage_charge, storage_discharge, storage_level = {}, {}, {}
    for u in system.storage_units:
        chg = np.zeros((horizon, n_w))
        dis = np.zeros((horizon, n_w))
        lvl = np.zeros((horizon, n_w))
        for t in range(horizon):
            for w in range(n_w):
                chg[t, w] = x[eq.ec[(u.id, t, w)]]
                dis[t, w] = x[eq.edc[(u.id, t, w)]]
                lvl[t, w] = x[eq.soc[(u.id, t, w)]]
        storage_charge[u.id] = chg
        storage_discharge[u.id] = dis
        storage_level[u.id] = lvl

    accounts = {}
    for g in system.gencos:
        units = system.genco_units(g.id)
        inv_cost = sum(u.annualized_invest_cost * investments[u.id] for u in units)
        gen_cost = 0.0
        energy_rev = 0.0
        for u in units:
            for t in range(horizon):
                for w in range(n_w):
                    wgt = w_e * float(pi[w])
                    ai = scen.area_ids.index(u.area_id)
                    price = float(energy_prices_raw[ai, t, w])
                    if u.kind is UnitKind.THERMAL:
                        out = dispatch[u.id][t, w]
                        gen_cost += wgt * (u.marginal_cost_eur_per_mwh * out
                                           + u.marginal_cost_quadratic * out * out)
                        energy_rev += wgt * price * out
                    elif u.is_re:
                        energy_rev += wgt * price * dispatch[u.id][t, w]
                    else:
                        net = (storage_discharge[u.id][t, w]
                               - storage_charge[u.id][t, w])
                        gen_cost += wgt * (u.storage.charge_cost_eur_per_mw
                                           * storage_charge[u.id][t, w])
                        energy_rev += wgt * price * net
        cap_rev = 0.0
        for u in units:
            zone = _zone_of(curves, u.area_id)
            if (zone, "CP") in prices_raw:
                qty = offers_cp.get(u.id, 0.0) + offers_fr.get(u.id, 0.0)
                cap_rev += days * prices_raw[(zone, "CP")] * qty
            for product in FR_PRODUCTS:
                if (zone, product) in prices_raw and u.id in eq.fi:
                    coeff = getattr(u, PRODUCT_COEFF_ATTR[product]) or 0.0
                    cap_rev += days * prices_raw[(zone, product)] * coeff * \
                        offers_fr.get(u.id, 0.0)
        accounts[g.id] = GencoAccount(invest_cost=inv_cost, generation_cost=gen_cost,
                                      energy_revenue=energy_rev,
                                      capacity_revenue=cap_rev)

    return EquilibriumResult(
        investments=investments, offers_cp=offers_cp, offers_fr=offers_fr,
        cleared=cleared, prices=prices, prices_raw=prices_raw,
        energy_cleared=energy_cleared, energy_prices=energy_prices,
        energy_prices_raw=energy_prices_raw, tie_cp=tie_cp, tie_fr=tie_fr,
        energy_flows=energy_flows, dispatch=dispatch,
        storage_charge=storage_charge, storage_discharge=storage_discharge,
        storage_level=storage_level, accounts=accounts,
        objective=float(sol.objective), kkt=sol.residuals,
        segments={key: _segment_index(curves.curves[key], cleared[key])
                  for key in eq.zone_products},
        status=sol.status)


# ----------------------------------------------------------------------
# best-response certificate


def _rival_context(eq: EquilibriumProblem, result: EquilibriumResult,
                   genco_id: str):
    """Residual market quantities with the genco's own contribution removed."""
    system, scen, curves = eq.system, eq.scen, eq.curves
    own_units = {u.id for u in system.genco_units(genco_id)}

    cap_rest = {}
    for (zone, product) in eq.zone_products:
        own_q = 0.0
        for u in system.genco_units(genco_id):
            if _zone_of(curves, u.area_id) != zone:
                continue
            if product == "CP":
                own_q += result.offers_cp.get(u.id, 0.0) + \
                    result.offers_fr.get(u.id, 0.0)
            else:
                coeff = getattr(u, PRODUCT_COEFF_ATTR[product], None) or 0.0
                own_q += coeff * result.offers_fr.get(u.id, 0.0)
        cap_rest[(zone, product)] = result.cleared[(zone, product)] - own_q

    lei_rest = np.array(result.energy_cleared)
    for u in system.units:
        if u.id not in own_units:
            continue
        ai = scen.area_ids.index(u.area_id)
        if u.kind is UnitKind.THERMAL or u.is_re:
            lei_rest[ai] -= result.dispatch[u.id]
        elif u.kind is UnitKind.STORAGE:
            lei_rest[ai] -= (result.storage_discharge[u.id]
                             - result.storage_charge[u.id])
    return cap_rest, lei_rest


def genco_profit(eq: EquilibriumProblem, genco_id: str, point: dict,
                 cap_rest: dict, lei_rest: np.ndarray) -> float:
    """Exact profit of one genco at an own-decision point, pricing every
    market with the piecewise curves (floored at zero) against rivals'
    fixed quantities."""
    system, scen, curves = eq.system, eq.scen, eq.curves
    market = system.market
    pi = scen.probabilities
    w_e = market.energy_weight
    days = market.capacity_days_per_year
    horizon, n_w = scen.n_periods, scen.n_scenarios
    profiles = {u.id: re_profile(system, scen, u.id) for u in system.re_units}

    profit = 0.0
    for u in system.genco_units(genco_id):
        profit -= u.annualized_invest_cost * point["inv"][u.id]

    for (zone, product) in eq.zone_products:
        curve = curves.curves[(zone, product)]
        own_q = 0.0
        for u in system.genco_units(genco_id):
            if _zone_of(curves, u.area_id) != zone:
                continue
            if product == "CP":
                own_q += point["ci"].get(u.id, 0.0) + point["fi"].get(u.id, 0.0)
            else:
                coeff = getattr(u, PRODUCT_COEFF_ATTR[product], None) or 0.0
                own_q += coeff * point["fi"].get(u.id, 0.0)
        if own_q == 0.0:
            continue
        price = max(0.0, curve.price_at(cap_rest[(zone, product)] + own_q))
        profit += days * price * own_q

    def unit_output(u, t, w):
        if u.kind is UnitKind.THERMAL:
            return point["pe"].get((u.id, t, w), 0.0)
        if u.is_re:
            return (profiles[u.id][t, w] * (u.existing_mw + point["inv"][u.id])
                    - point["spill"].get((u.id, t, w), 0.0))
        return (point["edc"].get((u.id, t, w), 0.0)
                - point["ec"].get((u.id, t, w), 0.0))

    own_units = system.genco_units(genco_id)
    for ai, aid in enumerate(scen.area_ids):
        local = [u for u in own_units if u.area_id == aid]
        if not local:
            continue
        for t in range(horizon):
            for w in range(n_w):
                wgt = w_e * float(pi[w])
                own_total = sum(unit_output(u, t, w) for u in local)
                a_v = float(eq.a_ei[ai, t, w])
                b_v = float(eq.b_ei[ai, t, w])
                price = max(0.0, a_v - b_v * (lei_rest[ai, t, w] + own_total))
                profit += wgt * price * own_total
                for u in local:
                    if u.kind is UnitKind.THERMAL:
                        out = unit_output(u, t, w)
                        profit -= wgt * (u.marginal_cost_eur_per_mwh * out
                                         + u.marginal_cost_quadratic * out * out)
                    elif u.kind is UnitKind.STORAGE:
                        profit -= wgt * (u.storage.charge_cost_eur_per_mw
                                         * point["ec"].get((u.id, t, w), 0.0))
    return profit


def result_point(eq: EquilibriumProblem, result: EquilibriumResult,
                 genco_id: str) -> dict:
    """The genco's own decisions at an equilibrium result, in the layout
    genco_profit expects."""
    system, scen = eq.system, eq.scen
    horizon, n_w = scen.n_periods, scen.n_scenarios
    point = {"inv": {}, "ci": {}, "fi": {}, "pe": {}, "spill": {},
             "ec": {}, "edc": {}}
    profiles = {u.id: re_profile(system, scen, u.id) for u in system.re_units}
    for u in system.genco_units(genco_id):
        point["inv"][u.id] = result.investments[u.id]
        if u.id in result.offers_cp:
            point["ci"][u.id] = result.offers_cp[u.id]
        if u.id in result.offers_fr:
            point["fi"][u.id] = result.offers_fr[u.id]
        for t in range(horizon):
            for w in range(n_w):
                if u.kind is UnitKind.THERMAL:
                    point["pe"][(u.id, t, w)] = result.dispatch[u.id][t, w]
                elif u.is_re:
                    full = profiles[u.id][t, w] * (u.existing_mw
                                                   + result.investments[u.id])
                    point["spill"][(u.id, t, w)] = full - result.dispatch[u.id][t, w]
                else:
                    point["ec"][(u.id, t, w)] = result.storage_charge[u.id][t, w]
                    point["edc"][(u.id, t, w)] = result.storage_discharge[u.id][t, w]
    return point


def best_response_check(eq: EquilibriumProblem, result: EquilibriumResult,
                        genco_id: str, tol: float = 1e-8) -> float:
    """Fix all rivals at the result point, re-optimize this genco's own
    problem, and return its exact-profit improvement (nonnegative; values
    within solver tolerance of zero certify no profitable deviation)."""
    system, scen, curves = eq.system, eq.scen, eq.curves
    cap_rest, lei_rest = _rival_context(eq, result, genco_id)
    base_point = result_point(eq, result, genco_id)
    base_profit = genco_profit(eq, genco_id, base_point, cap_rest, lei_rest)

    units = system.genco_units(genco_id)
    if not units:
        return 0.0

    seg_guess = {key: _segment_index(curves.curves[key], result.cleared[key])
                 for key in eq.zone_products}
    best = base_profit
    seen = set()
    for _ in range(8):
        point, implied = _solve_best_response(eq, genco_id, cap_rest, lei_rest,
                                              seg_guess, tol)
        profit = genco_profit(eq, genco_id, point, cap_rest, lei_rest)
        best = max(best, profit)
        new_guess = {key: _segment_index(curves.curves[key], implied[key])
                     for key in eq.zone_products}
        if new_guess == seg_guess:
            break
        key = tuple(sorted(new_guess.items()))
        if key in seen:
            break
        seen.add(key)
        seg_guess = new_guess
    return max(0.0, best - base_profit)


def _solve_best_response(eq: EquilibriumProblem, genco_id: str, cap_rest: dict,
                         lei_rest: np.ndarray, seg_guess: dict, tol: float):
    """One linearized best-response QP for a genco, with every market's
    price taken on a guessed curve segment."""
    system, scen, curves = eq.system, eq.scen, eq.curves
    market = system.market
    horizon, n_w = scen.n_periods, scen.n_scenarios
    pi = scen.probabilities
    w_e = market.energy_weight
    days = market.capacity_days_per_year
    profiles = {u.id: re_profile(system, scen, u.id) for u in system.re_units}
    units = system.genco_units(genco_id)

    cols = _Cols()
    inv = {u.id: cols.add(f"inv[{u.id}]", 0.0, u.max_invest_mw) for u in units}
    ci = {u.id: cols.add(f"ci[{u.id}]", 0.0, np.inf)
          for u in units if u.id in eq.ci}
    fi = {u.id: cols.add(f"fi[{u.id}]", 0.0, np.inf)
          for u in units if u.id in eq.fi}
    pe, spill, ec, edc, soc = {}, {}, {}, {}, {}
    for u in units:
        for t in range(horizon):
            for w in range(n_w):
                if u.kind is UnitKind.THERMAL:
                    pe[(u.id, t, w)] = cols.add(f"pe[{u.id},{t},{w}]", 0.0, np.inf)
                elif u.is_re:
                    spill[(u.id, t, w)] = cols.add(f"sp[{u.id},{t},{w}]", 0.0, np.inf)
                else:
                    ec[(u.id, t, w)] = cols.add(f"ec[{u.id},{t},{w}]", 0.0, np.inf)
                    edc[(u.id, t, w)] = cols.add(f"edc[{u.id},{t},{w}]", 0.0, np.inf)
                    soc[(u.id, t, w)] = cols.add(f"soc[{u.id},{t},{w}]", 0.0,
                                                 u.storage.energy_cap_mwh)
    n = cols.n
    c_min = np.zeros(n)
    q_min = np.zeros((n, n))
    rows_eq, rhs_eq, rows_in, rhs_in = [], [], [], []

    for u in units:
        c_min[inv[u.id]] += u.annualized_invest_cost
        alpha, exist = u.confidence_coeff, u.existing_mw
        if u.id in ci:
            rows_in.append({ci[u.id]: 1.0, inv[u.id]: -alpha})
            rhs_in.append(alpha * exist)
        if u.id in fi:
            row = {fi[u.id]: 1.0, inv[u.id]: -alpha}
            if u.id in ci:
                row[ci[u.id]] = 1.0
            rows_in.append(row)
            rhs_in.append(alpha * exist)
        for t in range(horizon):
            for w in range(n_w):
                wgt = w_e * float(pi[w])
                if u.kind is UnitKind.THERMAL:
                    j = pe[(u.id, t, w)]
                    rows_in.append({j: 1.0, inv[u.id]: -1.0})
                    rhs_in.append(u.existing_mw)
                    c_min[j] += wgt * u.marginal_cost_eur_per_mwh
                    q_min[j, j] += 2.0 * wgt * u.marginal_cost_quadratic
                elif u.is_re:
                    j = spill[(u.id, t, w)]
                    cf = float(profiles[u.id][t, w])
                    rows_in.append({j: 1.0, inv[u.id]: -cf})
                    rhs_in.append(cf * u.existing_mw)
                else:
                    rows_in.append({ec[(u.id, t, w)]: 1.0, inv[u.id]: -1.0})
                    rhs_in.append(u.existing_mw)
                    rows_in.append({edc[(u.id, t, w)]: 1.0, inv[u.id]: -1.0})
                    rhs_in.append(u.existing_mw)
                    c_min[ec[(u.id, t, w)]] += wgt * \
                        u.storage.charge_cost_eur_per_mw
        if u.kind is UnitKind.STORAGE:
            sp = u.storage
            for w in range(n_w):
                for t in range(horizon):
                    coefs = {soc[(u.id, t, w)]: 1.0,
                             edc[(u.id, t, w)]: 1.0 / sp.discharge_eff,
                             ec[(u.id, t, w)]: -sp.charge_eff}
                    if t > 0:
                        coefs[soc[(u.id, t - 1, w)]] = -1.0
                        rows_eq.append(coefs)
                        rhs_eq.append(0.0)
                    else:
                        rows_eq.append(coefs)
                        rhs_eq.append(sp.initial_energy_mwh)
                rows_eq.append({soc[(u.id, horizon - 1, w)]: 1.0})
                rhs_eq.append(sp.initial_energy_mwh)
    rows_in.append({inv[u.id]: 1.0 for u in units})
    g = next(g for g in system.gencos if g.id == genco_id)
    rhs_in.append(g.invest_budget_ratio * sum(u.existing_mw for u in units))

    # capacity revenue, linearized on the guessed segment:
    # profit term  days * [(a_d - b_d*(q_rest + q)) * q]
    for (zone, product) in eq.zone_products:
        curve = curves.curves[(zone, product)]
        segm = curve.segments[seg_guess[(zone, product)]]
        coefs = {}
        for u in units:
            if _zone_of(curves, u.area_id) != zone:
                continue
            if product == "CP":
                if u.id in ci:
                    coefs[ci[u.id]] = coefs.get(ci[u.id], 0.0) + 1.0
                if u.id in fi:
                    coefs[fi[u.id]] = coefs.get(fi[u.id], 0.0) + 1.0
            elif u.id in fi:
                coeff = getattr(u, PRODUCT_COEFF_ATTR[product]) or 0.0
                if coeff:
                    coefs[fi[u.id]] = coefs.get(fi[u.id], 0.0) + coeff
        if not coefs:
            continue
        price_at_rest = segm.intercept - segm.slope * cap_rest[(zone, product)]
        idx = list(coefs)
        vec = np.array([coefs[j] for j in idx])
        c_min[idx] -= days * price_at_rest * vec
        q_min[np.ix_(idx, idx)] += 2.0 * days * segm.slope * np.outer(vec, vec)

    # energy revenue: w * [(a - b*(L_rest + g)) * g]
    for ai, aid in enumerate(scen.area_ids):
        for t in range(horizon):
            for w in range(n_w):
                coefs, cst = {}, 0.0
                for u in units:
                    if u.area_id != aid:
                        continue
                    if u.kind is UnitKind.THERMAL:
                        coefs[pe[(u.id, t, w)]] = 1.0
                    elif u.is_re:
                        cf = float(profiles[u.id][t, w])
                        coefs[inv[u.id]] = coefs.get(inv[u.id], 0.0) + cf
                        coefs[spill[(u.id, t, w)]] = -1.0
                        cst += cf * u.existing_mw
                    else:
                        coefs[edc[(u.id, t, w)]] = 1.0
                        coefs[ec[(u.id, t, w)]] = coefs.get(ec[(u.id, t, w)], 0.0) - 1.0
                if not coefs and cst == 0.0:
                    continue
                wgt = w_e * float(pi[w])
                a_v = float(eq.a_ei[ai, t, w])
                b_v = float(eq.b_ei[ai, t, w])
                p_rest = a_v - b_v * float(lei_rest[ai, t, w])
                idx = list(coefs)
                vec = np.array([coefs[j] for j in idx])
                # -(p_rest - b(g))g with g = vec.x + cst, in min form
                c_min[idx] -= wgt * (p_rest * vec - 2.0 * b_v * cst * vec)
                q_min[np.ix_(idx, idx)] += 2.0 * wgt * b_v * np.outer(vec, vec)

    a_eq = np.zeros((len(rows_eq), n))
    for i, coefs in enumerate(rows_eq):
        for j, v in coefs.items():
            a_eq[i, j] = v
    a_in = np.zeros((len(rows_in), n))
    for i, coefs in enumerate(rows_in):
        for j, v in coefs.items():
            a_in[i, j] = v
    problem = qp.QpProblem(c=c_min, q=q_min,
                           a_eq=a_eq if rows_eq else None,
                           b_eq=np.array(rhs_eq) if rows_eq else None,
                           a_in=a_in, b_in=np.array(rhs_in),
                           lb=np.array(cols.lb), ub=np.array(cols.ub))
    sol = qp.solve(problem, tol=tol)
    if not qp.acceptable(sol):
        raise EquilibriumError(
            f"best-response solve for {genco_id} ended {sol.status.value}")
    x = sol.x
    point = {"inv": {u.id: float(x[inv[u.id]]) for u in units},
             "ci": {uid: float(x[j]) for uid, j in ci.items()},
             "fi": {uid: float(x[j]) for uid, j in fi.items()},
             "pe": {k: float(x[j]) for k, j in pe.items()},
             "spill": {k: float(x[j]) for k, j in spill.items()},
             "ec": {k: float(x[j]) for k, j in ec.items()},
             "edc": {k: float(x[j]) for k, j in edc.items()}}
    implied = {}
    for (zone, product) in eq.zone_products:
        own_q = 0.0
        for u in units:
            if _zone_of(curves, u.area_id) != zone:
                continue
            if product == "CP":
                own_q += point["ci"].get(u.id, 0.0) + point["fi"].get(u.id, 0.0)
            else:
                coeff = getattr(u, PRODUCT_COEFF_ATTR[product], None) or 0.0
                own_q += coeff * point["fi"].get(u.id, 0.0)
        implied[(zone, product)] = cap_rest[(zone, product)] + own_q
    return point, implied
