"""Upper level: capacity demand-curve formulation.

For each zone and trading product, the cost-plus-expected-loss model is
solved at a sweep of pinned quantity levels; the dual multiplier of the
pinned provision balance prices each level, and the (quantity, price)
points assemble into a decreasing piecewise-linear demand curve.

Curve prices are quoted in EUR per product-unit per day (the capacity
market's daily scale); the underlying LP works in EUR/year, so duals are
converted by the configured days-per-year factor on assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import qp
from .model import PRODUCTS, FR_PRODUCTS, ScenarioSet, SystemModel
from .products import AreaRequirements, area_requirements

MERGED_ZONE = "ALL"


class UpperLevelError(RuntimeError):
    """Upper-level model could not be built or solved."""


@dataclass(frozen=True)
class CurveSegment:
    """price(L) = intercept - slope * L for L in [q_lo, q_hi]."""

    q_lo: float
    q_hi: float
    intercept: float
    slope: float

    @property
    def price_lo(self) -> float:
        return self.intercept - self.slope * self.q_lo

    @property
    def price_hi(self) -> float:
        return self.intercept - self.slope * self.q_hi

    @property
    def width(self) -> float:
        return self.q_hi - self.q_lo


@dataclass(frozen=True)
class DemandCurve:
    zone_id: str
    product: str
    price_cap: float
    segments: tuple
    grid_q: np.ndarray          # sweep quantities
    raw_duals: np.ndarray       # balance duals, EUR per product-unit-year
    prices: np.ndarray          # capped, isotonic daily prices at grid_q

    @property
    def q_max(self) -> float:
        return float(self.segments[-1].q_hi) if self.segments else 0.0

    @property
    def empty(self) -> bool:
        return not self.segments

    def price_at(self, quantity: float) -> float:
        """Evaluate the curve; flat extension below 0 price beyond the end."""
        if self.empty:
            return 0.0
        if quantity <= self.segments[0].q_lo:
            return self.segments[0].price_lo
        for seg in self.segments:
            if quantity <= seg.q_hi + 1e-12:
                return max(0.0, seg.intercept - seg.slope * quantity)
        last = self.segments[-1]
        return max(0.0, last.intercept - last.slope * quantity)

    def segment_at(self, quantity: float) -> Optional[CurveSegment]:
        if self.empty:
            return None
        for seg in self.segments:
            if quantity <= seg.q_hi + 1e-12:
                return seg
        return self.segments[-1]


@dataclass(frozen=True)
class DemandCurveSet:
    curves: dict                 # (zone_id, product) -> DemandCurve
    merged: bool = False

    def zone_for(self, area_id: str) -> str:
        return MERGED_ZONE if self.merged else area_id

    def get(self, area_id: str, product: str) -> Optional[DemandCurve]:
        return self.curves.get((self.zone_for(area_id), product))

    def products_present(self):
        return sorted({p for (_, p) in self.curves},
                      key=lambda p: PRODUCTS.index(p))


@dataclass
class UpperLevelSolution:
    pinned: dict                 # (zone, product) -> quantity
    unit_cp: dict                # unit id -> provisioned generation capability
    unit_fr: dict                # unit id -> provisioned flexibility/resilience
    tie_cp: dict                 # tie id -> signed generation-capability flow
    tie_fr: dict
    shortfalls: dict             # product -> array [zone, t, omega]
    duals: dict                  # (zone, product) -> balance dual (EUR/unit-yr)
    objective: float
    cost_capacity: float         # C^C
    cost_fr: float               # C^F
    loss_peak: float             # CPUE, probability-weighted sum
    loss_fr: float               # CFUE


# ----------------------------------------------------------------------
# model assembly


@dataclass
class _Zones:
    ids: list                    # zone ids in model order
    members: dict                # zone id -> tuple of area ids


def _make_zones(system: SystemModel, merged: bool) -> _Zones:
    if merged:
        return _Zones([MERGED_ZONE], {MERGED_ZONE: tuple(a.id for a in system.areas)})
    return _Zones([a.id for a in system.areas],
                  {a.id: (a.id,) for a in system.areas})


def _zone_requirements(req: AreaRequirements, zones: _Zones):
    """Requirement arrays summed to zone level, keyed by product."""
    out = {}
    for prod, arr in (("CP", req.net_demand), ("CF", req.ramping),
                      ("CM", req.inertia), ("CR", req.recovery)):
        z = np.zeros((len(zones.ids),) + arr.shape[1:])
        for zi, zid in enumerate(zones.ids):
            for aid in zones.members[zid]:
                z[zi] += arr[req.area_ids.index(aid)]
        out[prod] = z
    return out


@dataclass
class _UpperIndex:
    n: int
    pc: dict
    pf: dict
    co: dict
    fo: dict
    uco: dict
    ufo: dict
    short: dict                  # (product, zone, t, w) -> column
    pin_rows: dict               # (zone, product) -> equality row
    zones: _Zones
    products: tuple


class _Builder:
    """Shared provision-side assembly for the full model and the
    feasibility helpers."""

    def __init__(self, system, scen, investments, tie_limits, products, merged):
        self.system = system
        self.scen = scen
        self.products = tuple(p for p in PRODUCTS if p in products)
        self.fr_on = any(p in self.products for p in FR_PRODUCTS)
        self.merged = merged
        self.zones = _make_zones(system, merged)
        self.investments = {u.id: float(investments.get(u.id, 0.0))
                            for u in system.units}
        for uid, val in self.investments.items():
            if val < -1e-9:
                raise UpperLevelError(f"negative investment for unit '{uid}'")
        self.tie_limits = {t.id: tie_limits.get(t.id, (0.0, 0.0))
                           for t in system.ties}

        self.cols = []           # (name, lb, ub, cost)
        self.pc, self.pf, self.co, self.fo, self.uco, self.ufo = {}, {}, {}, {}, {}, {}
        for u in system.units:
            self.pc[u.id] = self._col(f"pc[{u.id}]", 0.0, self.alpha_cap(u), u.cp_cost)
            if self.fr_on and not u.is_re:
                self.pf[u.id] = self._col(f"pf[{u.id}]", 0.0, self.alpha_cap(u),
                                          u.cf_cost)
        if not merged:
            for t in system.ties:
                lc, lf = self.tie_limits[t.id]
                lc = min(lc, t.capacity_mw)
                self.co[t.id] = self._col(f"co[{t.id}]", -lc, lc, 0.0)
                if t.capacity_cost_cp > 0:
                    self.uco[t.id] = self._col(f"uco[{t.id}]", 0.0, lc,
                                               t.capacity_cost_cp)
                if self.fr_on:
                    lf = min(lf, t.capacity_mw)
                    self.fo[t.id] = self._col(f"fo[{t.id}]", -lf, lf, 0.0)
                    if t.capacity_cost_cf > 0:
                        self.ufo[t.id] = self._col(f"ufo[{t.id}]", 0.0, lf,
                                                   t.capacity_cost_cf)
        self.rows_in = []        # (coefs dict, rhs)
        self._provision_rows()

    def alpha_cap(self, unit) -> float:
        return unit.confidence_coeff * (unit.existing_mw + self.investments[unit.id])

    def _col(self, name, lb, ub, cost) -> int:
        self.cols.append((name, lb, ub, cost))
        return len(self.cols) - 1

    def _provision_rows(self):
        # joint confidence cap on generation + flexibility capacity
        for u in self.system.units:
            if u.id in self.pf:
                self.rows_in.append(({self.pc[u.id]: 1.0, self.pf[u.id]: 1.0},
                                     self.alpha_cap(u)))
        # epigraphs for tie capacity cost, and the shared physical tie limit
        for t in self.system.ties:
            if t.id not in self.co:
                continue
            if t.id in self.uco:
                self.rows_in.append(({self.co[t.id]: 1.0, self.uco[t.id]: -1.0}, 0.0))
                self.rows_in.append(({self.co[t.id]: -1.0, self.uco[t.id]: -1.0}, 0.0))
            if t.id in self.ufo:
                self.rows_in.append(({self.fo[t.id]: 1.0, self.ufo[t.id]: -1.0}, 0.0))
                self.rows_in.append(({self.fo[t.id]: -1.0, self.ufo[t.id]: -1.0}, 0.0))
            if t.id in self.fo:
                self.rows_in.append(({self.co[t.id]: 1.0, self.fo[t.id]: 1.0},
                                     t.capacity_mw))
                self.rows_in.append(({self.co[t.id]: -1.0, self.fo[t.id]: -1.0},
                                     t.capacity_mw))

    def provision_expr(self, zone_id: str, product: str) -> dict:
        """Column coefficients of the zone's provisioned quantity."""
        expr = {}
        members = self.zones.members[zone_id]
        for u in self.system.units:
            if u.area_id not in members:
                continue
            if product == "CP":
                expr[self.pc[u.id]] = expr.get(self.pc[u.id], 0.0) + 1.0
                if u.id in self.pf:
                    expr[self.pf[u.id]] = expr.get(self.pf[u.id], 0.0) + 1.0
            elif u.id in self.pf:
                coeff = {"CF": u.ramping_coeff, "CM": u.inertia_constant_s,
                         "CR": u.available_time_coeff_h}[product]
                if coeff:
                    expr[self.pf[u.id]] = expr.get(self.pf[u.id], 0.0) + coeff
        if not self.merged:
            aid = members[0]
            for t in self.system.ties:
                inc = t.incidence(aid)
                if inc == 0.0:
                    continue
                if product == "CP":
                    expr[self.co[t.id]] = expr.get(self.co[t.id], 0.0) + inc
                    if t.id in self.fo:
                        expr[self.fo[t.id]] = expr.get(self.fo[t.id], 0.0) + inc
                elif t.id in self.fo:
                    coeff = self.system.tie_coefficient(aid, product)
                    if coeff:
                        expr[self.fo[t.id]] = expr.get(self.fo[t.id], 0.0) + inc * coeff
        return expr

    def to_problem(self, extra_cols, rows_eq, rows_in, objective_override=None):
        n = len(self.cols) + len(extra_cols)
        all_cols = self.cols + extra_cols
        lb = np.array([c[1] for c in all_cols])
        ub = np.array([c[2] for c in all_cols])
        cost = np.array([c[3] for c in all_cols])
        if objective_override is not None:
            cost = objective_override

        def densify(rows):
            if not rows:
                return None, None
            mat = np.zeros((len(rows), n))
            rhs = np.zeros(len(rows))
            for i, (coefs, b) in enumerate(rows):
                for j, v in coefs.items():
                    mat[i, j] = v
                rhs[i] = b
            return mat, rhs

        a_eq, b_eq = densify(rows_eq)
        a_in, b_in = densify(list(self.rows_in) + rows_in)
        return qp.QpProblem(c=cost, a_eq=a_eq, b_eq=b_eq, a_in=a_in, b_in=b_in,
                            lb=lb, ub=ub)


def _deliverability_bound(builder: _Builder, zone_id: str, product: str) -> float:
    """Cheap necessary upper bound on a zone's pinned quantity."""
    total = 0.0
    for u in builder.system.units:
        if u.area_id not in builder.zones.members[zone_id]:
            continue
        cap = builder.alpha_cap(u)
        if product == "CP":
            total += cap
        elif u.id in builder.pf:
            coeff = {"CF": u.ramping_coeff, "CM": u.inertia_constant_s,
                     "CR": u.available_time_coeff_h}[product]
            total += (coeff or 0.0) * cap
    if not builder.merged:
        aid = builder.zones.members[zone_id][0]
        for t in builder.system.ties:
            if t.incidence(aid) == 0.0:
                continue
            lc, lf = builder.tie_limits[t.id]
            if product == "CP":
                total += min(lc + (lf if builder.fr_on else 0.0), t.capacity_mw)
            elif builder.fr_on:
                total += builder.system.tie_coefficient(aid, product) * \
                    min(lf, t.capacity_mw)
    return total


def build_upper_lp(system: SystemModel, scen: ScenarioSet, investments: dict,
                   tie_limits: dict, pins: dict, products=PRODUCTS,
                   merged: bool = False):
    """Assemble the cost-plus-expected-loss LP at one set of pinned
    quantities. Returns (QpProblem, _UpperIndex).

    pins maps (zone_id, product) to the quantity the provision balance is
    pinned at; the dual of that equality prices the product.
    """
    b = _Builder(system, scen, investments, tie_limits, products, merged)
    req = _zone_requirements(area_requirements(system, scen), b.zones)

    for (zid, prod), q in pins.items():
        if prod not in b.products or zid not in b.zones.ids:
            raise UpperLevelError(f"pin ({zid}, {prod}) outside the active model")
        if q < -1e-9:
            raise UpperLevelError(f"pin ({zid}, {prod}) is negative")
        bound = _deliverability_bound(b, zid, prod)
        if q > bound + 1e-6:
            raise UpperLevelError(
                f"pinned {prod} quantity {q:.3f} for zone {zid} exceeds the "
                f"confidence-capped capacity plus tie import limit ({bound:.3f})")

    market = system.market
    horizon, n_w = scen.n_periods, scen.n_scenarios
    pi = scen.probabilities
    voll = {"CP": market.voll_peak, "CF": market.voll_fluctuate,
            "CM": market.voll_inertia, "CR": market.voll_recover}

    extra_cols = []
    short = {}
    rows_eq = []
    rows_in = []

    def add_col(name, lb, ub, cost):
        extra_cols.append((name, lb, ub, cost))
        return len(b.cols) + len(extra_cols) - 1

    exprs = {(zid, prod): b.provision_expr(zid, prod)
             for zid in b.zones.ids for prod in b.products}

    for zi, zid in enumerate(b.zones.ids):
        for prod in b.products:
            expr = exprs[(zid, prod)]
            for t in range(horizon):
                for w in range(n_w):
                    need = float(req[prod][zi, t, w])
                    if prod == "CF":
                        hi = max(need, -need, 0.0)
                    else:
                        hi = max(need, 0.0)
                    j = add_col(f"short[{prod},{zid},{t},{w}]", 0.0, hi,
                                float(pi[w]) * voll[prod])
                    short[(prod, zid, t, w)] = j
                    # requirement - provision - shortfall <= 0
                    row = {k: -v for k, v in expr.items()}
                    row[j] = -1.0
                    rows_in.append((row, -need))
                    if prod == "CF":
                        row2 = {k: -v for k, v in expr.items()}
                        row2[j] = -1.0
                        rows_in.append((row2, need))

    pin_rows = {}
    for (zid, prod) in sorted(pins, key=lambda kp: (kp[0], PRODUCTS.index(kp[1]))):
        pin_rows[(zid, prod)] = len(rows_eq)
        rows_eq.append((dict(exprs[(zid, prod)]), float(pins[(zid, prod)])))

    problem = b.to_problem(extra_cols, rows_eq, rows_in)
    index = _UpperIndex(n=problem.n, pc=b.pc, pf=b.pf, co=b.co, fo=b.fo,
                        uco=b.uco, ufo=b.ufo, short=short, pin_rows=pin_rows,
                        zones=b.zones, products=b.products)
    return problem, index


def solve_upper(system, scen, investments, tie_limits, pins, products=PRODUCTS,
                merged=False, tol=1e-8) -> UpperLevelSolution:
    problem, ix = build_upper_lp(system, scen, investments, tie_limits, pins,
                                 products, merged)
    sol = qp.solve(problem, tol=tol)
    if not qp.acceptable(sol):
        raise UpperLevelError(
            f"upper-level solve ended {sol.status.value} at pins {pins} "
            f"({sol.message})")
    x = sol.x
    market = system.market
    pi = scen.probabilities
    horizon, n_w = scen.n_periods, scen.n_scenarios

    unit_cp = {uid: float(x[j]) for uid, j in ix.pc.items()}
    unit_fr = {uid: float(x[j]) for uid, j in ix.pf.items()}
    tie_cp = {tid: float(x[j]) for tid, j in ix.co.items()}
    tie_fr = {tid: float(x[j]) for tid, j in ix.fo.items()}

    shortfalls = {}
    for prod in ix.products:
        arr = np.zeros((len(ix.zones.ids), horizon, n_w))
        for zi, zid in enumerate(ix.zones.ids):
            for t in range(horizon):
                for w in range(n_w):
                    arr[zi, t, w] = x[ix.short[(prod, zid, t, w)]]
        shortfalls[prod] = arr

    duals = {key: float(sol.y_eq[row]) for key, row in ix.pin_rows.items()}

    cost_capacity = sum(system.unit(uid).cp_cost * v for uid, v in unit_cp.items())
    cost_capacity += sum(system.ties[i].capacity_cost_cp * abs(tie_cp[t.id])
                         for i, t in enumerate(system.ties) if t.id in tie_cp)
    cost_fr = sum(system.unit(uid).cf_cost * v for uid, v in unit_fr.items())
    cost_fr += sum(t.capacity_cost_cf * abs(tie_fr[t.id])
                   for t in system.ties if t.id in tie_fr)

    voll = {"CP": market.voll_peak, "CF": market.voll_fluctuate,
            "CM": market.voll_inertia, "CR": market.voll_recover}
    loss_peak = float((shortfalls.get("CP", np.zeros((1, 1, 1))) * pi).sum()
                      * voll["CP"]) if "CP" in shortfalls else 0.0
    loss_fr = 0.0
    for prod in FR_PRODUCTS:
        if prod in shortfalls:
            loss_fr += float((shortfalls[prod] * pi).sum() * voll[prod])

    return UpperLevelSolution(
        pinned=dict(pins), unit_cp=unit_cp, unit_fr=unit_fr,
        tie_cp=tie_cp, tie_fr=tie_fr, shortfalls=shortfalls, duals=duals,
        objective=float(sol.objective), cost_capacity=cost_capacity,
        cost_fr=cost_fr, loss_peak=loss_peak, loss_fr=loss_fr)


# ----------------------------------------------------------------------
# sweep and assembly


def isotonic_decreasing(values: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit of the best nonincreasing sequence."""
    vals = [float(v) for v in values]
    weights = [1.0] * len(vals)
    blocks = []
    for v, w in zip(vals, weights):
        blocks.append([v, w])
        while len(blocks) > 1 and blocks[-2][0] < blocks[-1][0]:
            v2, w2 = blocks.pop()
            v1, w1 = blocks.pop()
            blocks.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2])
    out = []
    for v, w in blocks:
        out.extend([v] * int(round(w)))
    return np.array(out)


def _no_shortfall_targets(system, scen, zones, products):
    req = _zone_requirements(area_requirements(system, scen), zones)
    targets = {}
    for zi, zid in enumerate(zones.ids):
        for prod in products:
            arr = req[prod][zi]
            hi = float(np.max(np.abs(arr))) if prod == "CF" else float(np.max(arr))
            targets[(zid, prod)] = max(hi, 0.0)
    return targets


def sweep_and_assemble(system: SystemModel, scen: ScenarioSet, investments: dict,
                       tie_limits: dict, grid_points: int = 10,
                       products=PRODUCTS, merged: bool = False):
    """Solve the upper level over each product's quantity grid and fit the
    demand curves. Returns (DemandCurveSet, {(zone, product): [solutions]}).

    Each product is swept independently: its balance is pinned at the grid
    quantity while every other product's quantity re-optimizes freely.
    (Pinning all products at once is generically infeasible: a zone's
    ramping/inertia/recovery provision vectors span only the cone of its
    unit coefficient vectors.)
    """
    if grid_points < 2:
        raise UpperLevelError("grid needs at least 2 points")
    products = tuple(p for p in PRODUCTS if p in products)
    builder = _Builder(system, scen, investments, tie_limits, products, merged)
    zones = builder.zones
    targets = _no_shortfall_targets(system, scen, zones, products)

    market = system.market
    caps = {p: market.price_cap(p) for p in products}
    days = market.capacity_days_per_year

    curves = {}
    sweeps = {}
    for zid in zones.ids:
        for prod in products:
            q_hi = min(targets[(zid, prod)],
                       _deliverability_bound(builder, zid, prod))
            if q_hi <= 1e-9:
                curves[(zid, prod)] = DemandCurve(
                    zone_id=zid, product=prod, price_cap=caps[prod], segments=(),
                    grid_q=np.zeros(0), raw_duals=np.zeros(0), prices=np.zeros(0))
                sweeps[(zid, prod)] = []
                continue
            grid = np.linspace(0.0, q_hi, grid_points)
            duals = np.zeros(grid_points)
            sols = []
            for gi, qg in enumerate(grid):
                point = {(zid, prod): float(qg)}
                try:
                    sol = solve_upper(system, scen, investments, tie_limits, point,
                                      products, merged)
                except UpperLevelError as exc:
                    raise UpperLevelError(
                        f"sweep failed at zone {zid}, product {prod}, "
                        f"grid point {gi} (q={qg:.3f}): {exc}") from exc
                duals[gi] = sol.duals[(zid, prod)]
                sols.append(sol)
            daily = duals / days
            prices = isotonic_decreasing(np.clip(daily, 0.0, caps[prod]))
            segments = []
            for gi in range(grid_points - 1):
                q_lo, q_hi_seg = float(grid[gi]), float(grid[gi + 1])
                if q_hi_seg - q_lo <= 1e-12:
                    continue
                p_lo, p_hi = float(prices[gi]), float(prices[gi + 1])
                slope = (p_lo - p_hi) / (q_hi_seg - q_lo)
                intercept = p_lo + slope * q_lo
                segments.append(CurveSegment(q_lo, q_hi_seg, intercept, slope))
            curves[(zid, prod)] = DemandCurve(
                zone_id=zid, product=prod, price_cap=caps[prod],
                segments=tuple(segments), grid_q=grid, raw_duals=duals,
                prices=prices)
            sweeps[(zid, prod)] = sols
    return DemandCurveSet(curves=curves, merged=merged), sweeps
