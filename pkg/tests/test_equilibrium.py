import numpy as np
import pytest

from flexcap.curves import CurveSegment, DemandCurve, DemandCurveSet
from flexcap.equilibrium import (
    EquilibriumError, best_response_check, build_equivalent_qp,
    energy_inverse_demand, genco_profit, result_point, solve_equilibrium,
    _rival_context,
)
from flexcap.model import load_scenarios, load_system
from fixtures import scenario_csv, unit_yaml

NO_CURVES = DemandCurveSet(curves={}, merged=False)


def cournot_yaml(n_gencos, demand=30.0, elasticity=2.0, lrmc=60.0, mc=0.0,
                 existing=1000.0, max_invest=0.0, budget=0.0):
    """One area, n identical thermal gencos, energy market only.

    The inverse-demand calibration yields a = lrmc*(1 + 1/elasticity) and
    b = lrmc/(elasticity*demand).
    """
    gencos = []
    units = []
    for i in range(1, n_gencos + 1):
        gencos.append(f"  - id: G{i}\n    owned_units: [U{i}]\n"
                      f"    invest_budget_ratio: {budget}")
        units.append(unit_yaml(f"U{i}", "A1", "thermal", existing, max_invest,
                               "tu1", mc=mc))
    return f"""schema_version: 1
market:
  voll_peak: 0.0
  voll_fluctuate: 0.0
  voll_inertia: 0.0
  voll_recover: 0.0
  price_cap_cp: 260.0
  price_cap_cf: 260.0
  price_cap_cm: 30.0
  price_cap_cr: 400.0
  energy_price_cap: 1.0e9
  horizon: 1
  demand_elasticity: {elasticity}
  long_run_marginal_cost: {lrmc}
areas:
  - id: A1
    f0_hz: 50.0
    rocof_max_hz_per_s: 2.0
    load_loss_share: 0.0
    loss_fraction: 0.0
    blackout_duration_h: 0.5
gencos:
{chr(10).join(gencos)}
units:
{chr(10).join(units)}
"""


def cournot_case(n_gencos, **kw):
    system = load_system(cournot_yaml(n_gencos, **kw))
    demand = np.array([[[kw.get("demand", 30.0)]]])
    zeros1 = np.zeros((1, 1, 1))
    zeros0 = np.zeros((0, 1, 1))
    scen = load_scenarios(
        scenario_csv(system, demand, zeros1, zeros0, zeros0, [1.0]), system)
    return system, scen


class TestEnergyCalibration:
    def test_elasticity_pins_slope_and_intercept(self):
        system, scen = cournot_case(1)
        a, b = energy_inverse_demand(system, scen)
        # lrmc=60, elasticity=2, ref=30: b = 60/(2*30) = 1, a = 60*(1+1/2) = 90
        assert b[0, 0, 0] == pytest.approx(1.0)
        assert a[0, 0, 0] == pytest.approx(90.0)


class TestCournotClosedForm:
    @pytest.mark.parametrize("n", [1, 2, 3, 5])
    def test_symmetric_quantities(self, n):
        system, scen = cournot_case(n)
        eq = build_equivalent_qp(system, scen, NO_CURVES)
        result = solve_equilibrium(eq)
        a, b = 90.0, 1.0
        q_expected = a / (b * (n + 1))
        for i in range(1, n + 1):
            out = result.dispatch[f"U{i}"][0, 0]
            assert out == pytest.approx(q_expected, rel=1e-6)
        assert result.energy_cleared[0, 0, 0] == pytest.approx(
            n * q_expected, rel=1e-6)
        assert result.energy_prices_raw[0, 0, 0] == pytest.approx(
            a / (n + 1), rel=1e-6)

    def test_duopoly_profit(self):
        system, scen = cournot_case(2)
        eq = build_equivalent_qp(system, scen, NO_CURVES)
        result = solve_equilibrium(eq)
        # p*q with zero cost, scaled by the annual energy weight (8760/T, T=1)
        a, b = 90.0, 1.0
        want = 8760.0 * a * a / (9.0 * b)
        for gid in ("G1", "G2"):
            assert result.accounts[gid].profit == pytest.approx(want, rel=1e-5)

    @pytest.mark.parametrize("n", [1, 2, 3, 5])
    def test_best_response_certificate(self, n):
        system, scen = cournot_case(n)
        eq = build_equivalent_qp(system, scen, NO_CURVES)
        result = solve_equilibrium(eq)
        for i in range(1, n + 1):
            gid = f"G{i}"
            improvement = best_response_check(eq, result, gid)
            assert improvement <= 1e-6 * abs(result.accounts[gid].profit)

    def test_perturbed_point_fails_certificate(self):
        system, scen = cournot_case(2)
        eq = build_equivalent_qp(system, scen, NO_CURVES)
        result = solve_equilibrium(eq)
        # push G1's quantity 10% off the equilibrium: the check must report
        # a strictly positive profitable deviation back toward it
        result.dispatch["U1"] = result.dispatch["U1"] * 1.1
        improvement = best_response_check(eq, result, "G1")
        assert improvement > 1.0

    def test_null_player(self):
        text = cournot_yaml(2)
        text = text.replace("gencos:", "gencos:\n  - id: G0\n    owned_units: []\n"
                            "    invest_budget_ratio: 0.0")
        system = load_system(text)
        demand = np.array([[[30.0]]])
        zeros1 = np.zeros((1, 1, 1))
        zeros0 = np.zeros((0, 1, 1))
        scen = load_scenarios(
            scenario_csv(system, demand, zeros1, zeros0, zeros0, [1.0]), system)
        eq = build_equivalent_qp(system, scen, NO_CURVES)
        result = solve_equilibrium(eq)
        q_expected = 90.0 / 3.0
        assert result.dispatch["U1"][0, 0] == pytest.approx(q_expected, rel=1e-6)
        assert best_response_check(eq, result, "G0") == 0.0

    def test_profit_decomposition_sums(self):
        system, scen = cournot_case(3, mc=5.0)
        eq = build_equivalent_qp(system, scen, NO_CURVES)
        result = solve_equilibrium(eq)
        for gid, acct in result.accounts.items():
            assert acct.profit == pytest.approx(
                acct.energy_revenue + acct.capacity_revenue
                - acct.invest_cost - acct.generation_cost, abs=1e-9)


def single_segment_curveset(zone, product, intercept, slope, q_max, cap=1e9):
    curve = DemandCurve(zone_id=zone, product=product, price_cap=cap,
                        segments=(CurveSegment(0.0, q_max, intercept, slope),),
                        grid_q=np.array([0.0, q_max]),
                        raw_duals=np.array([intercept, intercept - slope * q_max]),
                        prices=np.array([intercept, intercept - slope * q_max]))
    return curve


class TestCapacityMarket:
    def _case(self, n=2, invest_max=200.0, rho_override=None):
        system, scen = cournot_case(n, max_invest=invest_max, budget=5.0,
                                    existing=50.0)
        return system, scen

    def test_capacity_cournot_closed_form(self):
        # capacity-only competition: linear demand curve, cheap existing
        # capacity, zero energy value (demand ~ 0 handled by tiny load)
        system, scen = cournot_case(2, demand=1e-6, existing=1000.0)
        a_c, b_c = 200.0, 0.5
        curves = DemandCurveSet(curves={
            ("A1", "CP"): single_segment_curveset("A1", "CP", a_c, b_c, 1000.0)})
        eq = build_equivalent_qp(system, scen, curves)
        result = solve_equilibrium(eq)
        # offers are costless up to the confidence cap: Cournot in quantities
        q_expected = a_c / (b_c * 3.0)
        total = sum(result.offers_cp.values())
        assert total == pytest.approx(2 * q_expected, rel=1e-5)
        assert result.prices[("A1", "CP")] == pytest.approx(a_c / 3.0, rel=1e-5)

    def test_flat_curve_rejected(self):
        system, scen = cournot_case(1)
        curves = DemandCurveSet(curves={
            ("A1", "CP"): single_segment_curveset("A1", "CP", 100.0, 0.0, 50.0)})
        with pytest.raises(EquilibriumError, match="b = 0"):
            build_equivalent_qp(system, scen, curves)

    def test_unprofitable_investment_stays_zero(self):
        # annualized cost far above any revenue: no new build
        system, scen = cournot_case(2, max_invest=100.0, budget=5.0,
                                    existing=10.0, lrmc=1.0, demand=5.0)
        eq = build_equivalent_qp(system, scen, NO_CURVES)
        result = solve_equilibrium(eq)
        for uid, val in result.investments.items():
            assert val <= 1e-6

    def test_capacity_revenue_drives_investment(self):
        # no energy value, generous capacity demand curve above the
        # annualized cost of tu1 (26 EUR/kW-yr ~= 71 EUR/MW-day)
        system, scen = cournot_case(1, demand=1e-6, existing=10.0,
                                    max_invest=300.0, budget=50.0)
        curves = DemandCurveSet(curves={
            ("A1", "CP"): single_segment_curveset("A1", "CP", 250.0, 0.4, 800.0)})
        eq = build_equivalent_qp(system, scen, curves)
        result = solve_equilibrium(eq)
        assert result.investments["U1"] > 1.0
        improvement = best_response_check(eq, result, "G1")
        assert improvement <= 1e-6 * (1 + abs(result.accounts["G1"].profit))
