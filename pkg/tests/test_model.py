import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexcap.model import (
    ConfigError, UnitKind, annualize_invest_cost, emit_scenarios, emit_system,
    load_scenarios, load_system, sample_scenario_probabilities,
)
from fixtures import market_yaml, scenario_csv, single_area_yaml, unit_yaml


TWO_AREA = f"""schema_version: 1
{market_yaml(horizon=2)}
areas:
  - id: A1
    f0_hz: 50.0
    rocof_max_hz_per_s: 2.0
    load_loss_share: 0.2
    loss_fraction: 0.5
    blackout_duration_h: 0.5
  - id: A2
    f0_hz: 50.0
    rocof_max_hz_per_s: 2.0
    load_loss_share: 0.1
    loss_fraction: {{kind: piecewise, points: [[0, 0.2], [100, 0.6]]}}
    blackout_duration_h: 0.5
ties:
  - id: L1
    from_area: A2
    to_area: A1
    capacity_mw: 50.0
gencos:
  - id: G1
    owned_units: [W1, TU3_1]
    invest_budget_ratio: 0.7
  - id: G2
    owned_units: [TU1_2, ES1_2]
    invest_budget_ratio: 0.5
units:
{unit_yaml("W1", "A1", "wind", 100.0, 60.0, "re")}
{unit_yaml("TU3_1", "A1", "thermal", 20.0, 50.0, "tu3", mc=22.0)}
{unit_yaml("TU1_2", "A2", "thermal", 60.0, 80.0, "tu1", mc=30.0)}
{unit_yaml("ES1_2", "A2", "storage", 5.0, 10.0, "es1",
           storage=dict(charge_eff=0.95, discharge_eff=0.95, energy_cap_mwh=20.0,
                        initial_energy_mwh=10.0, charge_cost_eur_per_mw=20.0))}
"""


class TestAnnualize:
    def test_straight_line(self):
        # 650 EUR/kW over 25 years, zero rate: 650*1000/25
        assert annualize_invest_cost(650.0, 25, 0.0) == pytest.approx(26_000.0)

    def test_single_year(self):
        for c in (1.0, 123.4, 999.0):
            assert annualize_invest_cost(c, 1, 0.0) == pytest.approx(1000.0 * c)

    def test_capital_recovery_factor(self):
        # frozen from a high-precision evaluation of 1000*780*r(1+r)^n/((1+r)^n-1)
        assert annualize_invest_cost(780.0, 30, 0.05) == pytest.approx(
            50740.11936261572, rel=1e-12)

    def test_bad_duration(self):
        with pytest.raises(ConfigError):
            annualize_invest_cost(100.0, 0, 0.0)


class TestLoadSystem:
    def test_table_unit_block(self):
        system = load_system(TWO_AREA)
        tu3 = system.unit("TU3_1")
        assert tu3.kind is UnitKind.THERMAL
        assert tu3.invest_cost_eur_per_kw == 1300.0
        assert tu3.invest_duration_years == 40
        assert tu3.confidence_coeff == 1.0
        assert tu3.ramping_coeff == 0.8
        assert tu3.inertia_constant_s == 8.0
        assert tu3.available_time_coeff_h == 0.33
        assert tu3.annualized_invest_cost == pytest.approx(1300.0 * 1000 / 40)
        assert tu3.genco_id == "G1"

    def test_empty_units(self):
        text = TWO_AREA.split("units:")[0] + "units: []\n"
        with pytest.raises(ConfigError, match="no units defined"):
            load_system(text)

    def test_dangling_unit_reference(self):
        text = TWO_AREA.replace("owned_units: [W1, TU3_1]",
                                "owned_units: [W1, TU3_1, GHOST]")
        with pytest.raises(ConfigError, match="unknown unit id 'GHOST'"):
            load_system(text)

    def test_unit_owned_twice(self):
        text = TWO_AREA.replace("owned_units: [TU1_2, ES1_2]",
                                "owned_units: [TU1_2, ES1_2, W1]")
        with pytest.raises(ConfigError, match="more than one genco"):
            load_system(text)

    def test_unowned_unit(self):
        text = TWO_AREA.replace("owned_units: [W1, TU3_1]", "owned_units: [W1]")
        with pytest.raises(ConfigError, match="not owned by any genco"):
            load_system(text)

    def test_re_with_performance_coeffs(self):
        text = TWO_AREA.replace('    kind: wind',
                                '    kind: wind\n    ramping_coeff: 0.5')
        with pytest.raises(ConfigError, match="generation capability only"):
            load_system(text)

    def test_bad_alpha(self):
        text = TWO_AREA.replace("confidence_coeff: 0.4", "confidence_coeff: 1.4")
        with pytest.raises(ConfigError, match="confidence_coeff"):
            load_system(text)

    def test_wrong_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            load_system(TWO_AREA.replace("schema_version: 1", "schema_version: 99"))

    def test_round_trip(self):
        system = load_system(TWO_AREA)
        again = load_system(emit_system(system))
        assert again == system

    def test_tie_sign_convention(self):
        system = load_system(TWO_AREA)
        tie = system.ties[0]
        # positive into the lexicographically greater area id
        assert tie.incidence("A2") == 1.0
        assert tie.incidence("A1") == -1.0
        assert tie.incidence("A9") == 0.0

    def test_tie_coefficient_default_is_external_mean(self):
        system = load_system(TWO_AREA)
        # A1 imports from A2's non-RE fleet: TU1 (60 MW) and ES1 (5 MW)
        want = (60.0 * 0.6 + 5.0 * 0.9) / 65.0
        assert system.tie_coefficient("A1", "CF") == pytest.approx(want)
        want_h = (60.0 * 4.0 + 5.0 * 10.0) / 65.0
        assert system.tie_coefficient("A1", "CM") == pytest.approx(want_h)

    def test_tie_coefficient_explicit_override(self):
        text = TWO_AREA.replace("load_loss_share: 0.2",
                                "load_loss_share: 0.2\n    tie_ramping_coeff: 0.42")
        system = load_system(text)
        assert system.tie_coefficient("A1", "CF") == 0.42


class TestScenarios:
    def _system(self):
        return load_system(TWO_AREA)

    def _arrays(self, system, n_w=2, horizon=2):
        rng = np.random.default_rng(3)
        demand = rng.uniform(50, 100, (2, horizon, n_w))
        dfluct = rng.uniform(-5, 10, (2, horizon, n_w))
        re_out = rng.uniform(0, 40, (1, horizon, n_w))
        re_fl = rng.uniform(-8, 8, (1, horizon, n_w))
        return demand, dfluct, re_out, re_fl

    def test_load_and_round_trip(self):
        system = self._system()
        arrs = self._arrays(system)
        text = scenario_csv(system, *arrs, probs=[0.5, 0.5])
        scen = load_scenarios(text, system)
        assert scen.n_periods == 2 and scen.n_scenarios == 2
        again = load_scenarios(emit_scenarios(scen), system)
        np.testing.assert_array_equal(again.demand, scen.demand)
        np.testing.assert_array_equal(again.re_fluct, scen.re_fluct)
        np.testing.assert_array_equal(again.probabilities, scen.probabilities)

    def test_probability_renormalized_with_warning(self):
        system = self._system()
        arrs = self._arrays(system)
        text = scenario_csv(system, *arrs, probs=[0.5, 0.5 + 2e-7])
        with pytest.warns(UserWarning, match="renormalized"):
            scen = load_scenarios(text, system)
        assert scen.probabilities.sum() == pytest.approx(1.0, abs=1e-12)

    def test_probability_error_beyond_tolerance(self):
        system = self._system()
        arrs = self._arrays(system)
        text = scenario_csv(system, *arrs, probs=[0.6, 0.6])
        with pytest.raises(ConfigError, match="probabilities sum"):
            load_scenarios(text, system)

    def test_missing_series_value(self):
        system = self._system()
        arrs = self._arrays(system)
        text = scenario_csv(system, *arrs, probs=[0.5, 0.5])
        lines = text.strip().splitlines()
        del lines[3]
        with pytest.raises(ConfigError, match="missing series value"):
            load_scenarios("\n".join(lines), system)

    def test_unknown_id(self):
        system = self._system()
        arrs = self._arrays(system)
        text = scenario_csv(system, *arrs, probs=[0.5, 0.5]).replace("A2", "XX")
        with pytest.raises(ConfigError, match="neither an"):
            load_scenarios(text, system)

    def test_negative_output_rejected(self):
        system = self._system()
        demand, dfluct, re_out, re_fl = self._arrays(system)
        re_out[0, 0, 0] = -1.0
        text = scenario_csv(system, demand, dfluct, re_out, re_fl, probs=[0.5, 0.5])
        with pytest.raises(ConfigError, match="nonnegative"):
            load_scenarios(text, system)


class TestProbabilitySampler:
    def test_normalized_and_deterministic(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p1 = sample_scenario_probabilities(12, seed=5)
            p2 = sample_scenario_probabilities(12, seed=5)
        assert p1.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p1 > 0)
        np.testing.assert_array_equal(p1, p2)

    def test_clamps_unreachable_skewness(self):
        with pytest.warns(UserWarning, match="clamped"):
            sample_scenario_probabilities(8, seed=1, skewness=1.5)

    def test_attainable_skew_no_warning(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            p = sample_scenario_probabilities(500, seed=2, skewness=0.5)
        assert p.shape == (500,)


@settings(max_examples=20, deadline=None)
@given(st.floats(1.0, 5000.0), st.integers(1, 60), st.floats(0.0, 0.3))
def test_annualize_positive_and_monotone_in_rate(cost, years, rate):
    rho = annualize_invest_cost(cost, years, rate)
    assert rho > 0
    assert rho >= annualize_invest_cost(cost, years, 0.0) - 1e-9
