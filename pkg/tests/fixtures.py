"""Shared builders for test systems and scenario tables."""

import io
import csv

import numpy as np

from flexcap.model import load_scenarios, load_system

# per-type performance parameters: invest EUR/kW, duration yr, confidence,
# ramping, inertia s, available-time h
UNIT_TYPES = {
    "re":  dict(invest=650.0, years=25, alpha=0.4),
    "tu1": dict(invest=780.0, years=30, alpha=1.0, sigma=0.6, h=4.0, tau=0.13),
    "tu2": dict(invest=1040.0, years=35, alpha=1.0, sigma=0.65, h=4.0, tau=0.16),
    "tu3": dict(invest=1300.0, years=40, alpha=1.0, sigma=0.8, h=8.0, tau=0.33),
    "es1": dict(invest=1040.0, years=25, alpha=0.6, sigma=0.9, h=10.0, tau=0.45),
    "es2": dict(invest=1300.0, years=20, alpha=0.5, sigma=1.0, h=0.0, tau=0.48),
}


def unit_yaml(uid, area, kind, existing, max_invest, type_key, mc=0.0,
              storage=None, **extra):
    t = UNIT_TYPES[type_key]
    lines = [
        f"  - id: {uid}",
        f"    area: {area}",
        f"    kind: {kind}",
        f"    existing_mw: {existing}",
        f"    max_invest_mw: {max_invest}",
        f"    invest_cost_eur_per_kw: {t['invest']}",
        f"    invest_duration_years: {t['years']}",
        f"    confidence_coeff: {t['alpha']}",
        f"    marginal_cost_eur_per_mwh: {mc}",
    ]
    if "sigma" in t:
        lines += [
            f"    ramping_coeff: {t['sigma']}",
            f"    inertia_constant_s: {t['h']}",
            f"    available_time_coeff_h: {t['tau']}",
        ]
    for key, val in extra.items():
        lines.append(f"    {key}: {val}")
    if storage:
        lines.append("    storage:")
        for key, val in storage.items():
            lines.append(f"      {key}: {val}")
    return "\n".join(lines)


def market_yaml(horizon=4, voll_peak=3000.0, voll_fluct=1500.0, voll_inertia=40.0,
                voll_recover=2500.0, cap_cp=260.0, cap_cf=260.0, cap_cm=30.0,
                cap_cr=400.0, energy_cap=90.0, elasticity=0.25, lrmc=45.0):
    return f"""market:
  voll_peak: {voll_peak}
  voll_fluctuate: {voll_fluct}
  voll_inertia: {voll_inertia}
  voll_recover: {voll_recover}
  price_cap_cp: {cap_cp}
  price_cap_cf: {cap_cf}
  price_cap_cm: {cap_cm}
  price_cap_cr: {cap_cr}
  energy_price_cap: {energy_cap}
  horizon: {horizon}
  demand_elasticity: {elasticity}
  long_run_marginal_cost: {lrmc}
"""


def single_area_yaml(horizon=2, existing=100.0, max_invest=50.0, voll_peak=3000.0,
                     voll_fluct=1500.0, voll_inertia=40.0, voll_recover=2500.0,
                     budget=1.0, mc=20.0, **market_kw):
    """One area, one thermal unit, one genco."""
    units = unit_yaml("U1", "A1", "thermal", existing, max_invest, "tu3", mc=mc)
    return f"""schema_version: 1
{market_yaml(horizon=horizon, voll_peak=voll_peak, voll_fluct=voll_fluct,
             voll_inertia=voll_inertia, voll_recover=voll_recover, **market_kw)}
areas:
  - id: A1
    f0_hz: 50.0
    rocof_max_hz_per_s: 2.0
    load_loss_share: 0.2
    loss_fraction: {{kind: constant, value: 0.5}}
    blackout_duration_h: 0.5
gencos:
  - id: G1
    owned_units: [U1]
    invest_budget_ratio: {budget}
units:
{units}
"""


def scenario_csv(system, demand, demand_fluct, re_output, re_fluct, probs,
                 scenario_ids=None):
    """Build the scenario table from arrays shaped [entity, T, omega]."""
    demand = np.asarray(demand, dtype=float)
    n_w = demand.shape[2]
    scenario_ids = scenario_ids or [f"w{i+1}" for i in range(n_w)]
    area_ids = [a.id for a in system.areas]
    re_ids = [u.id for u in system.re_units]
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["scenario", "t", "id", "quantity", "fluctuation"])
    for wi, sid in enumerate(scenario_ids):
        w.writerow([sid, 0, "__probability__", probs[wi], 0.0])
        for ai, aid in enumerate(area_ids):
            for t in range(demand.shape[1]):
                w.writerow([sid, t + 1, aid, demand[ai, t, wi],
                            np.asarray(demand_fluct)[ai, t, wi]])
        for ri, rid in enumerate(re_ids):
            for t in range(demand.shape[1]):
                w.writerow([sid, t + 1, rid, np.asarray(re_output)[ri, t, wi],
                            np.asarray(re_fluct)[ri, t, wi]])
    return buf.getvalue()


def simple_case(horizon=2, demand_peak=80.0, fluct=8.0, **kw):
    """Single-area system plus a deterministic one-scenario set."""
    system = load_system(single_area_yaml(horizon=horizon, **kw))
    demand = np.full((1, horizon, 1), demand_peak)
    dfluct = np.full((1, horizon, 1), fluct)
    re_out = np.zeros((0, horizon, 1))
    scen = load_scenarios(
        scenario_csv(system, demand, dfluct, re_out, re_out, [1.0]), system)
    return system, scen
