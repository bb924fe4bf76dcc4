#!/usr/bin/env python3
"""Generate the bundled two-area study: system config + scenario table.

Deterministic (fixed seed). Area A1 carries most of the renewable fleet
and a thin thermal fleet; A2 is the opposite. Three gencos split the
units: K1 owns A1's TU3 and storage, K2 owns A1's RE/TU1/TU2 plus all of
A2's thermal units, K3 owns A2's RE and storage.

Usage: python scripts/make_two_area_data.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

HORIZON = 6          # four-hour blocks of a representative day
N_SCEN = 3
PROBS = [0.5, 0.35, 0.15]
TIE_MW = 50.0

# per-type performance parameters (invest EUR/kW, life yr, confidence,
# ramping, inertia s, available h)
TYPES = {
    "re":  dict(invest=650.0, years=25, alpha=0.4),
    "tu1": dict(invest=780.0, years=30, alpha=1.0, sigma=0.6, h=4.0, tau=0.13),
    "tu2": dict(invest=1040.0, years=35, alpha=1.0, sigma=0.65, h=4.0, tau=0.16),
    "tu3": dict(invest=1300.0, years=40, alpha=1.0, sigma=0.8, h=8.0, tau=0.33),
    "es1": dict(invest=1040.0, years=25, alpha=0.6, sigma=0.9, h=10.0, tau=0.45),
    "es2": dict(invest=1300.0, years=20, alpha=0.5, sigma=1.0, h=0.0, tau=0.48),
}

# id, area, kind, type, existing MW, max invest MW, marginal cost EUR/MWh
UNITS = [
    ("W1",    "A1", "wind",    "re",  100.0, 60.0, 0.0),
    ("S1",    "A1", "solar",   "re",   40.0, 30.0, 0.0),
    ("TU1_1", "A1", "thermal", "tu1",  25.0, 50.0, 34.0),
    ("TU2_1", "A1", "thermal", "tu2",  25.0, 50.0, 28.0),
    ("TU3_1", "A1", "thermal", "tu3",  15.0, 50.0, 24.0),
    ("ES1_1", "A1", "storage", "es1",   6.0, 10.0, 0.0),
    ("ES2_1", "A1", "storage", "es2",   5.0, 10.0, 0.0),
    ("W2",    "A2", "wind",    "re",   20.0, 30.0, 0.0),
    ("S2",    "A2", "solar",   "re",   10.0, 15.0, 0.0),
    ("TU1_2", "A2", "thermal", "tu1",  70.0, 80.0, 34.0),
    ("TU2_2", "A2", "thermal", "tu2",  60.0, 80.0, 28.0),
    ("TU3_2", "A2", "thermal", "tu3",  40.0, 80.0, 24.0),
    ("ES1_2", "A2", "storage", "es1",   6.0, 10.0, 0.0),
    ("ES2_2", "A2", "storage", "es2",   5.0, 10.0, 0.0),
]

GENCOS = {
    "K1": (["TU3_1", "ES1_1", "ES2_1"], 0.7),
    "K2": (["W1", "S1", "TU1_1", "TU2_1", "TU1_2", "TU2_2", "TU3_2"], 0.5),
    "K3": (["W2", "S2", "ES1_2", "ES2_2"], 0.7),
}

# capacity purchase-cost estimates used by the curve formulation, EUR/MW-yr
CAP_COST_CP = 6000.0
CAP_COST_CF = 4000.0

LOAD_SHAPE = np.array([0.62, 0.58, 0.75, 0.92, 1.00, 0.86])
PEAK = {"A1": 120.0, "A2": 115.0}
WIND_CF = np.array([
    [0.46, 0.50, 0.42, 0.30, 0.34, 0.44],     # windy scenario
    [0.30, 0.32, 0.26, 0.20, 0.22, 0.28],     # average
    [0.10, 0.12, 0.08, 0.05, 0.06, 0.09],     # calm / stressed
])
SOLAR_CF = np.array([
    [0.00, 0.05, 0.48, 0.62, 0.22, 0.00],
    [0.00, 0.04, 0.36, 0.45, 0.16, 0.00],
    [0.00, 0.02, 0.15, 0.20, 0.07, 0.00],
])
DEMAND_SCALE = [0.96, 1.00, 1.07]            # per scenario
DEMAND_FLUCT_FRAC = [0.045, 0.06, 0.09]
RE_FLUCT_FRAC = [0.18, 0.22, 0.30]


def system_yaml(tie_mw=TIE_MW):
    lines = [
        "schema_version: 1",
        "market:",
        "  voll_peak: 60000.0",
        "  voll_fluctuate: 35000.0",
        "  voll_inertia: 2200.0",
        "  voll_recover: 25000.0",
        "  price_cap_cp: 260.0",
        "  price_cap_cf: 260.0",
        "  price_cap_cm: 30.0",
        "  price_cap_cr: 400.0",
        "  energy_price_cap: 90.0",
        f"  horizon: {HORIZON}",
        "  demand_elasticity: 0.35",
        "  long_run_marginal_cost: 45.0",
        "areas:",
    ]
    for aid, share, frac in (("A1", 0.18, 0.45), ("A2", 0.15, 0.4)):
        lines += [
            f"  - id: {aid}",
            "    f0_hz: 50.0",
            "    rocof_max_hz_per_s: 2.0",
            f"    load_loss_share: {share}",
            f"    loss_fraction: {{kind: constant, value: {frac}}}",
            "    blackout_duration_h: 0.5",
        ]
    lines += [
        "ties:",
        "  - id: L12",
        "    from_area: A1",
        "    to_area: A2",
        f"    capacity_mw: {tie_mw}",
        "    capacity_cost_cp: 500.0",
        "    capacity_cost_cf: 500.0",
        "gencos:",
    ]
    for gid, (owned, ratio) in GENCOS.items():
        lines += [f"  - id: {gid}",
                  f"    owned_units: [{', '.join(owned)}]",
                  f"    invest_budget_ratio: {ratio}"]
    lines.append("units:")
    for uid, area, kind, tkey, exist, mx, mc in UNITS:
        t = TYPES[tkey]
        lines += [
            f"  - id: {uid}",
            f"    area: {area}",
            f"    kind: {kind}",
            f"    existing_mw: {exist}",
            f"    max_invest_mw: {mx}",
            f"    invest_cost_eur_per_kw: {t['invest']}",
            f"    invest_duration_years: {t['years']}",
            f"    confidence_coeff: {t['alpha']}",
            f"    marginal_cost_eur_per_mwh: {mc}",
            f"    capacity_cost_cp: {CAP_COST_CP}",
            f"    capacity_cost_cf: {CAP_COST_CF}",
        ]
        if "sigma" in t:
            lines += [
                f"    ramping_coeff: {t['sigma']}",
                f"    inertia_constant_s: {t['h']}",
                f"    available_time_coeff_h: {t['tau']}",
            ]
        if kind == "storage":
            lines += [
                "    storage:",
                "      charge_eff: 0.95",
                "      discharge_eff: 0.95",
                f"      energy_cap_mwh: {4 * exist}",
                f"      initial_energy_mwh: {2 * exist}",
                "      charge_cost_eur_per_mw: 20.0",
            ]
    return "\n".join(lines) + "\n"


def scenario_rows():
    rng = np.random.default_rng(42)
    rows = [("scenario", "t", "id", "quantity", "fluctuation")]
    for w in range(N_SCEN):
        sid = f"w{w+1}"
        rows.append((sid, 0, "__probability__", PROBS[w], 0.0))
        for aid in ("A1", "A2"):
            base = PEAK[aid] * LOAD_SHAPE * DEMAND_SCALE[w]
            noise = 1.0 + 0.02 * rng.standard_normal(HORIZON)
            demand = np.round(base * noise, 3)
            fluct = np.round(demand * DEMAND_FLUCT_FRAC[w]
                             * (1.0 + 0.15 * rng.standard_normal(HORIZON)), 3)
            for t in range(HORIZON):
                rows.append((sid, t + 1, aid, demand[t], fluct[t]))
        for uid, area, kind, tkey, exist, mx, mc in UNITS:
            if kind not in ("wind", "solar"):
                continue
            cf = WIND_CF[w] if kind == "wind" else SOLAR_CF[w]
            noise = np.clip(1.0 + 0.05 * rng.standard_normal(HORIZON), 0.5, 1.5)
            out = np.round(exist * cf * noise, 3)
            # RE fluctuation opposes load tracking: downward swings dominate
            sign = np.where(rng.standard_normal(HORIZON) > 0.25, -1.0, 1.0)
            fl = np.round(out * RE_FLUCT_FRAC[w] * sign, 3)
            for t in range(HORIZON):
                rows.append((sid, t + 1, uid, out[t], fl[t]))
    return rows


def main():
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parent.parent / "data"
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "two_area_system.yaml").write_text(system_yaml())
    rows = scenario_rows()
    with open(outdir / "two_area_scenarios.csv", "w") as fh:
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    print(f"wrote {outdir / 'two_area_system.yaml'}")
    print(f"wrote {outdir / 'two_area_scenarios.csv'}")


if __name__ == "__main__":
    main()
