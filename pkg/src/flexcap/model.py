"""Domain model for the multi-area system and market configuration.

A study consists of one structured-text (YAML) configuration file holding
the system and market parameters, plus one tabular scenario file holding
per-scenario, per-period demand and renewable time series. Both are
validated on ingestion; the resulting objects are immutable and safe to
share across concurrent solver tasks.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional

import numpy as np
import yaml

SCHEMA_VERSION = 1

PRODUCTS = ("CP", "CF", "CM", "CR")      # generation, ramping, inertia, recovery
FR_PRODUCTS = ("CF", "CM", "CR")

PROBABILITY_ROW_ID = "__probability__"   # reserved id in the scenario table


class ConfigError(ValueError):
    """Configuration document violates the schema or an invariant."""


class UnitKind(Enum):
    WIND = "wind"
    SOLAR = "solar"
    THERMAL = "thermal"
    STORAGE = "storage"

    @property
    def is_re(self) -> bool:
        return self in (UnitKind.WIND, UnitKind.SOLAR)


def annualize_invest_cost(cost_eur_per_kw: float, duration_years: int,
                          discount_rate: float = 0.0) -> float:
    """Capital-recovery-factor annualization, in EUR per MW-year.

    rho = 1000*cost*r(1+r)^n / ((1+r)^n - 1); straight-line 1000*cost/n at r=0.
    """
    if duration_years < 1:
        raise ConfigError("invest duration must be at least one year")
    if discount_rate < 0:
        raise ConfigError("discount rate must be nonnegative")
    if discount_rate == 0.0:
        return 1000.0 * cost_eur_per_kw / duration_years
    # expm1/log1p keep (1+r)^n - 1 away from catastrophic cancellation
    g1 = np.expm1(duration_years * np.log1p(discount_rate))
    return 1000.0 * cost_eur_per_kw * discount_rate * (g1 + 1.0) / g1


@dataclass(frozen=True)
class LossFraction:
    """Unitless loss fraction as a function of area demand (MW).

    Either a constant, or piecewise linear through (demand, fraction)
    points with flat extrapolation beyond the ends.
    """

    value: Optional[float] = None
    points: Optional[tuple] = None

    def __call__(self, demand_mw: float) -> float:
        if self.value is not None:
            return self.value
        xs = np.array([p[0] for p in self.points])
        ys = np.array([p[1] for p in self.points])
        return float(np.interp(demand_mw, xs, ys))

    @staticmethod
    def parse(spec, path: str) -> "LossFraction":
        if isinstance(spec, (int, float)):
            return LossFraction(value=float(spec))
        if isinstance(spec, dict) and spec.get("kind") == "constant":
            return LossFraction(value=float(spec["value"]))
        if isinstance(spec, dict) and spec.get("kind") == "piecewise":
            pts = tuple(sorted((float(a), float(b)) for a, b in spec["points"]))
            if len(pts) < 2:
                raise ConfigError(f"{path}: piecewise loss fraction needs >= 2 points")
            return LossFraction(points=pts)
        raise ConfigError(f"{path}: unrecognized loss-fraction spec {spec!r}")

    def emit(self):
        if self.value is not None:
            return {"kind": "constant", "value": self.value}
        return {"kind": "piecewise", "points": [list(p) for p in self.points]}


@dataclass(frozen=True)
class StorageParams:
    charge_eff: float
    discharge_eff: float
    energy_cap_mwh: float
    initial_energy_mwh: float
    charge_cost_eur_per_mw: float = 0.0


@dataclass(frozen=True)
class Unit:
    id: str
    genco_id: str
    area_id: str
    kind: UnitKind
    existing_mw: float
    max_invest_mw: float
    invest_cost_eur_per_kw: float
    invest_duration_years: int
    discount_rate: float
    annualized_invest_cost: float          # EUR/MW-year
    confidence_coeff: float                # creditable share of installed MW
    ramping_coeff: Optional[float] = None
    inertia_constant_s: Optional[float] = None
    available_time_coeff_h: Optional[float] = None
    marginal_cost_eur_per_mwh: float = 0.0
    marginal_cost_quadratic: float = 0.0
    capacity_cost_cp: Optional[float] = None   # EUR/MW-yr purchase cost, default rho
    capacity_cost_cf: Optional[float] = None
    storage: Optional[StorageParams] = None

    @property
    def is_re(self) -> bool:
        return self.kind.is_re

    @property
    def cp_cost(self) -> float:
        return self.annualized_invest_cost if self.capacity_cost_cp is None \
            else self.capacity_cost_cp

    @property
    def cf_cost(self) -> float:
        return self.annualized_invest_cost if self.capacity_cost_cf is None \
            else self.capacity_cost_cf


@dataclass(frozen=True)
class Area:
    id: str
    f0_hz: float
    rocof_max_hz_per_s: float
    load_loss_share: float
    loss_fraction: LossFraction
    blackout_duration_h: float
    tie_ramping_coeff: Optional[float] = None
    tie_inertia_constant_s: Optional[float] = None
    tie_available_time_coeff_h: Optional[float] = None


@dataclass(frozen=True)
class TieLine:
    """Inter-area link. Flow sign is positive into the lexicographically
    greater area id; all constraints are symmetric so the convention is
    internal only."""

    id: str
    from_area: str
    to_area: str
    capacity_mw: float
    capacity_cost_cp: float = 0.0
    capacity_cost_cf: float = 0.0

    def incidence(self, area_id: str) -> float:
        hi = max(self.from_area, self.to_area)
        lo = min(self.from_area, self.to_area)
        if area_id == hi:
            return 1.0
        if area_id == lo:
            return -1.0
        return 0.0


@dataclass(frozen=True)
class Genco:
    id: str
    owned_unit_ids: tuple
    invest_budget_ratio: float


@dataclass(frozen=True)
class MarketParams:
    voll_peak: float                  # EUR per MWh of generation shortfall
    voll_fluctuate: float             # EUR per MWh of ramping shortfall
    voll_inertia: float               # EUR per MWs-h of inertia shortfall
    voll_recover: float               # EUR per MWh of recovery shortfall
    price_cap_cp: float               # EUR/MW-day
    price_cap_cf: float
    price_cap_cm: float               # EUR/MWs-day
    price_cap_cr: float               # EUR/MWh-day
    energy_price_cap: float           # EUR/MWh
    horizon: int
    demand_elasticity: float
    long_run_marginal_cost: float     # EUR/MWh, pins the energy inverse demand
    energy_hours_per_year: float = 8760.0
    capacity_days_per_year: float = 365.0

    def price_cap(self, product: str) -> float:
        return {"CP": self.price_cap_cp, "CF": self.price_cap_cf,
                "CM": self.price_cap_cm, "CR": self.price_cap_cr}[product]

    @property
    def energy_weight(self) -> float:
        """Scales one period-hour across one scenario-year."""
        return self.energy_hours_per_year / self.horizon


@dataclass(frozen=True)
class SystemModel:
    schema_version: int
    areas: tuple
    units: tuple
    ties: tuple
    gencos: tuple
    market: MarketParams

    def __post_init__(self):
        object.__setattr__(self, "_area_ix", {a.id: i for i, a in enumerate(self.areas)})
        object.__setattr__(self, "_unit_ix", {u.id: i for i, u in enumerate(self.units)})

    def area(self, area_id: str) -> Area:
        return self.areas[self._area_ix[area_id]]

    def unit(self, unit_id: str) -> Unit:
        return self.units[self._unit_ix[unit_id]]

    def units_in(self, area_id: str, kinds=None):
        out = [u for u in self.units if u.area_id == area_id]
        if kinds is not None:
            out = [u for u in out if u.kind in kinds]
        return out

    @property
    def re_units(self):
        return [u for u in self.units if u.is_re]

    @property
    def thermal_units(self):
        return [u for u in self.units if u.kind is UnitKind.THERMAL]

    @property
    def storage_units(self):
        return [u for u in self.units if u.kind is UnitKind.STORAGE]

    def genco_units(self, genco_id: str):
        return [u for u in self.units if u.genco_id == genco_id]

    def tie_coefficient(self, area_id: str, product: str) -> float:
        """Performance coefficient credited to capacity imported by an area.

        Explicit config values win; the default is the existing-capacity
        weighted mean over non-RE units outside the area.
        """
        area = self.area(area_id)
        explicit = {"CF": area.tie_ramping_coeff,
                    "CM": area.tie_inertia_constant_s,
                    "CR": area.tie_available_time_coeff_h}[product]
        if explicit is not None:
            return explicit
        attr = {"CF": "ramping_coeff", "CM": "inertia_constant_s",
                "CR": "available_time_coeff_h"}[product]
        num = den = 0.0
        for u in self.units:
            if u.area_id == area_id or u.is_re:
                continue
            w = u.existing_mw
            num += w * (getattr(u, attr) or 0.0)
            den += w
        return num / den if den > 0 else 0.0


# ----------------------------------------------------------------------
# ingestion


def _need(mapping, key, path):
    if key not in mapping:
        raise ConfigError(f"{path}: missing required field '{key}'")
    return mapping[key]


def load_system(config_text: str) -> SystemModel:
    """Parse and validate the YAML system/market configuration."""
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")

    mk = _need(doc, "market", "market")
    market = MarketParams(
        voll_peak=float(_need(mk, "voll_peak", "market")),
        voll_fluctuate=float(_need(mk, "voll_fluctuate", "market")),
        voll_inertia=float(_need(mk, "voll_inertia", "market")),
        voll_recover=float(_need(mk, "voll_recover", "market")),
        price_cap_cp=float(_need(mk, "price_cap_cp", "market")),
        price_cap_cf=float(_need(mk, "price_cap_cf", "market")),
        price_cap_cm=float(_need(mk, "price_cap_cm", "market")),
        price_cap_cr=float(_need(mk, "price_cap_cr", "market")),
        energy_price_cap=float(_need(mk, "energy_price_cap", "market")),
        horizon=int(_need(mk, "horizon", "market")),
        demand_elasticity=float(_need(mk, "demand_elasticity", "market")),
        long_run_marginal_cost=float(_need(mk, "long_run_marginal_cost", "market")),
        energy_hours_per_year=float(mk.get("energy_hours_per_year", 8760.0)),
        capacity_days_per_year=float(mk.get("capacity_days_per_year", 365.0)),
    )
    for name in ("voll_peak", "voll_fluctuate", "voll_inertia", "voll_recover"):
        if getattr(market, name) < 0:
            raise ConfigError(f"market.{name}: VOLL must be nonnegative")
    if market.horizon < 1:
        raise ConfigError("market.horizon: must be at least 1 period")
    if market.demand_elasticity <= 0 or market.long_run_marginal_cost <= 0:
        raise ConfigError("market: demand_elasticity and long_run_marginal_cost must "
                          "be positive (inverse demand must be strictly decreasing)")

    areas = []
    for i, raw in enumerate(_need(doc, "areas", "areas")):
        path = f"areas[{i}]"
        area = Area(
            id=str(_need(raw, "id", path)),
            f0_hz=float(_need(raw, "f0_hz", path)),
            rocof_max_hz_per_s=float(_need(raw, "rocof_max_hz_per_s", path)),
            load_loss_share=float(_need(raw, "load_loss_share", path)),
            loss_fraction=LossFraction.parse(_need(raw, "loss_fraction", path), path),
            blackout_duration_h=float(_need(raw, "blackout_duration_h", path)),
            tie_ramping_coeff=_opt_float(raw.get("tie_ramping_coeff")),
            tie_inertia_constant_s=_opt_float(raw.get("tie_inertia_constant_s")),
            tie_available_time_coeff_h=_opt_float(raw.get("tie_available_time_coeff_h")),
        )
        if area.rocof_max_hz_per_s <= 0:
            raise ConfigError(f"{path}: rocof_max_hz_per_s must be positive")
        if area.blackout_duration_h <= 0:
            raise ConfigError(f"{path}: blackout_duration_h must be positive")
        if not 0.0 <= area.load_loss_share <= 1.0:
            raise ConfigError(f"{path}: load_loss_share must lie in [0, 1]")
        areas.append(area)
    area_ids = [a.id for a in areas]
    if len(set(area_ids)) != len(area_ids):
        raise ConfigError("areas: duplicate area ids")

    gencos_raw = _need(doc, "gencos", "gencos")
    units_raw = doc.get("units") or []
    if not units_raw:
        raise ConfigError("units: no units defined")

    owner_of = {}
    for gi, raw in enumerate(gencos_raw):
        path = f"gencos[{gi}]"
        gid = str(_need(raw, "id", path))
        for uid in _need(raw, "owned_units", path):
            if uid in owner_of:
                raise ConfigError(f"{path}: unit '{uid}' owned by more than one genco")
            owner_of[uid] = gid

    unit_ids_declared = {str(_need(u, "id", f"units[{i}]")) for i, u in enumerate(units_raw)}
    for uid, gid in owner_of.items():
        if uid not in unit_ids_declared:
            raise ConfigError(f"gencos: genco '{gid}' references unknown unit id '{uid}'")

    units = []
    for i, raw in enumerate(units_raw):
        units.append(_parse_unit(raw, f"units[{i}]", owner_of, area_ids))
    unit_ids = [u.id for u in units]
    if len(set(unit_ids)) != len(unit_ids):
        raise ConfigError("units: duplicate unit ids")

    gencos = []
    for gi, raw in enumerate(gencos_raw):
        path = f"gencos[{gi}]"
        ratio = float(_need(raw, "invest_budget_ratio", path))
        if ratio < 0:
            raise ConfigError(f"{path}: invest_budget_ratio must be nonnegative")
        gid = str(raw["id"])
        owned = tuple(uid for uid in raw["owned_units"])
        gencos.append(Genco(id=gid, owned_unit_ids=owned, invest_budget_ratio=ratio))
    genco_ids = [g.id for g in gencos]
    if len(set(genco_ids)) != len(genco_ids):
        raise ConfigError("gencos: duplicate genco ids")

    ties = []
    for ti, raw in enumerate(doc.get("ties") or []):
        path = f"ties[{ti}]"
        tie = TieLine(
            id=str(_need(raw, "id", path)),
            from_area=str(_need(raw, "from_area", path)),
            to_area=str(_need(raw, "to_area", path)),
            capacity_mw=float(_need(raw, "capacity_mw", path)),
            capacity_cost_cp=float(raw.get("capacity_cost_cp", 0.0)),
            capacity_cost_cf=float(raw.get("capacity_cost_cf", 0.0)),
        )
        if tie.capacity_mw < 0:
            raise ConfigError(f"{path}: capacity_mw must be nonnegative")
        for a in (tie.from_area, tie.to_area):
            if a not in area_ids:
                raise ConfigError(f"{path}: unknown area '{a}'")
        if tie.from_area == tie.to_area:
            raise ConfigError(f"{path}: tie must join two distinct areas")
        ties.append(tie)

    return SystemModel(schema_version=SCHEMA_VERSION, areas=tuple(areas),
                       units=tuple(units), ties=tuple(ties),
                       gencos=tuple(gencos), market=market)


def _opt_float(v):
    return None if v is None else float(v)


def _parse_unit(raw, path, owner_of, area_ids) -> Unit:
    uid = str(_need(raw, "id", path))
    if uid not in owner_of:
        raise ConfigError(f"{path}: unit '{uid}' is not owned by any genco")
    area = str(_need(raw, "area", path))
    if area not in area_ids:
        raise ConfigError(f"{path}: unknown area '{area}'")
    try:
        kind = UnitKind(str(_need(raw, "kind", path)))
    except ValueError:
        raise ConfigError(f"{path}: unknown unit kind {raw.get('kind')!r}") from None

    existing = float(_need(raw, "existing_mw", path))
    max_invest = float(_need(raw, "max_invest_mw", path))
    alpha = float(_need(raw, "confidence_coeff", path))
    if existing < 0:
        raise ConfigError(f"{path}: existing_mw must be nonnegative")
    if max_invest < 0:
        raise ConfigError(f"{path}: max_invest_mw must be nonnegative")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"{path}: confidence_coeff must lie in [0, 1]")

    cost_kw = float(_need(raw, "invest_cost_eur_per_kw", path))
    duration = int(_need(raw, "invest_duration_years", path))
    rate = float(raw.get("discount_rate", 0.0))
    rho = annualize_invest_cost(cost_kw, duration, rate)

    sigma = _opt_float(raw.get("ramping_coeff"))
    inertia = _opt_float(raw.get("inertia_constant_s"))
    avail = _opt_float(raw.get("available_time_coeff_h"))
    if kind.is_re:
        if any(v is not None for v in (sigma, inertia, avail)):
            raise ConfigError(
                f"{path}: renewable units provide generation capability only and "
                f"carry no ramping/inertia/available-time coefficients")
    else:
        for name, v in (("ramping_coeff", sigma),
                        ("inertia_constant_s", inertia),
                        ("available_time_coeff_h", avail)):
            if v is None:
                raise ConfigError(f"{path}: {name} is required for non-renewable units")
            if v < 0:
                raise ConfigError(f"{path}: {name} must be nonnegative")
        if not 0.0 <= sigma <= 1.0:
            raise ConfigError(f"{path}: ramping_coeff must lie in [0, 1]")

    storage = None
    if kind is UnitKind.STORAGE:
        sraw = _need(raw, "storage", path)
        storage = StorageParams(
            charge_eff=float(_need(sraw, "charge_eff", f"{path}.storage")),
            discharge_eff=float(_need(sraw, "discharge_eff", f"{path}.storage")),
            energy_cap_mwh=float(_need(sraw, "energy_cap_mwh", f"{path}.storage")),
            initial_energy_mwh=float(_need(sraw, "initial_energy_mwh", f"{path}.storage")),
            charge_cost_eur_per_mw=float(sraw.get("charge_cost_eur_per_mw", 0.0)),
        )
        if not 0 < storage.charge_eff <= 1 or not 0 < storage.discharge_eff <= 1:
            raise ConfigError(f"{path}.storage: efficiencies must lie in (0, 1]")
        if not 0 <= storage.initial_energy_mwh <= storage.energy_cap_mwh:
            raise ConfigError(f"{path}.storage: initial energy outside [0, energy_cap]")
    elif "storage" in raw and raw["storage"] is not None:
        raise ConfigError(f"{path}: storage block only allowed on storage units")

    return Unit(
        id=uid, genco_id=owner_of[uid], area_id=area, kind=kind,
        existing_mw=existing, max_invest_mw=max_invest,
        invest_cost_eur_per_kw=cost_kw, invest_duration_years=duration,
        discount_rate=rate, annualized_invest_cost=rho, confidence_coeff=alpha,
        ramping_coeff=sigma, inertia_constant_s=inertia, available_time_coeff_h=avail,
        marginal_cost_eur_per_mwh=float(raw.get("marginal_cost_eur_per_mwh", 0.0)),
        marginal_cost_quadratic=float(raw.get("marginal_cost_quadratic", 0.0)),
        capacity_cost_cp=_opt_float(raw.get("capacity_cost_cp")),
        capacity_cost_cf=_opt_float(raw.get("capacity_cost_cf")),
        storage=storage,
    )


def emit_system(model: SystemModel) -> str:
    """Serialize back to the configuration YAML (round-trips load_system)."""
    doc = {
        "schema_version": model.schema_version,
        "market": {
            "voll_peak": model.market.voll_peak,
            "voll_fluctuate": model.market.voll_fluctuate,
            "voll_inertia": model.market.voll_inertia,
            "voll_recover": model.market.voll_recover,
            "price_cap_cp": model.market.price_cap_cp,
            "price_cap_cf": model.market.price_cap_cf,
            "price_cap_cm": model.market.price_cap_cm,
            "price_cap_cr": model.market.price_cap_cr,
            "energy_price_cap": model.market.energy_price_cap,
            "horizon": model.market.horizon,
            "demand_elasticity": model.market.demand_elasticity,
            "long_run_marginal_cost": model.market.long_run_marginal_cost,
            "energy_hours_per_year": model.market.energy_hours_per_year,
            "capacity_days_per_year": model.market.capacity_days_per_year,
        },
        "areas": [],
        "ties": [],
        "gencos": [],
        "units": [],
    }
    for a in model.areas:
        raw = {"id": a.id, "f0_hz": a.f0_hz, "rocof_max_hz_per_s": a.rocof_max_hz_per_s,
               "load_loss_share": a.load_loss_share,
               "loss_fraction": a.loss_fraction.emit(),
               "blackout_duration_h": a.blackout_duration_h}
        for key, val in (("tie_ramping_coeff", a.tie_ramping_coeff),
                         ("tie_inertia_constant_s", a.tie_inertia_constant_s),
                         ("tie_available_time_coeff_h", a.tie_available_time_coeff_h)):
            if val is not None:
                raw[key] = val
        doc["areas"].append(raw)
    for t in model.ties:
        doc["ties"].append({"id": t.id, "from_area": t.from_area, "to_area": t.to_area,
                            "capacity_mw": t.capacity_mw,
                            "capacity_cost_cp": t.capacity_cost_cp,
                            "capacity_cost_cf": t.capacity_cost_cf})
    for g in model.gencos:
        doc["gencos"].append({"id": g.id, "owned_units": list(g.owned_unit_ids),
                              "invest_budget_ratio": g.invest_budget_ratio})
    for u in model.units:
        raw = {"id": u.id, "area": u.area_id, "kind": u.kind.value,
               "existing_mw": u.existing_mw, "max_invest_mw": u.max_invest_mw,
               "invest_cost_eur_per_kw": u.invest_cost_eur_per_kw,
               "invest_duration_years": u.invest_duration_years,
               "discount_rate": u.discount_rate,
               "confidence_coeff": u.confidence_coeff,
               "marginal_cost_eur_per_mwh": u.marginal_cost_eur_per_mwh,
               "marginal_cost_quadratic": u.marginal_cost_quadratic}
        if not u.is_re:
            raw["ramping_coeff"] = u.ramping_coeff
            raw["inertia_constant_s"] = u.inertia_constant_s
            raw["available_time_coeff_h"] = u.available_time_coeff_h
        if u.capacity_cost_cp is not None:
            raw["capacity_cost_cp"] = u.capacity_cost_cp
        if u.capacity_cost_cf is not None:
            raw["capacity_cost_cf"] = u.capacity_cost_cf
        if u.storage is not None:
            raw["storage"] = asdict(u.storage)
        doc["units"].append(raw)
    return yaml.safe_dump(doc, sort_keys=False)


# ----------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioSet:
    """Per-scenario, per-period series keyed to a SystemModel's areas and
    renewable units. Arrays are indexed [entity, t, omega]."""

    scenario_ids: tuple
    probabilities: np.ndarray            # (n_omega,)
    area_ids: tuple
    re_unit_ids: tuple
    demand: np.ndarray                   # (n_area, T, n_omega)
    demand_fluct: np.ndarray
    re_output: np.ndarray                # (n_re, T, n_omega)
    re_fluct: np.ndarray

    @property
    def n_periods(self) -> int:
        return self.demand.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.demand.shape[2]

    def area_index(self, area_id: str) -> int:
        return self.area_ids.index(area_id)

    def re_index(self, unit_id: str) -> int:
        return self.re_unit_ids.index(unit_id)


def load_scenarios(table_text: str, system: SystemModel) -> ScenarioSet:
    """Parse the scenario table (CSV with columns scenario, t, id,
    quantity, fluctuation). The reserved id '__probability__' at t=0
    carries each scenario's probability."""
    reader = csv.DictReader(io.StringIO(table_text))
    required = {"scenario", "t", "id", "quantity", "fluctuation"}
    if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
        raise ConfigError(f"scenario table must have columns {sorted(required)}")

    horizon = system.market.horizon
    area_ids = tuple(a.id for a in system.areas)
    re_ids = tuple(u.id for u in system.re_units)

    probs = {}
    cells = {}
    for ln, row in enumerate(reader, start=2):
        sid = row["scenario"].strip()
        rid = row["id"].strip()
        try:
            t = int(row["t"])
            q = float(row["quantity"])
            f = float(row["fluctuation"]) if row["fluctuation"] not in ("", None) else 0.0
        except (TypeError, ValueError):
            raise ConfigError(f"scenario table line {ln}: malformed numeric field") from None
        if rid == PROBABILITY_ROW_ID:
            probs[sid] = q
            continue
        if rid not in area_ids and rid not in re_ids:
            raise ConfigError(f"scenario table line {ln}: id '{rid}' is neither an "
                              f"area nor a renewable unit")
        if not 1 <= t <= horizon:
            raise ConfigError(f"scenario table line {ln}: period {t} outside 1..{horizon}")
        cells[(sid, rid, t)] = (q, f)

    scenario_ids = tuple(sorted(probs))
    if not scenario_ids:
        raise ConfigError("scenario table defines no scenario probabilities")
    raw = np.array([probs[s] for s in scenario_ids])
    if np.any(raw < 0):
        raise ConfigError("scenario probabilities must be nonnegative")
    dev = abs(raw.sum() - 1.0)
    if dev >= 1e-6:
        raise ConfigError(f"scenario probabilities sum to {raw.sum():.9f}; "
                          f"deviation {dev:.2e} exceeds 1e-6")
    if dev > 1e-12:
        warnings.warn(f"scenario probabilities renormalized (raw deviation {dev:.2e})")
    pi = raw / raw.sum()

    n_a, n_r, n_w = len(area_ids), len(re_ids), len(scenario_ids)
    demand = np.zeros((n_a, horizon, n_w))
    dfluct = np.zeros((n_a, horizon, n_w))
    re_out = np.zeros((n_r, horizon, n_w))
    re_fl = np.zeros((n_r, horizon, n_w))
    for wi, sid in enumerate(scenario_ids):
        for rid_list, qarr, farr in ((area_ids, demand, dfluct), (re_ids, re_out, re_fl)):
            for ei, rid in enumerate(rid_list):
                for t in range(1, horizon + 1):
                    if (sid, rid, t) not in cells:
                        raise ConfigError(f"scenario '{sid}': missing series value for "
                                          f"id '{rid}' at period {t}")
                    q, f = cells[(sid, rid, t)]
                    qarr[ei, t - 1, wi] = q
                    farr[ei, t - 1, wi] = f
    if np.any(re_out < 0):
        raise ConfigError("renewable outputs must be nonnegative")
    if np.any(demand < 0):
        raise ConfigError("demand must be nonnegative")

    for u in system.re_units:
        if u.existing_mw <= 0:
            raise ConfigError(f"renewable unit '{u.id}' needs existing_mw > 0 so its "
                              f"scenario profile can serve as a per-MW reference")

    return ScenarioSet(scenario_ids=scenario_ids, probabilities=pi,
                       area_ids=area_ids, re_unit_ids=re_ids,
                       demand=demand, demand_fluct=dfluct,
                       re_output=re_out, re_fluct=re_fl)


def emit_scenarios(scen: ScenarioSet) -> str:
    """Serialize back to the tabular text form (round-trips load_scenarios)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["scenario", "t", "id", "quantity", "fluctuation"])
    for wi, sid in enumerate(scen.scenario_ids):
        writer.writerow([sid, 0, PROBABILITY_ROW_ID, repr(float(scen.probabilities[wi])), 0.0])
        for ei, rid in enumerate(scen.area_ids):
            for t in range(scen.n_periods):
                writer.writerow([sid, t + 1, rid,
                                 repr(float(scen.demand[ei, t, wi])),
                                 repr(float(scen.demand_fluct[ei, t, wi]))])
        for ei, rid in enumerate(scen.re_unit_ids):
            for t in range(scen.n_periods):
                writer.writerow([sid, t + 1, rid,
                                 repr(float(scen.re_output[ei, t, wi])),
                                 repr(float(scen.re_fluct[ei, t, wi]))])
    return buf.getvalue()


def sample_scenario_probabilities(n: int, seed: int, mean: float = 0.01,
                                  sd: float = 0.015, skewness: float = 1.5) -> np.ndarray:
    """Draw n scenario weights from a skew-normal and normalize them.

    The skew-normal family caps |skewness| below ~0.9953; larger targets
    are clamped to the attainable maximum. Draws are floored at a small
    positive value before normalization so the result is a distribution.
    """
    from scipy import stats

    max_skew = 0.995
    target = float(np.clip(skewness, -max_skew, max_skew))
    if target != skewness:
        warnings.warn(f"skewness {skewness} outside the skew-normal family's range; "
                      f"clamped to {target}")
    # invert gamma1(delta) = (4-pi)/2 * (delta*sqrt(2/pi))^3 / (1-2 delta^2/pi)^1.5
    g = abs(target)
    r = (2 * g / (4 - np.pi)) ** (1 / 3)
    delta = r / np.sqrt(2 / np.pi * (1 + r ** 2))
    delta = min(delta, 0.999999) * np.sign(target or 1.0)
    a = delta / np.sqrt(1 - delta ** 2)
    scale = sd / np.sqrt(1 - 2 * delta ** 2 / np.pi)
    loc = mean - scale * delta * np.sqrt(2 / np.pi)
    draws = stats.skewnorm.rvs(a, loc=loc, scale=scale, size=n,
                               random_state=np.random.default_rng(seed))
    draws = np.maximum(draws, 1e-6)
    return draws / draws.sum()
