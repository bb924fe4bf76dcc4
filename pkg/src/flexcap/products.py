"""Quantification of the three flexibility/resilience trading products.

Demand side: ramping requirement from net-load fluctuations, inertia
requirement from the RoCoF limit (optionally the frequency-nadir term),
recovery-energy requirement from interruptible load during a blackout.
Provision side: a unit converts flexibility/resilience capacity into the
three products linearly through its ramping coefficient, inertia constant
and available-time coefficient. All functions are pure and operate on
immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .model import Area, ScenarioSet, SystemModel, Unit


class ProductError(ValueError):
    pass


NADIR_CONSTANTS = (
    "gen_time_constant", "droop", "sync_gen_fraction", "damping",
    "damping_ratio", "natural_freq", "time_to_nadir", "delta_f_max",
)


class InertiaResult(NamedTuple):
    value_mws: float
    binding: str          # "rocof" or "nadir"


@dataclass(frozen=True)
class FrProvision:
    ramping_mw: float
    inertia_mws: float
    recovery_mwh: float


@dataclass(frozen=True)
class FrDemand:
    """System-wide product requirements per (t, omega)."""

    ramping_mw: np.ndarray          # signed net ramping requirement
    inertia_mws: np.ndarray
    recovery_mwh: np.ndarray
    contingency_loss_mw: np.ndarray


@dataclass(frozen=True)
class AreaRequirements:
    """Per-area requirement arrays, indexed [area, t, omega].

    net_demand feeds the generation-capability shortfall, ramping is the
    signed two-sided requirement, the rest are nonnegative.
    """

    area_ids: tuple
    net_demand: np.ndarray
    ramping: np.ndarray
    inertia: np.ndarray
    recovery: np.ndarray
    contingency_loss: np.ndarray


def ramping_demand(scen: ScenarioSet, omega: int, t: int) -> float:
    """System-wide net ramping requirement at one (period, scenario):
    demand fluctuation minus renewable fluctuation, signed."""
    if not 0 <= t < scen.n_periods:
        raise ProductError(f"period {t} outside horizon 0..{scen.n_periods - 1}")
    d = float(scen.demand_fluct[:, t, omega].sum())
    r = float(scen.re_fluct[:, t, omega].sum())
    return d - r


def inertia_demand(contingency_loss_mw: float, f0_hz: float,
                   rocof_max_hz_per_s: float, nadir_params: Optional[dict] = None):
    """Inertia requirement in MW.s.

    The RoCoF term f0*P_loss/(2*RoCoF_max) is the requirement used for
    clearing. With nadir_params supplied the frequency-nadir term is also
    evaluated and the max of the two is returned together with a flag for
    which term bound.
    """
    if rocof_max_hz_per_s <= 0:
        raise ProductError("rocof_max must be positive")
    if contingency_loss_mw < 0:
        raise ProductError("contingency loss must be nonnegative")
    rocof_term = f0_hz * contingency_loss_mw / (2.0 * rocof_max_hz_per_s)
    if nadir_params is None:
        return rocof_term
    missing = [k for k in NADIR_CONSTANTS if k not in nadir_params]
    if missing:
        raise ProductError(f"nadir parameters incomplete: missing '{missing[0]}'")
    p = nadir_params
    decay = np.exp(-p["damping_ratio"] * p["natural_freq"] * p["time_to_nadir"])
    denom = p["delta_f_max"] * (p["damping"] + p["droop"]) + contingency_loss_mw
    nadir_term = (p["gen_time_constant"] * (p["droop"] - p["sync_gen_fraction"])
                  * contingency_loss_mw * decay / denom) if denom > 0 else 0.0
    if nadir_term > rocof_term:
        return InertiaResult(float(nadir_term), "nadir")
    return InertiaResult(float(rocof_term), "rocof")


def recovery_demand(area: Area, demand_mw: float) -> float:
    """Recovery-energy requirement in MWh during a blackout of the area's
    stated duration: interruptible share times loss-weighted load."""
    if demand_mw < 0:
        raise ProductError("demand must be nonnegative")
    frac = area.loss_fraction(demand_mw)
    return area.load_loss_share * frac * demand_mw * area.blackout_duration_h


def provision(unit: Unit, p_fi_mw: float) -> FrProvision:
    """Products delivered by p_fi_mw of flexibility/resilience capacity."""
    if unit.is_re:
        raise ProductError(
            f"unit '{unit.id}': renewables cannot provide flexibility/resilience products")
    if p_fi_mw < 0:
        raise ProductError("capacity must be nonnegative")
    return FrProvision(
        ramping_mw=unit.ramping_coeff * p_fi_mw,
        inertia_mws=unit.inertia_constant_s * p_fi_mw,
        recovery_mwh=unit.available_time_coeff_h * p_fi_mw,
    )


def fr_demand(system: SystemModel, scen: ScenarioSet) -> FrDemand:
    """System-wide requirements per (t, omega)."""
    req = area_requirements(system, scen)
    return FrDemand(
        ramping_mw=req.ramping.sum(axis=0),
        inertia_mws=req.inertia.sum(axis=0),
        recovery_mwh=req.recovery.sum(axis=0),
        contingency_loss_mw=req.contingency_loss.sum(axis=0),
    )


def area_requirements(system: SystemModel, scen: ScenarioSet) -> AreaRequirements:
    """Assemble the per-(area, t, omega) requirement arrays the demand-curve
    model prices against.

    Contingency loss is the positive part of the net fluctuation; the
    inertia requirement applies the RoCoF term to it per area.
    """
    n_a = len(scen.area_ids)
    horizon, n_w = scen.n_periods, scen.n_scenarios
    net = np.array(scen.demand)          # start from demand, subtract RE output
    ramp = np.array(scen.demand_fluct)
    for ri, uid in enumerate(scen.re_unit_ids):
        ai = scen.area_index(system.unit(uid).area_id)
        net[ai] -= scen.re_output[ri]
        ramp[ai] -= scen.re_fluct[ri]
    contingency = np.maximum(ramp, 0.0)

    inertia = np.zeros((n_a, horizon, n_w))
    recovery = np.zeros((n_a, horizon, n_w))
    for ai, aid in enumerate(scen.area_ids):
        area = system.area(aid)
        inertia[ai] = area.f0_hz * contingency[ai] / (2.0 * area.rocof_max_hz_per_s)
        if area.load_loss_share > 0:
            frac = np.vectorize(area.loss_fraction)(scen.demand[ai])
            recovery[ai] = (area.load_loss_share * frac * scen.demand[ai]
                            * area.blackout_duration_h)
    return AreaRequirements(area_ids=scen.area_ids, net_demand=net, ramping=ramp,
                            inertia=inertia, recovery=recovery,
                            contingency_loss=contingency)
