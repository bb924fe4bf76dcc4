"""Capacity-market demand-curve design with flexibility/resilience products
and a Nash-Cournot generation-investment equilibrium."""

import os

# The dense linear algebra here is all small (hundreds of rows); threaded
# BLAS spends more time at spin barriers than computing. Pin to one thread
# before numpy loads, and again afterwards for processes that beat us to it.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

try:
    import threadpoolctl as _threadpoolctl

    _threadpoolctl.threadpool_limits(1, "blas")
except Exception:       # pragma: no cover - best effort
    pass

from .model import (                                    # noqa: E402,F401
    ConfigError, ScenarioSet, SystemModel, annualize_invest_cost,
    emit_scenarios, emit_system, load_scenarios, load_system,
    sample_scenario_probabilities,
)
from .qp import (                                       # noqa: E402,F401
    KktResiduals, QpError, QpProblem, QpSolution, QpStatus, kkt_residuals,
    solve,
)
from .products import (                                 # noqa: E402,F401
    FrDemand, FrProvision, area_requirements, fr_demand, inertia_demand,
    provision, ramping_demand, recovery_demand,
)
from .curves import (                                   # noqa: E402,F401
    DemandCurve, DemandCurveSet, UpperLevelError, build_upper_lp,
    solve_upper, sweep_and_assemble,
)
from .equilibrium import (                              # noqa: E402,F401
    EquilibriumError, EquilibriumProblem, EquilibriumResult,
    best_response_check, build_equivalent_qp, solve_equilibrium,
)
from .trilevel import (                                 # noqa: E402,F401
    CaseComparison, RunReport, TrilevelError, compare_cases, run,
)
