"""Day-ahead microgrid dispatch optimisation.

Radial power flow by backward-forward sweep, battery and DG device models,
contingency-based reliability costing, AHP objective weighting and a
GA-seeded SQP dispatch optimizer with an optional demand-response shift.
"""

import os as _os

# MGOPT_THREADS caps the numeric backends' thread pools; it must land in the
# environment before numpy first loads.
_threads = _os.environ.get("MGOPT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .ahp import DEFAULT_JUDGMENTS, consistency_ratio, derive_weights, principal_eigen
from .devices import DispatchSchedule, dg_cost, soc_trajectory, threshold_commitment, zero_schedule
from .dr import apply_shift, optimize_with_dr, shift_bounds_kw
from .netmodel import (
    Battery,
    Branch,
    Bus,
    CaseError,
    Contingency,
    DgUnit,
    DrProgram,
    LoadPoint,
    MicrogridCase,
    OutageCostTable,
    benchmark_case_path,
    load_benchmark_case,
    load_case,
    save_case,
    validate_case,
)
from .objectives import (
    OBJECTIVE_KEYS,
    ObjectiveValues,
    evaluate_objectives,
    expected_outage_cost,
    network_loss_energy,
    operation_cost,
    voltage_deviation,
)
from .optimizer import (
    DispatchProblem,
    GaConfig,
    ObjectiveSpec,
    OptimizerConfig,
    ScenarioResult,
    SqpConfig,
    SuiteResult,
    ga_seed,
    run_scenario,
    run_suite,
    sqp_solve,
)
from .powerflow import (
    PowerFlowError,
    PowerFlowSolution,
    compile_network,
    solve_horizon,
    solve_hour,
    sweep,
)
from .reliability import ContingencyEvaluator, restoration, unsupplied_energy_cost

__all__ = [
    "Battery",
    "Branch",
    "Bus",
    "CaseError",
    "Contingency",
    "ContingencyEvaluator",
    "DEFAULT_JUDGMENTS",
    "DgUnit",
    "DispatchProblem",
    "DispatchSchedule",
    "DrProgram",
    "GaConfig",
    "LoadPoint",
    "MicrogridCase",
    "OBJECTIVE_KEYS",
    "ObjectiveSpec",
    "ObjectiveValues",
    "OptimizerConfig",
    "OutageCostTable",
    "PowerFlowError",
    "PowerFlowSolution",
    "ScenarioResult",
    "SqpConfig",
    "SuiteResult",
    "apply_shift",
    "benchmark_case_path",
    "compile_network",
    "consistency_ratio",
    "derive_weights",
    "dg_cost",
    "evaluate_objectives",
    "expected_outage_cost",
    "ga_seed",
    "load_benchmark_case",
    "load_case",
    "network_loss_energy",
    "operation_cost",
    "optimize_with_dr",
    "principal_eigen",
    "restoration",
    "run_scenario",
    "run_suite",
    "save_case",
    "shift_bounds_kw",
    "soc_trajectory",
    "solve_horizon",
    "solve_hour",
    "sqp_solve",
    "sweep",
    "threshold_commitment",
    "unsupplied_energy_cost",
    "validate_case",
    "voltage_deviation",
    "zero_schedule",
]
