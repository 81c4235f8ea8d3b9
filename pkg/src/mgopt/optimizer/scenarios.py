"""Scenario runner: baseline, four single-objective runs, weighted run, DR.

Scenario 0 is the grid-only initial state (no optimisation).  Scenarios 1-4
minimise one objective each; scenario 5 minimises the weighted sum of the
four objectives normalised between the scenario-k optimum and the initial
state.  The demand-response variant re-runs scenario 5 with the shift
series in the decision vector.

Each optimisation is a GA seed followed by SQP refinement.  After the
individual runs the suite cross-polishes deterministically: whenever some
scenario's solution scores better on objective k than scenario k's own
solution, scenario k is re-refined from that point, so the final table has
every single-objective run dominating its own metric and the weighted run
dominating the weighted total.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..ahp import derive_weights
from ..devices import DispatchSchedule, zero_schedule
from ..netmodel import MicrogridCase
from ..objectives import (
    OBJECTIVE_KEYS,
    ObjectiveBounds,
    ObjectiveValues,
    evaluate_objectives,
    weights_from_sequence,
)
from ..powerflow import compile_network
from ..reliability import ContingencyEvaluator
from .ga import GaConfig, GaResult, ga_seed
from .problem import DispatchProblem, ObjectiveSpec, RefineResult
from .sqp import SqpConfig

SCENARIO_KEYS: Tuple[str, ...] = ("baseline",) + OBJECTIVE_KEYS + ("weighted",)

SCENARIO_LABELS: Dict[str, str] = {
    "baseline": "Initial state",
    "cost": "First scenario",
    "loss": "Second scenario",
    "ens": "Third scenario",
    "vdev": "Fourth scenario",
    "weighted": "Fifth scenario without DR",
    "dr": "Fifth scenario with DR",
}


def scenario_key(scenario_id: int) -> str:
    if not 0 <= scenario_id < len(SCENARIO_KEYS):
        raise ValueError(f"scenario id must be 0..{len(SCENARIO_KEYS) - 1}, got {scenario_id}")
    return SCENARIO_KEYS[scenario_id]


@dataclass
class OptimizerConfig:
    ga: GaConfig = field(default_factory=GaConfig)
    sqp: SqpConfig = field(default_factory=SqpConfig)
    seed: int = 0
    polish_sweeps: int = 3
    voltage_margin: float = 0.02
    refine_rounds: int = 3


@dataclass
class ScenarioResult:
    key: str
    label: str
    schedule: DispatchSchedule
    objectives: ObjectiveValues
    value: Optional[float]
    feasible: bool
    violation: float
    ga_value: Optional[float] = None
    improved: bool = False
    trace: List[Dict] = field(default_factory=list)
    elapsed_s: float = 0.0

    def as_row(self) -> Dict[str, float]:
        return self.objectives.as_dict()


@dataclass
class SuiteResult:
    case: MicrogridCase
    results: Dict[str, ScenarioResult]
    bounds: ObjectiveBounds
    weights: Dict[str, float]
    consistency_ratio: float
    seed: int
    totals: Dict[str, float] = field(default_factory=dict)
    elapsed_s: float = 0.0

    def result(self, scenario_id: int, dr: bool = False) -> ScenarioResult:
        key = "dr" if dr else scenario_key(scenario_id)
        return self.results[key]


def grid_only_schedule(case: MicrogridCase, dr: bool = False) -> DispatchSchedule:
    """The initial state: every local source idle, all demand on the grid."""
    return zero_schedule(len(case.units), case.horizon, dr=dr)


def resolve_weights(
    case: MicrogridCase, weights: Optional[Sequence[float]] = None
) -> Tuple[Dict[str, float], float]:
    """Objective weights for the weighted scenario, with consistency ratio.

    Explicit weights (argument, then case field) win; otherwise the case's
    judgment matrix, then the built-in judgment set, feed the eigenvector
    method.  Direct weights carry a consistency ratio of 0 by convention.
    """
    if weights is not None:
        return weights_from_sequence(weights), 0.0
    if case.weights is not None:
        return weights_from_sequence(case.weights), 0.0
    vector, ratio = derive_weights(case.judgment_matrix)
    return weights_from_sequence(vector), ratio


def _rng_for(seed: int, scenario_id: int, dr: bool) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(scenario_id, 1 if dr else 0))
    )


def _optimize(
    problem: DispatchProblem,
    spec: ObjectiveSpec,
    config: OptimizerConfig,
    scenario_id: int,
    extra_seeds: Optional[np.ndarray] = None,
) -> Tuple[RefineResult, GaResult]:
    rng = _rng_for(config.seed, scenario_id, problem.dr)
    evaluate, repair = problem.ga_functions(spec)
    seeds = problem.seed_points()
    if extra_seeds is not None and len(extra_seeds):
        seeds = np.vstack([np.atleast_2d(extra_seeds), seeds])
    ga = ga_seed(evaluate, repair, problem.lower, problem.upper, rng, config.ga, seeds)
    refined = problem.refine(
        ga.x,
        spec,
        config.sqp,
        voltage_margin=config.voltage_margin,
        max_rounds=config.refine_rounds,
    )
    return refined, ga


def _finish_result(
    case: MicrogridCase,
    problem: DispatchProblem,
    key: str,
    x: np.ndarray,
    value: Optional[float],
    evaluator: ContingencyEvaluator,
    ga_value: Optional[float] = None,
    trace: Optional[List[Dict]] = None,
    elapsed_s: float = 0.0,
) -> ScenarioResult:
    schedule = problem.schedule(x)
    m = problem.metrics(x)
    objectives = evaluate_objectives(case, schedule, evaluator=evaluator)
    return ScenarioResult(
        key=key,
        label=SCENARIO_LABELS.get(key, key),
        schedule=schedule,
        objectives=objectives,
        value=value,
        feasible=bool(m.ok[0]) and float(m.violation[0]) <= 1e-6,
        violation=float(m.violation[0]),
        ga_value=ga_value,
        improved=ga_value is not None and value is not None and value < ga_value,
        trace=list(trace or []),
        elapsed_s=elapsed_s,
    )


def run_suite(
    case: MicrogridCase,
    config: Optional[OptimizerConfig] = None,
    weights: Optional[Sequence[float]] = None,
    include_dr: Optional[bool] = None,
) -> SuiteResult:
    """Run scenarios 0-5 (and the DR variant when the case defines one)."""
    t_start = time.perf_counter()
    config = config or OptimizerConfig()
    if include_dr is None:
        include_dr = case.dr is not None

    net = compile_network(case)
    evaluator = ContingencyEvaluator(case)
    problem = DispatchProblem(case, net=net, evaluator=evaluator)
    weight_map, ratio = resolve_weights(case, weights)

    xs: Dict[str, np.ndarray] = {}
    info: Dict[str, Dict] = {}

    xs["baseline"] = problem.pack(grid_only_schedule(case))
    info["baseline"] = {"value": None, "ga": None, "trace": [], "elapsed": 0.0}

    for idx, key in enumerate(OBJECTIVE_KEYS, start=1):
        t0 = time.perf_counter()
        refined, ga = _optimize(problem, ObjectiveSpec(key), config, idx)
        xs[key] = refined.x
        info[key] = {
            "value": refined.value,
            "ga": refined.seed_value,
            "trace": refined.sqp.trace if refined.sqp else [],
            "elapsed": time.perf_counter() - t0,
        }

    def metric(key: str, x: np.ndarray) -> float:
        return float(problem.metrics(x).values[key][0])

    # Cross-polish: scenario k must dominate its own metric over every other
    # solution found so far; re-refine from any point that beats it.
    for _ in range(config.polish_sweeps):
        changed = False
        for key in OBJECTIVE_KEYS:
            own = metric(key, xs[key])
            for other in ("baseline",) + OBJECTIVE_KEYS:
                if other == key:
                    continue
                rival = metric(key, xs[other])
                if rival < own * (1.0 - 1e-12) - 1e-12:
                    refined = problem.refine(
                        xs[other].copy(), ObjectiveSpec(key), config.sqp,
                        voltage_margin=config.voltage_margin, max_rounds=config.refine_rounds,
                    )
                    if refined.value < own:
                        xs[key] = refined.x
                        info[key]["value"] = refined.value
                        own = refined.value
                        changed = True
        if not changed:
            break

    # Normalisation brackets: scenario-k optimum to initial-state value.
    bounds: ObjectiveBounds = {}
    for key in OBJECTIVE_KEYS:
        low = metric(key, xs[key])
        high = metric(key, xs["baseline"])
        bounds[key] = (min(low, high), high)

    spec5 = ObjectiveSpec("weighted", weights=weight_map, bounds=bounds, clamp_upper=False)
    report5 = ObjectiveSpec("weighted", weights=weight_map, bounds=bounds, clamp_upper=True)
    t0 = time.perf_counter()
    prior = np.vstack([xs[k] for k in ("baseline",) + OBJECTIVE_KEYS])
    refined5, _ = _optimize(problem, spec5, config, 5, extra_seeds=prior)
    xs["weighted"] = refined5.x
    info["weighted"] = {
        "value": refined5.value,
        "ga": refined5.seed_value,
        "trace": refined5.sqp.trace if refined5.sqp else [],
        "elapsed": time.perf_counter() - t0,
    }

    def total(x: np.ndarray) -> float:
        return float(report5.scalar_array(problem.metrics(x).values)[0])

    # Second polish: the weighted run must dominate the weighted total, and
    # scenarios 1-4 must still dominate their metric against the weighted
    # solution.  Both refinements only ever lower the stored values.
    for _ in range(config.polish_sweeps):
        changed = False
        for key in OBJECTIVE_KEYS:
            own = metric(key, xs[key])
            rival = metric(key, xs["weighted"])
            if rival < own * (1.0 - 1e-12) - 1e-12:
                refined = problem.refine(
                    xs["weighted"].copy(), ObjectiveSpec(key), config.sqp,
                    voltage_margin=config.voltage_margin, max_rounds=config.refine_rounds,
                )
                if refined.value < own:
                    xs[key] = refined.x
                    info[key]["value"] = refined.value
                    changed = True
        own_total = total(xs["weighted"])
        for other in ("baseline",) + OBJECTIVE_KEYS:
            rival_total = total(xs[other])
            if rival_total < own_total * (1.0 - 1e-12) - 1e-12:
                refined = problem.refine(
                    xs[other].copy(), spec5, config.sqp,
                    voltage_margin=config.voltage_margin, max_rounds=config.refine_rounds,
                )
                if refined.value < own_total:
                    xs["weighted"] = refined.x
                    info["weighted"]["value"] = refined.value
                    own_total = refined.value
                    changed = True
        if not changed:
            break

    results = {
        key: _finish_result(
            case, problem, key, xs[key], info[key]["value"], evaluator,
            ga_value=info[key]["ga"], trace=info[key]["trace"], elapsed_s=info[key]["elapsed"],
        )
        for key in SCENARIO_KEYS
    }
    totals = {key: total(xs[key]) for key in SCENARIO_KEYS}

    if include_dr:
        if case.dr is None:
            raise ValueError("case defines no demand response program")
        t0 = time.perf_counter()
        problem_dr = DispatchProblem(case, dr=True, net=net, evaluator=evaluator)
        spec5_dr = ObjectiveSpec("weighted", weights=weight_map, bounds=bounds, clamp_upper=False)
        if float(problem_dr.shift_bound.max(initial=0.0)) <= 0.0:
            # Degenerate program: nothing may move, so the answer is the
            # weighted run with a zero shift appended.
            x_dr = np.concatenate([xs["weighted"], np.zeros(case.horizon)])
            value_dr = totals["weighted"]
            info_dr = {"ga": None, "trace": []}
        else:
            prior_dr = np.vstack(
                [np.concatenate([xs[k], np.zeros(case.horizon)]) for k in SCENARIO_KEYS]
            )
            refined_dr, _ = _optimize(problem_dr, spec5_dr, config, 5, extra_seeds=prior_dr)
            x_dr = refined_dr.x
            value_dr = refined_dr.value
            info_dr = {
                "ga": refined_dr.seed_value,
                "trace": refined_dr.sqp.trace if refined_dr.sqp else [],
            }
        results["dr"] = _finish_result(
            case, problem_dr, "dr", x_dr, value_dr, evaluator,
            ga_value=info_dr["ga"], trace=info_dr["trace"],
            elapsed_s=time.perf_counter() - t0,
        )
        totals["dr"] = value_dr

    return SuiteResult(
        case=case,
        results=results,
        bounds=bounds,
        weights=weight_map,
        consistency_ratio=ratio,
        seed=config.seed,
        totals=totals,
        elapsed_s=time.perf_counter() - t_start,
    )


def run_scenario(
    case: MicrogridCase,
    scenario_id: int,
    weights: Optional[Sequence[float]] = None,
    config: Optional[OptimizerConfig] = None,
    dr: bool = False,
) -> ScenarioResult:
    """One scenario's result, computed through the full suite for
    consistency: scenario 5 needs the others' optima for normalisation, and
    the cross-polish keeps the published table self-consistent."""
    suite = run_suite(case, config=config, weights=weights, include_dr=dr)
    return suite.result(scenario_id, dr=dr)
