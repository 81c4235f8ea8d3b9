"""Real-coded genetic algorithm used to seed the SQP refinement.

Individuals are dispatch vectors in physical units.  Selection is by
tournament on an exterior-penalty fitness, recombination is blend crossover,
and mutation perturbs single genes with Gaussian noise.  Every new individual
passes through the problem's repair, so the population stays inside device
windows throughout; the penalty therefore only prices network-level
violations (voltage, grid limit), and it doubles whenever the best feasible
point stalls while violations persist.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


@dataclass
class GaConfig:
    population: int = 60
    generations: int = 150
    tournament: int = 3
    crossover_rate: float = 0.9
    blend_alpha: float = 0.5
    mutation_scale: float = 0.1
    elites: int = 2
    penalty_init: float = 1e4
    penalty_growth: float = 2.0
    stall_generations: int = 10
    penalty_cap: float = 1e12


@dataclass
class GaResult:
    x: np.ndarray
    objective: float
    violation: float
    generations: int
    history: List[Dict]
    evaluations: int


def ga_seed(
    evaluate: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
    repair: Callable[[np.ndarray], np.ndarray],
    lower: Sequence[float],
    upper: Sequence[float],
    rng: np.random.Generator,
    config: Optional[GaConfig] = None,
    seeds: Optional[np.ndarray] = None,
) -> GaResult:
    """Search the box [lower, upper] for a low-cost near-feasible point.

    ``evaluate`` maps a population matrix [pop, n] to (objective, violation)
    vectors; ``repair`` projects a population back onto device-feasible
    points.  Raw objective and violation are kept separately so penalty
    updates never trigger re-evaluation.
    """
    cfg = config or GaConfig()
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    n = lo.size
    span = hi - lo
    pop_size = cfg.population

    pop = lo + rng.random((pop_size, n)) * span
    if seeds is not None and seeds.size:
        seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
        count = min(seeds.shape[0], pop_size)
        pop[:count] = seeds[:count]
    pop = repair(pop)

    obj, vio = evaluate(pop)
    evaluations = pop_size
    penalty = cfg.penalty_init
    history: List[Dict] = []

    def fitness() -> np.ndarray:
        return obj + penalty * vio

    def best_index() -> int:
        fit = fitness()
        return int(np.lexsort((obj, fit))[0])

    stall = 0
    best_key = np.inf
    generations_run = 0

    for gen in range(1, cfg.generations + 1):
        generations_run = gen
        fit = fitness()

        order = np.lexsort((vio, fit))
        elite = pop[order[: cfg.elites]].copy()
        elite_obj = obj[order[: cfg.elites]].copy()
        elite_vio = vio[order[: cfg.elites]].copy()

        n_children = pop_size - cfg.elites
        picks = rng.integers(0, pop_size, size=(2 * n_children, cfg.tournament))
        winners = picks[np.arange(2 * n_children), np.argmin(fit[picks], axis=1)]
        parents_a = pop[winners[:n_children]]
        parents_b = pop[winners[n_children:]]

        # Blend crossover samples each gene uniformly from the interval
        # spanned by the parents, widened by alpha on both sides.
        low = np.minimum(parents_a, parents_b)
        high = np.maximum(parents_a, parents_b)
        width = high - low
        children = low - cfg.blend_alpha * width + rng.random((n_children, n)) * (1 + 2 * cfg.blend_alpha) * width
        skip = rng.random(n_children) >= cfg.crossover_rate
        children[skip] = parents_a[skip]

        mutate = rng.random((n_children, n)) < (1.0 / n)
        noise = rng.normal(0.0, cfg.mutation_scale, size=(n_children, n)) * span
        children = np.where(mutate, children + noise, children)

        children = repair(np.clip(children, lo, hi))
        child_obj, child_vio = evaluate(children)
        evaluations += n_children

        pop = np.vstack([elite, children])
        obj = np.concatenate([elite_obj, child_obj])
        vio = np.concatenate([elite_vio, child_vio])

        i = best_index()
        key = obj[i] + penalty * vio[i]
        history.append({"generation": gen, "best_objective": float(obj[i]),
                        "best_violation": float(vio[i]), "penalty": penalty})

        if key < best_key - 1e-9 * max(1.0, abs(best_key)):
            best_key = key
            stall = 0
        else:
            stall += 1
        if stall >= cfg.stall_generations and vio[i] > 0 and penalty < cfg.penalty_cap:
            penalty *= cfg.penalty_growth
            best_key = np.inf
            stall = 0

    i = best_index()
    return GaResult(
        x=pop[i].copy(),
        objective=float(obj[i]),
        violation=float(vio[i]),
        generations=generations_run,
        history=history,
        evaluations=evaluations,
    )
