"""Demand-response load shifting.

A shift moves consumption between hours without changing the daily total:
positive entries add load, negative entries remove it, and the vector must
sum to zero.  Removal is capped per hour at the programme's shiftable
fraction of the participating demand.  Shifted energy spreads over the
participating load points in proportion to their demand that hour, so each
point keeps its power factor and its share of the feeder.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .devices import DispatchSchedule
from .netmodel import MicrogridCase
from .objectives import ObjectiveValues
from .optimizer.scenarios import OptimizerConfig, run_suite

NEUTRALITY_TOL = 1e-9


def participating_demand_kw(case: MicrogridCase) -> np.ndarray:
    """Hourly total demand of the load points enrolled in the programme."""
    if case.dr is None:
        raise ValueError("case has no demand response program")
    total = np.zeros(case.horizon)
    for lp in case.load_points:
        if lp.category in case.dr.participating:
            total += np.asarray(lp.profile_kw, dtype=float)
    return total


def shift_bounds_kw(case: MicrogridCase) -> np.ndarray:
    """Per-hour cap on shiftable power, fraction times participating demand."""
    if case.dr is None:
        raise ValueError("case has no demand response program")
    return case.dr.shiftable_fraction * participating_demand_kw(case)


def apply_shift(case: MicrogridCase, shift: Sequence[float]) -> MicrogridCase:
    """A copy of the case with the shift folded into the load profiles.

    The shift must be energy neutral, must not remove more than the
    shiftable fraction of any hour's participating demand, and cannot add
    load in an hour where no participating demand exists to distribute it.
    """
    if case.dr is None:
        raise ValueError("case has no demand response program")
    arr = np.asarray(shift, dtype=float)
    if arr.shape != (case.horizon,):
        raise ValueError(f"shift must have shape ({case.horizon},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("shift contains non-finite entries")

    total = participating_demand_kw(case)
    residual = abs(float(arr.sum()))
    if residual > NEUTRALITY_TOL * max(1.0, float(np.abs(arr).sum())):
        raise ValueError(f"shift is not energy neutral, residual {residual:.3e} kW")
    bound = case.dr.shiftable_fraction * total
    slack = 1e-9 * np.maximum(1.0, total)
    low = np.nonzero(arr < -bound - slack)[0]
    if low.size:
        t = int(low[0])
        raise ValueError(
            f"shift removes {-arr[t]:.6g} kW at hour {t}, cap is {bound[t]:.6g} kW"
        )
    empty = np.nonzero((arr > NEUTRALITY_TOL) & (total <= 0.0))[0]
    if empty.size:
        t = int(empty[0])
        raise ValueError(f"shift adds load at hour {t} where no participating demand exists")
    if np.any(total + arr < -slack):
        raise ValueError("shift drives participating demand negative")

    safe = np.where(total > 0, total, 1.0)
    points = []
    for lp in case.load_points:
        if lp.category not in case.dr.participating:
            points.append(lp)
            continue
        profile = np.asarray(lp.profile_kw, dtype=float)
        share = np.where(total > 0, profile / safe, 0.0)
        shifted = np.maximum(profile + share * arr, 0.0)
        points.append(replace(lp, profile_kw=tuple(float(v) for v in shifted)))
    return replace(case, load_points=tuple(points))


def optimize_with_dr(
    case: MicrogridCase,
    weights: Optional[Sequence[float]] = None,
    config: Optional[OptimizerConfig] = None,
) -> Tuple[DispatchSchedule, ObjectiveValues]:
    """Weighted-objective dispatch with the shift vector co-optimised.

    Runs the whole scenario suite because the weighted objective is
    normalised against the single-objective optima; the returned schedule
    carries the shift series.  A zero shiftable fraction degenerates to the
    plain weighted run with a zero shift attached.
    """
    if case.dr is None:
        raise ValueError("case has no demand response program")
    suite = run_suite(case, config=config, weights=weights, include_dr=True)
    result = suite.results["dr"]
    return result.schedule, result.objectives
