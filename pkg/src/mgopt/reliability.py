"""Supply-interruption model: islanding, restoration, expected outage cost.

Each contingency removes one element (a branch, or the upstream transformer)
and islands the subtree cut off from the slack.  Restoration is a screening
cascade: in-island generator headroom covers what it can, then the battery
sustains up to its power limit and whatever energy lies above SOC_min spread
over the repair duration.  The remaining shortfall, split over load
categories in proportion to their islanded demand, is priced with the outage
cost table and weighted by the failure rate.

Each horizon step contributes one period of exposure: the expected cost adds
rate * period * shortfall * repair_duration * outage_cost per contingency and
hour, with the end-of-period SOC standing in for the battery state at the
moment of failure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .devices import DispatchSchedule, soc_trajectory
from .netmodel import Contingency, MicrogridCase, OutageCostTable, TRANSFORMER_ELEMENT

__all__ = [
    "Contingency",
    "OutageCostTable",
    "island_partition",
    "restoration",
    "unsupplied_energy_cost",
    "ContingencyEvaluator",
    "contingency_rows",
]


def island_partition(case: MicrogridCase, element: str) -> frozenset:
    """Bus ids cut off from the slack when ``element`` fails.

    ``element`` is a branch id or "transformer"; the transformer outage
    islands every bus.  The slack itself is never part of the island.
    """
    slack = case.slack_bus
    if element == TRANSFORMER_ELEMENT:
        return frozenset(b.id for b in case.buses if b.id != slack)
    if element not in {b.id for b in case.branches}:
        raise KeyError(f"unknown network element {element!r}")
    adjacency: Dict[str, List[str]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        if br.id == element:
            continue
        adjacency[br.from_bus].append(br.to_bus)
        adjacency[br.to_bus].append(br.from_bus)
    reached = {slack}
    stack = [slack]
    while stack:
        for neighbour in adjacency[stack.pop()]:
            if neighbour not in reached:
                reached.add(neighbour)
                stack.append(neighbour)
    return frozenset(b.id for b in case.buses if b.id not in reached)


def _island_headroom_kw(case: MicrogridCase, islanded: frozenset, hour: int) -> float:
    """Capacity screening of in-island generation: availability for
    renewables, nameplate maximum for dispatchables."""
    total = 0.0
    for unit in case.units:
        if unit.bus in islanded:
            total += case.availability_kw[unit.name][hour] if unit.renewable else unit.p_max_kw
    return total


def restoration(
    case: MicrogridCase,
    schedule: Optional[DispatchSchedule],
    hour: int,
    islanded: frozenset,
    repair_hours: float,
    soc_kwh: Optional[float] = None,
) -> Tuple[float, float, float]:
    """Restoration cascade for one islanding event at one hour.

    Returns (S_out, S_rdg, S_rst): islanded demand, the part in-island DG
    headroom can pick up, and the part the battery can sustain for the repair
    duration.  ``soc_kwh`` overrides the schedule-derived end-of-period SOC.
    """
    s_out = sum(lp.profile_kw[hour] for lp in case.load_points if lp.bus in islanded)
    s_rdg = min(s_out, _island_headroom_kw(case, islanded, hour))
    s_rst = 0.0
    battery = case.battery
    if battery is not None and battery.bus in islanded:
        if soc_kwh is None:
            powers = schedule.battery_power if schedule is not None else np.zeros(case.horizon)
            soc_kwh = float(soc_trajectory(battery, powers, case.period_hours)[hour])
        energy_limited = max(0.0, soc_kwh - battery.soc_min_kwh) / repair_hours
        s_rst = min(s_out - s_rdg, battery.p_max_kw, energy_limited)
        s_rst = max(0.0, s_rst)
    return s_out, s_rdg, s_rst


class ContingencyEvaluator:
    """Schedule-independent precomputation for fast expected-cost evaluation.

    Everything except the battery term is fixed by the case: islanded demand,
    in-island headroom and the category-weighted outage price per hour.  The
    expected cost is then a function of the SOC trajectory alone.
    """

    def __init__(self, case: MicrogridCase):
        self.case = case
        T = case.horizon
        self.terms = []
        for cont in case.contingencies:
            islanded = island_partition(case, cont.element)
            s_out = np.zeros(T)
            by_category: Dict[str, np.ndarray] = {}
            for lp in case.load_points:
                if lp.bus in islanded:
                    p = np.asarray(lp.profile_kw, dtype=float)
                    s_out += p
                    by_category[lp.category] = by_category.get(lp.category, 0.0) + p
            mix = np.zeros(T)
            positive = s_out > 0
            for category, p in by_category.items():
                price = case.outage_costs.cost(category, cont.repair_hours)
                mix[positive] += price * p[positive] / s_out[positive]
            headroom = np.array([_island_headroom_kw(case, islanded, t) for t in range(T)])
            self.terms.append(
                {
                    "contingency": cont,
                    "islanded": islanded,
                    "s_out": s_out,
                    "mix": mix,
                    "remainder": np.maximum(0.0, s_out - headroom),
                    "battery_in": case.battery is not None and case.battery.bus in islanded,
                }
            )

    def cost(self, soc_kwh: Optional[np.ndarray]) -> float:
        """Expected unsupplied-energy cost over the horizon, ct."""
        return float(self.cost_batch(None if soc_kwh is None else np.atleast_2d(soc_kwh))[0])

    def cost_batch(self, soc_kwh: Optional[np.ndarray]) -> np.ndarray:
        """Vectorised cost for a (batch, horizon) block of SOC trajectories."""
        case = self.case
        battery = case.battery
        batch = 1 if soc_kwh is None else soc_kwh.shape[0]
        total = np.zeros(batch)
        for term in self.terms:
            cont: Contingency = term["contingency"]
            remainder = term["remainder"][np.newaxis, :]
            if term["battery_in"] and battery is not None and soc_kwh is not None:
                sustain = np.maximum(0.0, soc_kwh - battery.soc_min_kwh) / cont.repair_hours
                s_rst = np.minimum(np.minimum(remainder, battery.p_max_kw), sustain)
            elif term["battery_in"] and battery is not None:
                sustain = max(0.0, battery.soc_initial_kwh - battery.soc_min_kwh) / cont.repair_hours
                s_rst = np.minimum(np.minimum(remainder, battery.p_max_kw), sustain)
            else:
                s_rst = np.zeros_like(remainder)
            shortfall = np.maximum(0.0, remainder - s_rst)
            hourly = term["mix"][np.newaxis, :] * shortfall
            total += cont.rate_per_hour * case.period_hours * cont.repair_hours * hourly.sum(axis=1)
        return total


def unsupplied_energy_cost(
    case: MicrogridCase,
    schedule: Optional[DispatchSchedule] = None,
    soc_kwh: Optional[np.ndarray] = None,
    evaluator: Optional[ContingencyEvaluator] = None,
) -> float:
    """Expected outage cost of a schedule over the horizon, ct."""
    if soc_kwh is None and case.battery is not None:
        powers = schedule.battery_power if schedule is not None else np.zeros(case.horizon)
        soc_kwh = soc_trajectory(case.battery, powers, case.period_hours)
    evaluator = evaluator or ContingencyEvaluator(case)
    return evaluator.cost(None if case.battery is None else soc_kwh)


def contingency_rows(case: MicrogridCase, schedule: Optional[DispatchSchedule] = None) -> List[Dict]:
    """Per-contingency, per-hour restoration breakdown for reporting."""
    soc = None
    if case.battery is not None:
        powers = schedule.battery_power if schedule is not None else np.zeros(case.horizon)
        soc = soc_trajectory(case.battery, powers, case.period_hours)
    rows: List[Dict] = []
    for cont in case.contingencies:
        islanded = island_partition(case, cont.element)
        for t in range(case.horizon):
            s_out, s_rdg, s_rst = restoration(
                case, schedule, t, islanded, cont.repair_hours,
                soc_kwh=None if soc is None else float(soc[t]),
            )
            shortfall = max(0.0, s_out - s_rdg - s_rst)
            mix = 0.0
            if s_out > 0:
                for lp in case.load_points:
                    if lp.bus in islanded:
                        price = case.outage_costs.cost(lp.category, cont.repair_hours)
                        mix += price * lp.profile_kw[t] / s_out
            rows.append(
                {
                    "contingency": cont.id,
                    "hour": t,
                    "islanded_kw": s_out,
                    "dg_restored_kw": s_rdg,
                    "battery_restored_kw": s_rst,
                    "shortfall_kw": shortfall,
                    "expected_cost_ct": cont.rate_per_hour * case.period_hours * cont.repair_hours * mix * shortfall,
                }
            )
    return rows
