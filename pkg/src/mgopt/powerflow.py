"""Radial power flow by the backward-forward sweep method.

The network is a tree rooted at the slack bus.  Each iteration draws
constant-power load currents from the present voltage guess, accumulates
branch currents from the leaves toward the root (backward sweep), then
re-derives voltages from the root outward across branch impedances (forward
sweep).  Loads are constant power at their power factor, generators are
negative constant-power loads at unity power factor, the battery is a signed
constant-power injection, and the slack bus absorbs whatever residual the
balance needs.

The sweep is vectorised over an arbitrary number of injection columns, so a
whole horizon (or a whole GA population by stacking hours) solves in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from .devices import DispatchSchedule
from .netmodel import MicrogridCase, validate_radial

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 100
COLLAPSE_FLOOR_PU = 0.5


class PowerFlowError(RuntimeError):
    """Power flow failure; ``hour`` is the first offending column."""

    def __init__(self, message: str, hour: Optional[int] = None):
        super().__init__(message)
        self.hour = hour


class ConvergenceError(PowerFlowError):
    pass


class VoltageCollapseError(PowerFlowError):
    pass


@dataclass(frozen=True)
class CompiledNetwork:
    """Sweep-ready arrays for one case topology."""

    bus_ids: Tuple[str, ...]
    bus_index: Dict[str, int]
    slack: int
    branch_ids: Tuple[str, ...]
    parent: np.ndarray
    child: np.ndarray
    z_pu: np.ndarray
    s_base_kw: float

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_branch(self) -> int:
        return len(self.branch_ids)


def compile_network(case: MicrogridCase) -> CompiledNetwork:
    """Validate the topology and convert impedances to per-unit arrays."""
    ordered = validate_radial(case.buses, case.branches)
    bus_ids = case.bus_ids()
    index = {b: i for i, b in enumerate(bus_ids)}
    z_base = case.z_base_ohm
    return CompiledNetwork(
        bus_ids=bus_ids,
        bus_index=index,
        slack=index[case.slack_bus],
        branch_ids=tuple(b.id for b in ordered),
        parent=np.array([index[b.from_bus] for b in ordered], dtype=int),
        child=np.array([index[b.to_bus] for b in ordered], dtype=int),
        z_pu=np.array([(b.resistance_ohm + 1j * b.reactance_ohm) / z_base for b in ordered]),
        s_base_kw=case.base_power_kva,
    )


def load_consumption_pu(case: MicrogridCase, net: Optional[CompiledNetwork] = None) -> np.ndarray:
    """Complex constant-power demand per bus and hour, per-unit."""
    net = net or compile_network(case)
    s = np.zeros((net.n_bus, case.horizon), dtype=complex)
    for lp in case.load_points:
        tan_phi = math.tan(math.acos(lp.power_factor))
        p = np.asarray(lp.profile_kw, dtype=float)
        s[net.bus_index[lp.bus]] += (p + 1j * tan_phi * p) / net.s_base_kw
    return s


def shift_distribution_pu(case: MicrogridCase, net: Optional[CompiledNetwork] = None) -> np.ndarray:
    """Per-bus complex factor that one kW of DR shift adds at each hour.

    Shifted load spreads over participating load points in proportion to
    their demand that hour and keeps each point's power factor.  Hours with
    no participating demand get a zero column; apply_shift refuses shifts
    there.
    """
    if case.dr is None:
        raise ValueError("case has no demand response program")
    net = net or compile_network(case)
    factors = np.zeros((net.n_bus, case.horizon), dtype=complex)
    base = np.zeros(case.horizon)
    for lp in case.load_points:
        if lp.category in case.dr.participating:
            base += np.asarray(lp.profile_kw, dtype=float)
    safe = np.where(base > 0, base, 1.0)
    for lp in case.load_points:
        if lp.category not in case.dr.participating:
            continue
        tan_phi = math.tan(math.acos(lp.power_factor))
        share = np.where(base > 0, np.asarray(lp.profile_kw, dtype=float) / safe, 0.0)
        factors[net.bus_index[lp.bus]] += share * (1.0 + 1j * tan_phi)
    return factors / net.s_base_kw


def consumption_from_schedule(
    case: MicrogridCase,
    schedule: Optional[DispatchSchedule],
    net: Optional[CompiledNetwork] = None,
    base_load: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Net complex consumption per bus and hour under a schedule, per-unit."""
    net = net or compile_network(case)
    s = (load_consumption_pu(case, net) if base_load is None else base_load).copy()
    if schedule is None:
        return s
    for i, unit in enumerate(case.units):
        s[net.bus_index[unit.bus]] -= schedule.dg_setpoints[i] / net.s_base_kw
    if case.battery is not None:
        s[net.bus_index[case.battery.bus]] += schedule.battery_power / net.s_base_kw
    if schedule.dr_shift is not None:
        s += shift_distribution_pu(case, net) * schedule.dr_shift
    return s


class SweepResult(NamedTuple):
    voltage: np.ndarray
    branch_current: np.ndarray
    slack_current: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    collapsed: np.ndarray


def sweep(
    net: CompiledNetwork,
    consumption_pu: np.ndarray,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> SweepResult:
    """Run the backward-forward sweep on a column batch of injections.

    consumption_pu has shape (n_bus, m); positive real part consumes.
    Voltages start flat at 1.0 pu.  A column converges when its largest
    voltage change drops below ``tolerance``; columns whose magnitude dips
    under 0.5 pu are reported collapsed rather than merely unconverged.

    The returned currents are recomputed from the final voltages, so each
    bus absorbs exactly its specified power and the slack picks up losses;
    the loss identity then closes to roundoff.
    """
    s = np.asarray(consumption_pu, dtype=complex)
    squeeze = s.ndim == 1
    if squeeze:
        s = s[:, np.newaxis]
    n, m = s.shape
    v = np.ones((n, m), dtype=complex)
    i_branch = np.zeros((net.n_branch, m), dtype=complex)
    iterations = np.zeros(m, dtype=int)
    converged = np.zeros(m, dtype=bool)
    dipped = np.zeros(m, dtype=bool)
    parent, child = net.parent, net.child

    for k in range(1, max_iterations + 1):
        with np.errstate(all="ignore"):
            acc = np.conj(s / v)
        for b in range(net.n_branch):
            i_branch[b] = acc[child[b]]
            acc[parent[b]] += i_branch[b]
        v_new = v.copy()
        v_new[net.slack] = 1.0
        for b in range(net.n_branch - 1, -1, -1):
            v_new[child[b]] = v_new[parent[b]] - net.z_pu[b] * i_branch[b]
        with np.errstate(invalid="ignore"):
            dv = np.abs(v_new - v)
            magnitude = np.abs(v_new)
        dv = np.where(np.isfinite(dv), dv, np.inf).max(axis=0) if n else np.zeros(m)
        dipped |= ~np.isfinite(magnitude).all(axis=0)
        dipped |= np.where(np.isfinite(magnitude), magnitude, np.inf).min(axis=0) < COLLAPSE_FLOOR_PU
        v = v_new
        newly = ~converged & (dv < tolerance)
        iterations[newly] = k
        converged |= newly
        if converged.all():
            break

    with np.errstate(invalid="ignore"):
        magnitude = np.abs(v)
    finite = np.isfinite(magnitude).all(axis=0)
    final_low = np.where(np.isfinite(magnitude), magnitude, np.inf).min(axis=0) < COLLAPSE_FLOOR_PU
    collapsed = ~finite | final_low | (dipped & ~converged)
    converged &= ~collapsed
    iterations[~converged] = max_iterations

    with np.errstate(all="ignore"):
        acc = np.conj(s / v)
        acc[~np.isfinite(acc)] = 0.0
    for b in range(net.n_branch):
        i_branch[b] = acc[child[b]]
        acc[parent[b]] += i_branch[b]
    return SweepResult(v, i_branch, acc[net.slack].copy(), iterations, converged, collapsed)


@dataclass
class PowerFlowSolution:
    """Hourly sweep results, hour-major."""

    bus_ids: Tuple[str, ...]
    branch_ids: Tuple[str, ...]
    voltage: np.ndarray
    branch_current: np.ndarray
    loss_kw: np.ndarray
    slack_kw: np.ndarray
    slack_kvar: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    collapsed: np.ndarray

    @property
    def horizon(self) -> int:
        return self.voltage.shape[0]

    @property
    def voltage_magnitude(self) -> np.ndarray:
        return np.abs(self.voltage)

    def min_voltage(self) -> float:
        return float(self.voltage_magnitude.min())

    def bus_voltage(self, bus_id: str) -> np.ndarray:
        return self.voltage_magnitude[:, self.bus_ids.index(bus_id)]


def package_solution(net: CompiledNetwork, result: SweepResult) -> PowerFlowSolution:
    """Assemble the public record from raw sweep arrays."""
    s_slack = result.voltage[net.slack] * np.conj(result.slack_current) * net.s_base_kw
    loss = (np.abs(result.branch_current) ** 2 * net.z_pu.real[:, np.newaxis]).sum(axis=0) * net.s_base_kw
    return PowerFlowSolution(
        bus_ids=net.bus_ids,
        branch_ids=net.branch_ids,
        voltage=result.voltage.T.copy(),
        branch_current=result.branch_current.T.copy(),
        loss_kw=loss.real.copy(),
        slack_kw=s_slack.real.copy(),
        slack_kvar=s_slack.imag.copy(),
        iterations=result.iterations.copy(),
        converged=result.converged.copy(),
        collapsed=result.collapsed.copy(),
    )


def _raise_if_failed(result: SweepResult, max_iterations: int, hour_of: Optional[np.ndarray] = None) -> None:
    if result.converged.all():
        return
    column = int(np.flatnonzero(~result.converged)[0])
    hour = int(hour_of[column]) if hour_of is not None else column
    if result.collapsed[column]:
        raise VoltageCollapseError(f"voltage collapse below {COLLAPSE_FLOOR_PU} pu at hour {hour}", hour)
    raise ConvergenceError(f"no convergence within {max_iterations} iterations at hour {hour}", hour)


def solve_horizon(
    case: MicrogridCase,
    schedule: Optional[DispatchSchedule] = None,
    net: Optional[CompiledNetwork] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    raise_on_failure: bool = True,
) -> PowerFlowSolution:
    """Solve every hour of the horizon for a schedule (grid-only if None)."""
    net = net or compile_network(case)
    s = consumption_from_schedule(case, schedule, net)
    result = sweep(net, s, tolerance, max_iterations)
    if raise_on_failure:
        _raise_if_failed(result, max_iterations)
    return package_solution(net, result)


def solve_hour(
    case: MicrogridCase,
    schedule: Optional[DispatchSchedule] = None,
    hour: int = 0,
    net: Optional[CompiledNetwork] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    raise_on_failure: bool = True,
) -> PowerFlowSolution:
    """Solve a single hour; the result has horizon 1."""
    net = net or compile_network(case)
    s = consumption_from_schedule(case, schedule, net)[:, hour : hour + 1]
    result = sweep(net, s, tolerance, max_iterations)
    if raise_on_failure:
        _raise_if_failed(result, max_iterations, hour_of=np.array([hour]))
    return package_solution(net, result)
