"""Dispatch problem encoding shared by the GA seeder and the SQP refiner.

A candidate plan is a flat vector: unit setpoints hour-major per unit, then
the signed battery power, then the optional load-shift series.  This module
owns the mapping between vectors and schedules, batched evaluation of the
four objectives over whole populations, the repair operators that keep
device constraints satisfied exactly, and the smooth split-battery problem
the SQP refiner works on.

Evaluation is vectorised end to end: a population of plans becomes one
column batch for the network sweep (population times hours columns), the
state of charge is an affine map of the charge and discharge series, and
the expected outage cost reuses the per-contingency precomputation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..devices import COMMIT_EPS, DispatchSchedule
from ..netmodel import MicrogridCase
from ..objectives import OBJECTIVE_KEYS, ObjectiveBounds
from ..powerflow import (
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
    CompiledNetwork,
    compile_network,
    load_consumption_pu,
    shift_distribution_pu,
    sweep,
)
from ..reliability import ContingencyEvaluator
from .derivatives import DEFAULT_REL_STEP
from .sqp import NlpProblem, SqpConfig, SqpResult, sqp_solve

# Objective stand-in for plans whose power flow failed; large enough to lose
# every tournament without overflowing arithmetic downstream.
LARGE_OBJECTIVE = 1e9


@dataclass(frozen=True)
class ObjectiveSpec:
    """What a single optimisation run minimises.

    ``key`` is one of the four objective keys or "weighted".  The weighted
    form normalises each objective against ``bounds``; ``clamp_upper``
    selects the reporting convention (hard [0, 1] clamp) while the default
    keeps slope above the upper bound so the optimiser still feels values
    beyond it.
    """

    key: str
    weights: Optional[Dict[str, float]] = None
    bounds: Optional[ObjectiveBounds] = None
    clamp_upper: bool = False

    def __post_init__(self) -> None:
        if self.key != "weighted" and self.key not in OBJECTIVE_KEYS:
            raise ValueError(f"unknown objective key {self.key!r}")
        if self.key == "weighted" and (self.weights is None or self.bounds is None):
            raise ValueError("weighted objective needs weights and bounds")

    def scalar_array(self, values: Dict[str, np.ndarray]) -> np.ndarray:
        """Scalarise per-plan objective values (arrays broadcast together)."""
        if self.key != "weighted":
            return np.asarray(values[self.key], dtype=float)
        total: np.ndarray = np.zeros_like(np.asarray(values["cost"], dtype=float))
        for key in OBJECTIVE_KEYS:
            low, high = self.bounds[key]
            span = high - low
            if span <= 1e-12 * max(1.0, abs(low), abs(high)):
                continue
            z = (np.asarray(values[key], dtype=float) - low) / span
            z = np.maximum(z, 0.0)
            if self.clamp_upper:
                z = np.minimum(z, 1.0)
            total = total + self.weights[key] * z
        return total

    def scalar(self, values: Dict[str, float]) -> float:
        return float(self.scalar_array({k: np.asarray([v]) for k, v in values.items()})[0])

    def chain(self, values: Dict[str, float]) -> Dict[str, float]:
        """d(scalar)/d(objective value) at the given point, per key."""
        if self.key != "weighted":
            return {self.key: 1.0}
        coeffs: Dict[str, float] = {}
        for key in OBJECTIVE_KEYS:
            low, high = self.bounds[key]
            span = high - low
            if span <= 1e-12 * max(1.0, abs(low), abs(high)):
                continue
            z = (values[key] - low) / span
            if z <= 0.0 or (self.clamp_upper and z >= 1.0):
                continue
            coeffs[key] = self.weights[key] / span
        return coeffs


@dataclass
class BatchMetrics:
    """Evaluation of a population of plans, one row per plan."""

    values: Dict[str, np.ndarray]
    violation: np.ndarray
    ok: np.ndarray
    slack_kw: np.ndarray
    soc_kwh: np.ndarray
    vmag: np.ndarray
    hourly_cost: np.ndarray
    hourly_loss_kw: np.ndarray
    hourly_vdev: np.ndarray


class DispatchProblem:
    """Vector encoding and evaluation machinery for one case."""

    def __init__(
        self,
        case: MicrogridCase,
        dr: bool = False,
        net: Optional[CompiledNetwork] = None,
        evaluator: Optional[ContingencyEvaluator] = None,
        tolerance: float = DEFAULT_TOLERANCE,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        fd_rel_step: float = DEFAULT_REL_STEP,
    ):
        if dr and case.dr is None:
            raise ValueError("case defines no demand response program")
        self.case = case
        self.dr = dr
        self.net = net or compile_network(case)
        self.evaluator = evaluator or ContingencyEvaluator(case)
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.fd_rel_step = fd_rel_step

        T = case.horizon
        units = case.units
        self.T = T
        self.n_units = len(units)
        self.u_len = self.n_units * T
        self.n = self.u_len + T + (T if dr else 0)
        self.b_off = self.u_len
        self.s_off = self.u_len + T

        self.unit_bus = np.array([self.net.bus_index[u.bus] for u in units], dtype=int)
        self.batt_bus = None if case.battery is None else self.net.bus_index[case.battery.bus]
        self.load_idx = np.array(
            sorted({self.net.bus_index[lp.bus] for lp in case.load_points}), dtype=int
        )
        self.base_load = load_consumption_pu(case, self.net)
        self.shift_factors = shift_distribution_pu(case, self.net) if dr else None

        self.caps = np.empty((self.n_units, T))
        for i, u in enumerate(units):
            if u.renewable:
                avail = np.asarray(case.availability_kw[u.name], dtype=float)
                self.caps[i] = np.minimum(avail, u.p_max_kw)
            else:
                self.caps[i] = u.p_max_kw
        self.slopes = np.array([u.cost_slope_ct_per_kwh for u in units])
        self.fixed = np.array([u.cost_fixed_ct_per_h for u in units])

        if dr:
            base = np.zeros(T)
            for lp in case.load_points:
                if lp.category in case.dr.participating:
                    base += np.asarray(lp.profile_kw, dtype=float)
            self.shift_bound = case.dr.shiftable_fraction * base
        else:
            self.shift_bound = np.zeros(T)

        lower = np.zeros(self.n)
        upper = np.zeros(self.n)
        upper[: self.u_len] = self.caps.reshape(-1)
        p_batt = 0.0 if case.battery is None else case.battery.p_max_kw
        lower[self.b_off : self.b_off + T] = -p_batt
        upper[self.b_off : self.b_off + T] = p_batt
        if dr:
            lower[self.s_off :] = -self.shift_bound
            upper[self.s_off :] = self.shift_bound
        self.lower = lower
        self.upper = upper

        self.prices = np.asarray(case.prices_ct_per_kwh, dtype=float)
        self.dt = case.period_hours
        self.vmin, self.vmax = case.voltage_limits
        self.import_limit = case.grid_limit_kw
        self.export_limit = case.effective_export_limit_kw
        self.s_base = case.base_power_kva

        # SOC is affine in the split charge/discharge series:
        # soc = soc0 * decay + chg @ M_c.T - dis @ M_d.T
        if case.battery is not None:
            b = case.battery
            keep = 1.0 - b.self_discharge_per_h * self.dt
            steps = np.arange(T)
            ages = np.subtract.outer(steps, steps)
            K = np.where(ages >= 0, keep ** np.maximum(ages, 0), 0.0)
            self.soc_decay = keep ** np.arange(1, T + 1)
            self.M_c = b.eta_charge * self.dt * K
            self.M_d = (self.dt / b.eta_discharge) * K
            self._keep = keep
        else:
            self.soc_decay = np.zeros(T)
            self.M_c = np.zeros((T, T))
            self.M_d = np.zeros((T, T))
            self._keep = 1.0

    # ------------------------------------------------------------------
    # vector <-> schedule

    def unpack(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p_units = X[:, : self.u_len].reshape(X.shape[0], self.n_units, self.T)
        p_batt = X[:, self.b_off : self.b_off + self.T]
        shift = X[:, self.s_off :] if self.dr else None
        return p_units, p_batt, shift

    def pack(self, schedule: DispatchSchedule) -> np.ndarray:
        parts = [schedule.dg_setpoints.reshape(-1), schedule.battery_power]
        if self.dr:
            shift = schedule.dr_shift if schedule.dr_shift is not None else np.zeros(self.T)
            parts.append(shift)
        return np.concatenate(parts)

    def schedule(self, x: np.ndarray) -> DispatchSchedule:
        p_units, p_batt, shift = self.unpack(x)
        return DispatchSchedule(
            p_units[0].copy(),
            p_batt[0].copy(),
            shift[0].copy() if shift is not None else None,
        )

    # ------------------------------------------------------------------
    # evaluation

    def soc_signed(self, p_batt: np.ndarray) -> np.ndarray:
        """End-of-period SOC for signed battery rows, kWh."""
        if self.case.battery is None:
            return np.zeros_like(p_batt)
        return self.soc_split(np.maximum(p_batt, 0.0), np.maximum(-p_batt, 0.0))

    def soc_split(self, chg: np.ndarray, dis: np.ndarray) -> np.ndarray:
        if self.case.battery is None:
            return np.zeros_like(chg)
        soc0 = self.case.battery.soc_initial_kwh
        return soc0 * self.soc_decay[np.newaxis, :] + chg @ self.M_c.T - dis @ self.M_d.T

    def _network_eval(
        self, p_units: np.ndarray, p_net: np.ndarray, shift: Optional[np.ndarray]
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Sweep one population: (vmag [n_bus,B,T], slack_kw, loss_kw, ok)."""
        B = p_net.shape[0]
        n_bus, T = self.net.n_bus, self.T
        cons = np.repeat(self.base_load[:, np.newaxis, :], B, axis=1)
        np.subtract.at(cons, self.unit_bus, p_units.transpose(1, 0, 2) / self.s_base)
        if self.batt_bus is not None:
            cons[self.batt_bus] += p_net / self.s_base
        if shift is not None:
            cons += self.shift_factors[:, np.newaxis, :] * shift[np.newaxis, :, :]
        res = sweep(self.net, cons.reshape(n_bus, B * T), self.tolerance, self.max_iterations)
        with np.errstate(invalid="ignore"):
            vmag = np.abs(res.voltage).reshape(n_bus, B, T)
        slack_s = res.voltage[self.net.slack] * np.conj(res.slack_current)
        slack_kw = slack_s.real.reshape(B, T) * self.s_base
        loss_kw = (
            (np.abs(res.branch_current) ** 2 * self.net.z_pu.real[:, np.newaxis]).sum(axis=0)
        ).reshape(B, T) * self.s_base
        ok = res.converged.reshape(B, T).all(axis=1)
        return vmag, slack_kw, loss_kw, ok

    def _hourly_cost(
        self,
        p_units: np.ndarray,
        slack_kw: np.ndarray,
        throughput_kw: np.ndarray,
        shift: Optional[np.ndarray],
    ) -> np.ndarray:
        """Operation cost per plan and hour, ct."""
        rate = np.zeros_like(slack_kw)
        for i in range(self.n_units):
            p = p_units[:, i, :]
            rate += np.where(p > COMMIT_EPS, self.slopes[i] * p + self.fixed[i], 0.0)
        rate += self.prices[np.newaxis, :] * slack_kw
        if self.case.battery is not None:
            rate += self.case.battery.usage_cost_ct_per_kwh * throughput_kw
        if shift is not None and self.case.dr is not None:
            rate += self.case.dr.incentive_ct_per_kwh * np.maximum(shift, 0.0)
        return rate * self.dt

    def _violation(self, vmag: np.ndarray, slack_kw: np.ndarray) -> np.ndarray:
        """Network violation per plan, per-unit so voltage and power compare."""
        v_low = np.maximum(0.0, self.vmin - vmag).sum(axis=(0, 2))
        v_high = np.maximum(0.0, vmag - self.vmax).sum(axis=(0, 2))
        g_in = np.maximum(0.0, slack_kw - self.import_limit).sum(axis=1) / self.s_base
        if np.isfinite(self.export_limit):
            g_out = np.maximum(0.0, -slack_kw - self.export_limit).sum(axis=1) / self.s_base
        else:
            g_out = 0.0
        return v_low + v_high + g_in + g_out

    def metrics(self, X: np.ndarray) -> BatchMetrics:
        """Objectives and network violation for a population of plans."""
        p_units, p_batt, shift = self.unpack(X)
        vmag, slack_kw, loss_kw, ok = self._network_eval(p_units, p_batt, shift)
        soc = self.soc_signed(p_batt)
        hourly_cost = self._hourly_cost(p_units, slack_kw, np.abs(p_batt), shift)
        hourly_vdev = np.abs(1.0 - vmag[self.load_idx]).sum(axis=0)
        ens = self.evaluator.cost_batch(soc)
        with np.errstate(invalid="ignore"):
            values = {
                "cost": np.where(ok, np.nan_to_num(hourly_cost, nan=LARGE_OBJECTIVE).sum(axis=1), LARGE_OBJECTIVE),
                "loss": np.where(ok, np.nan_to_num(loss_kw, nan=LARGE_OBJECTIVE).sum(axis=1) * self.dt, LARGE_OBJECTIVE),
                "ens": ens,
                "vdev": np.where(ok, np.nan_to_num(hourly_vdev, nan=LARGE_OBJECTIVE).sum(axis=1), LARGE_OBJECTIVE),
            }
            violation = np.where(ok, np.nan_to_num(self._violation(vmag, slack_kw), nan=LARGE_OBJECTIVE), LARGE_OBJECTIVE)
        return BatchMetrics(
            values=values,
            violation=violation,
            ok=ok,
            slack_kw=slack_kw,
            soc_kwh=soc,
            vmag=vmag,
            hourly_cost=hourly_cost,
            hourly_loss_kw=loss_kw,
            hourly_vdev=hourly_vdev,
        )

    # ------------------------------------------------------------------
    # repair

    def repair(self, X: np.ndarray) -> np.ndarray:
        """Project plans onto device-feasible points (box, commitment, SOC,
        shift balance).  Network constraints stay with the penalty."""
        X = np.clip(np.atleast_2d(np.asarray(X, dtype=float)), self.lower, self.upper)
        for i, unit in enumerate(self.case.units):
            if not unit.committable:
                continue
            block = slice(i * self.T, (i + 1) * self.T)
            p = X[:, block]
            X[:, block] = np.where(
                p < 0.5 * unit.p_min_kw, 0.0, np.clip(p, unit.p_min_kw, unit.p_max_kw)
            )
        if self.case.battery is not None:
            X[:, self.b_off : self.b_off + self.T] = self._repair_battery(
                X[:, self.b_off : self.b_off + self.T]
            )
        if self.dr:
            X[:, self.s_off :] = self._project_shift(X[:, self.s_off :])
        return X

    def _repair_battery(self, p: np.ndarray) -> np.ndarray:
        """Row-parallel version of the sequential smallest-change SOC clip."""
        b = self.case.battery
        gain = b.eta_charge * self.dt
        drain = self.dt / b.eta_discharge
        p = np.clip(p, -b.p_max_kw, b.p_max_kw)
        state = np.full(p.shape[0], b.soc_initial_kwh)
        out = np.empty_like(p)
        for t in range(p.shape[1]):
            e_min = b.soc_min_kwh - state * self._keep
            e_max = b.soc_max_kwh - state * self._keep
            e = gain * np.maximum(p[:, t], 0.0) + drain * np.minimum(p[:, t], 0.0)
            e = np.clip(e, e_min, e_max)
            power = np.where(e >= 0, e / gain, e * b.eta_discharge / self.dt)
            power = np.clip(power, -b.p_max_kw, b.p_max_kw)
            e = gain * np.maximum(power, 0.0) + drain * np.minimum(power, 0.0)
            state = state * self._keep + e
            out[:, t] = power
        return out

    def _project_shift(self, s: np.ndarray) -> np.ndarray:
        """Project shift rows onto zero net energy inside the hourly box.

        Solves sum(clip(s - mu, lo, hi)) = 0 for mu by bisection; the sum is
        monotone in mu and the bracket endpoints clip every hour to one
        bound, so the residual after 80 halvings is at roundoff.
        """
        lo = -self.shift_bound[np.newaxis, :]
        hi = self.shift_bound[np.newaxis, :]
        s = np.clip(s, lo, hi)
        mu_lo = (s - hi).min(axis=1)
        mu_hi = (s - lo).max(axis=1)
        for _ in range(80):
            mu = 0.5 * (mu_lo + mu_hi)
            total = np.clip(s - mu[:, np.newaxis], lo, hi).sum(axis=1)
            mu_lo = np.where(total > 0, mu, mu_lo)
            mu_hi = np.where(total > 0, mu_hi, mu)
        mu = 0.5 * (mu_lo + mu_hi)
        return np.clip(s - mu[:, np.newaxis], lo, hi)

    # ------------------------------------------------------------------
    # starting points

    def seed_points(self) -> np.ndarray:
        """Structured starting plans: idle, full output, price-driven, and a
        charge-early battery cycle.  All repaired."""
        T = self.T
        seeds = np.zeros((4, self.n))
        seeds[1, : self.u_len] = self.caps.reshape(-1)

        greedy = seeds[2]
        for i, unit in enumerate(self.case.units):
            if unit.committable:
                breakeven = unit.cost_slope_ct_per_kwh + unit.cost_fixed_ct_per_h / unit.p_max_kw
                on = self.prices >= breakeven
                greedy[i * T : (i + 1) * T] = np.where(on, unit.p_max_kw, 0.0)
            else:
                on = self.prices >= unit.cost_slope_ct_per_kwh
                greedy[i * T : (i + 1) * T] = np.where(on, self.caps[i], 0.0)
        if self.case.battery is not None:
            order = np.argsort(self.prices, kind="stable")
            window = max(1, T // 6)
            plan = np.zeros(T)
            plan[order[:window]] = self.case.battery.p_max_kw
            plan[order[-window:]] = -self.case.battery.p_max_kw
            greedy[self.b_off : self.b_off + T] = plan
            quarter = max(1, T // 4)
            charge_up = np.zeros(T)
            charge_up[:quarter] = self.case.battery.p_max_kw
            charge_up[-quarter:] = -self.case.battery.p_max_kw
            seeds[3, self.b_off : self.b_off + T] = charge_up
        if self.dr:
            thirds = np.argsort(self.prices, kind="stable")
            cut = T // 3
            shift = np.zeros(T)
            shift[thirds[:cut]] = self.shift_bound[thirds[:cut]]
            shift[thirds[-cut:]] = -self.shift_bound[thirds[-cut:]]
            greedy[self.s_off :] = shift
        return self.repair(seeds)

    def ga_functions(self, spec: ObjectiveSpec):
        """(evaluate, repair) pair in the shape the genetic seeder expects."""

        def evaluate(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            m = self.metrics(X)
            obj = spec.scalar_array(m.values)
            obj = np.where(m.ok, obj, LARGE_OBJECTIVE)
            return obj, m.violation

        return evaluate, self.repair

    # ------------------------------------------------------------------
    # split-battery smooth problem for the SQP refiner

    def commitment_mask(self, x: np.ndarray) -> np.ndarray:
        """Per unit-hour on/off decision implied by a repaired plan."""
        p_units = self.unpack(x)[0][0]
        mask = np.ones((self.n_units, self.T), dtype=bool)
        for i, unit in enumerate(self.case.units):
            if unit.committable:
                mask[i] = p_units[i] > 0.5 * unit.p_min_kw
        return mask

    def split_bounds(self, commit: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        T = self.T
        ns = self.u_len + 2 * T + (T if self.dr else 0)
        lower = np.zeros(ns)
        upper = np.zeros(ns)
        for i, unit in enumerate(self.case.units):
            block = slice(i * T, (i + 1) * T)
            if unit.committable:
                lower[block] = np.where(commit[i], unit.p_min_kw, 0.0)
                upper[block] = np.where(commit[i], unit.p_max_kw, 0.0)
            else:
                upper[block] = self.caps[i]
        p_batt = 0.0 if self.case.battery is None else self.case.battery.p_max_kw
        upper[self.u_len : self.u_len + 2 * T] = p_batt
        if self.dr:
            lower[self.u_len + 2 * T :] = -self.shift_bound
            upper[self.u_len + 2 * T :] = self.shift_bound
        return lower, upper

    def split_from_signed(self, x: np.ndarray) -> np.ndarray:
        p_units, p_batt, shift = self.unpack(x)
        parts = [p_units[0].reshape(-1), np.maximum(p_batt[0], 0.0), np.maximum(-p_batt[0], 0.0)]
        if self.dr:
            parts.append(shift[0])
        return np.concatenate(parts)

    def signed_from_split(self, xs: np.ndarray) -> np.ndarray:
        T = self.T
        chg = xs[self.u_len : self.u_len + T]
        dis = xs[self.u_len + T : self.u_len + 2 * T]
        parts = [xs[: self.u_len], chg - dis]
        if self.dr:
            parts.append(xs[self.u_len + 2 * T :])
        return np.concatenate(parts)

    def split_parts(self, Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[np.ndarray]]:
        Xs = np.atleast_2d(Xs)
        T = self.T
        p_units = Xs[:, : self.u_len].reshape(Xs.shape[0], self.n_units, T)
        chg = Xs[:, self.u_len : self.u_len + T]
        dis = Xs[:, self.u_len + T : self.u_len + 2 * T]
        shift = Xs[:, self.u_len + 2 * T :] if self.dr else None
        return p_units, chg, dis, shift

    def split_eval(self, Xs: np.ndarray) -> Dict[str, np.ndarray]:
        """Hourly metrics for split-battery rows.

        Simultaneous charge and discharge is allowed by the relaxation; it
        pays throughput cost on both and loses the round-trip deficit from
        the SOC, so the optimum keeps them complementary.
        """
        p_units, chg, dis, shift = self.split_parts(Xs)
        p_net = chg - dis
        vmag, slack_kw, loss_kw, ok = self._network_eval(p_units, p_net, shift)
        soc = self.soc_split(chg, dis)
        hourly_cost = self._hourly_cost(p_units, slack_kw, chg + dis, shift)
        hourly_vdev = np.abs(1.0 - vmag[self.load_idx]).sum(axis=0)
        return {
            "vmag": vmag,
            "slack_kw": slack_kw,
            "hourly_loss_kw": loss_kw,
            "hourly_cost": hourly_cost,
            "hourly_vdev": hourly_vdev,
            "soc": soc,
            "ok": ok,
            "values": {
                "cost": hourly_cost.sum(axis=1),
                "loss": loss_kw.sum(axis=1) * self.dt,
                "ens": self.evaluator.cost_batch(soc),
                "vdev": hourly_vdev.sum(axis=1),
            },
        }

    def screen_rows(self, vmag: np.ndarray, voltage_margin: float = 0.02) -> List[Tuple]:
        """Constraint rows worth carrying in the smooth subproblem.

        SOC bounds and grid limits are always in; voltage rows only where the
        seed comes within ``voltage_margin`` of a limit.  The refine loop adds
        any row found violated afterwards, so screening costs only reruns.
        """
        rows: List[Tuple] = []
        if self.case.battery is not None:
            rows.extend(("soc_lo", t) for t in range(self.T))
            rows.extend(("soc_hi", t) for t in range(self.T))
        rows.extend(("imp", t) for t in range(self.T))
        if np.isfinite(self.export_limit):
            rows.extend(("exp", t) for t in range(self.T))
        near_lo = vmag < self.vmin + voltage_margin
        near_hi = vmag > self.vmax - voltage_margin
        for b, t in zip(*np.nonzero(near_lo)):
            if b != self.net.slack:
                rows.append(("v_lo", int(b), int(t)))
        for b, t in zip(*np.nonzero(near_hi)):
            if b != self.net.slack:
                rows.append(("v_hi", int(b), int(t)))
        return rows

    def violated_rows(self, vmag: np.ndarray, slack_kw: np.ndarray, tol: float = 1e-9) -> List[Tuple]:
        """All network rows a single plan violates beyond tol."""
        rows: List[Tuple] = []
        for b, t in zip(*np.nonzero(vmag < self.vmin - tol)):
            if b != self.net.slack:
                rows.append(("v_lo", int(b), int(t)))
        for b, t in zip(*np.nonzero(vmag > self.vmax + tol)):
            if b != self.net.slack:
                rows.append(("v_hi", int(b), int(t)))
        for t in np.nonzero(slack_kw > self.import_limit + tol * self.s_base)[0]:
            rows.append(("imp", int(t)))
        if np.isfinite(self.export_limit):
            for t in np.nonzero(-slack_kw > self.export_limit + tol * self.s_base)[0]:
                rows.append(("exp", int(t)))
        return rows

    def refine(
        self,
        x: np.ndarray,
        spec: ObjectiveSpec,
        config: Optional[SqpConfig] = None,
        voltage_margin: float = 0.02,
        max_rounds: int = 3,
    ) -> "RefineResult":
        """SQP-polish a repaired plan; never returns a worse reported value.

        Commitment is frozen at the seed's on/off pattern.  After each solve
        the split battery merges back to a signed series and the plan is
        re-repaired (merging can only raise the SOC); any network row the
        polished plan violates joins the subproblem and the solve repeats.
        """
        report = replace(spec, clamp_upper=True) if spec.key == "weighted" else spec
        x = self.repair(x)[0]
        seed_m = self.metrics(x)
        seed_value = float(report.scalar_array(seed_m.values)[0])
        seed_feasible = bool(seed_m.ok[0]) and float(seed_m.violation[0]) <= 1e-7

        commit = self.commitment_mask(x)
        lower, upper = self.split_bounds(commit)
        xs = np.clip(self.split_from_signed(x), lower, upper)
        rows = self.screen_rows(seed_m.vmag[:, 0, :], voltage_margin)

        best_x = x
        best_value = seed_value if seed_feasible else np.inf
        sqp_result: Optional[SqpResult] = None
        rounds = 0
        for _ in range(max_rounds):
            rounds += 1
            nlp = _SplitDispatchNlp(self, spec, lower, upper, rows)
            sqp_result = sqp_solve(nlp, xs, config)
            xs = sqp_result.x
            candidate = self.repair(self.signed_from_split(xs))[0]
            cand_m = self.metrics(candidate)
            new_rows = [
                r
                for r in self.violated_rows(cand_m.vmag[:, 0, :], cand_m.slack_kw[0], tol=1e-7)
                if r not in rows
            ]
            feasible = bool(cand_m.ok[0]) and not new_rows
            value = float(report.scalar_array(cand_m.values)[0])
            if feasible and value < best_value:
                best_value = value
                best_x = candidate
            if not new_rows:
                break
            rows = rows + new_rows
        if not np.isfinite(best_value):
            # Neither the seed nor any polish round was feasible; fall back
            # to the least-violating of the two.
            candidate = self.repair(self.signed_from_split(xs))[0]
            cand_m = self.metrics(candidate)
            best_x = candidate if float(cand_m.violation[0]) < float(seed_m.violation[0]) else x
            best_value = float(report.scalar_array(self.metrics(best_x).values)[0])
        return RefineResult(
            x=best_x,
            value=best_value,
            seed_value=seed_value,
            improved=best_value < seed_value - 1e-12 * max(1.0, abs(seed_value)),
            rounds=rounds,
            sqp=sqp_result,
        )


@dataclass
class RefineResult:
    x: np.ndarray
    value: float
    seed_value: float
    improved: bool
    rounds: int
    sqp: Optional[SqpResult]


class _SplitDispatchNlp(NlpProblem):
    """Smooth dispatch subproblem over the split-battery vector."""

    def __init__(
        self,
        problem: DispatchProblem,
        spec: ObjectiveSpec,
        lower: np.ndarray,
        upper: np.ndarray,
        rows: List[Tuple],
    ):
        super().__init__(lambda z: 0.0, lower, upper, fd_rel_step=problem.fd_rel_step)
        self.problem = problem
        self.spec = spec
        self.rows = rows
        self._cache: Dict[bytes, Dict] = {}
        battery = problem.case.battery
        self._soc_scale = (
            battery.soc_max_kwh - battery.soc_min_kwh if battery is not None else 1.0
        )

    def _eval(self, xs: np.ndarray) -> Dict:
        key = xs.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            data = self.problem.split_eval(xs[np.newaxis, :])
            hit = {
                "vmag": data["vmag"][:, 0, :],
                "slack_kw": data["slack_kw"][0],
                "soc": data["soc"][0],
                "values": {k: float(v[0]) for k, v in data["values"].items()},
                "ok": bool(data["ok"][0]),
            }
            if len(self._cache) >= 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit

    def objective(self, xs: np.ndarray) -> float:
        data = self._eval(xs)
        if not data["ok"]:
            return LARGE_OBJECTIVE
        return self.spec.scalar(data["values"])

    def eq_constraints(self, xs: np.ndarray) -> np.ndarray:
        if not self.problem.dr:
            return np.zeros(0)
        shift = xs[self.problem.u_len + 2 * self.problem.T :]
        return np.array([shift.sum() / self.problem.s_base])

    def ineq_constraints(self, xs: np.ndarray) -> np.ndarray:
        data = self._eval(xs)
        p = self.problem
        out = np.empty(len(self.rows))
        for i, row in enumerate(self.rows):
            kind = row[0]
            if kind == "soc_lo":
                out[i] = (p.case.battery.soc_min_kwh - data["soc"][row[1]]) / self._soc_scale
            elif kind == "soc_hi":
                out[i] = (data["soc"][row[1]] - p.case.battery.soc_max_kwh) / self._soc_scale
            elif kind == "imp":
                out[i] = (data["slack_kw"][row[1]] - p.import_limit) / p.s_base
            elif kind == "exp":
                out[i] = (-data["slack_kw"][row[1]] - p.export_limit) / p.s_base
            elif kind == "v_lo":
                out[i] = p.vmin - data["vmag"][row[1], row[2]]
            else:
                out[i] = data["vmag"][row[1], row[2]] - p.vmax
        return out

    def nonlinear_eq(self, n_eq: int) -> np.ndarray:
        return np.zeros(n_eq, dtype=bool)

    def nonlinear_ineq(self, n_in: int) -> np.ndarray:
        return np.array([row[0] not in ("soc_lo", "soc_hi") for row in self.rows])

    def derivatives(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched central differences exploiting hour separability.

        Perturbing every free hour of one block at once still isolates each
        partial, because hour t of any network quantity depends only on hour
        t of the plan.  The outage cost is the exception; it chains through
        the affine SOC map instead.
        """
        p = self.problem
        T, ns = p.T, xs.size
        free = (self.upper - self.lower) > 1e-14 * np.maximum(1.0, np.abs(self.lower))
        h = p.fd_rel_step * np.maximum(1.0, np.abs(xs))

        blocks: List[Tuple[int, np.ndarray]] = []
        for u in range(p.n_units):
            start = u * T
            mask = np.zeros(ns, dtype=bool)
            mask[start : start + T] = free[start : start + T]
            if mask.any():
                blocks.append((start, mask))
        for start in (p.u_len, p.u_len + T) if p.case.battery is not None else ():
            mask = np.zeros(ns, dtype=bool)
            mask[start : start + T] = free[start : start + T]
            if mask.any():
                blocks.append((start, mask))
        if p.dr:
            start = p.u_len + 2 * T
            mask = np.zeros(ns, dtype=bool)
            mask[start : start + T] = free[start : start + T]
            if mask.any():
                blocks.append((start, mask))

        nb = len(blocks)
        X = np.empty((2 * nb, ns))
        for bi, (_, mask) in enumerate(blocks):
            X[2 * bi] = xs + np.where(mask, h, 0.0)
            X[2 * bi + 1] = xs - np.where(mask, h, 0.0)
        data = p.split_eval(X) if nb else None

        grads = {key: np.zeros(ns) for key in OBJECTIVE_KEYS}
        d_vmag = np.zeros((p.net.n_bus, T, ns)) if self.rows else None
        d_slack = np.zeros((T, ns))
        for bi, (start, mask) in enumerate(blocks):
            hours = np.nonzero(mask[start : start + T])[0]
            cols = start + hours
            denom = 2.0 * h[cols]
            hi, lo_ = 2 * bi, 2 * bi + 1
            grads["cost"][cols] = (data["hourly_cost"][hi, hours] - data["hourly_cost"][lo_, hours]) / denom
            grads["loss"][cols] = (data["hourly_loss_kw"][hi, hours] - data["hourly_loss_kw"][lo_, hours]) * p.dt / denom
            grads["vdev"][cols] = (data["hourly_vdev"][hi, hours] - data["hourly_vdev"][lo_, hours]) / denom
            d_slack[hours, cols] = (data["slack_kw"][hi, hours] - data["slack_kw"][lo_, hours]) / denom
            if d_vmag is not None:
                d_vmag[:, hours, cols] = (data["vmag"][:, hi, hours] - data["vmag"][:, lo_, hours]) / denom

        if p.case.battery is not None:
            soc = self._eval(xs)["soc"]
            hs = p.fd_rel_step * np.maximum(1.0, np.abs(soc))
            probe = np.repeat(soc[np.newaxis, :], 2 * T, axis=0)
            probe[2 * np.arange(T), np.arange(T)] += hs
            probe[2 * np.arange(T) + 1, np.arange(T)] -= hs
            costs = p.evaluator.cost_batch(probe)
            g_soc = (costs[0::2] - costs[1::2]) / (2.0 * hs)
            grads["ens"][p.u_len : p.u_len + T] = g_soc @ p.M_c
            grads["ens"][p.u_len + T : p.u_len + 2 * T] = -(g_soc @ p.M_d)

        chain = self.spec.chain(self._eval(xs)["values"])
        grad = np.zeros(ns)
        for key, coeff in chain.items():
            grad += coeff * grads[key]

        if p.dr:
            J_eq = np.zeros((1, ns))
            J_eq[0, p.u_len + 2 * T :] = 1.0 / p.s_base
        else:
            J_eq = np.zeros((0, ns))

        J_in = np.zeros((len(self.rows), ns))
        for i, row in enumerate(self.rows):
            kind = row[0]
            if kind == "soc_lo":
                J_in[i, p.u_len : p.u_len + T] = -p.M_c[row[1]] / self._soc_scale
                J_in[i, p.u_len + T : p.u_len + 2 * T] = p.M_d[row[1]] / self._soc_scale
            elif kind == "soc_hi":
                J_in[i, p.u_len : p.u_len + T] = p.M_c[row[1]] / self._soc_scale
                J_in[i, p.u_len + T : p.u_len + 2 * T] = -p.M_d[row[1]] / self._soc_scale
            elif kind == "imp":
                J_in[i] = d_slack[row[1]] / p.s_base
            elif kind == "exp":
                J_in[i] = -d_slack[row[1]] / p.s_base
            elif kind == "v_lo":
                J_in[i] = -d_vmag[row[1], row[2]]
            else:
                J_in[i] = d_vmag[row[1], row[2]]
        return grad, J_eq, J_in
