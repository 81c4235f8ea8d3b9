import math

import numpy as np
import pytest

from mgopt.devices import DispatchSchedule, zero_schedule
from mgopt.powerflow import (
    CompiledNetwork,
    ConvergenceError,
    VoltageCollapseError,
    compile_network,
    consumption_from_schedule,
    load_consumption_pu,
    package_solution,
    shift_distribution_pu,
    solve_horizon,
    solve_hour,
    sweep,
)

from oracles import (
    branch_loss_pu,
    gauss_seidel_voltages,
    injection_balance_pu,
    random_radial_network,
    two_bus_voltage,
)


def _compiled(n_bus, branches, s_base_kw=100.0):
    """CompiledNetwork from (parent, child, z) tuples with parent < child."""
    ordered = sorted(branches, key=lambda br: -br[1])
    ids = tuple(str(i) for i in range(n_bus))
    return CompiledNetwork(
        bus_ids=ids,
        bus_index={b: i for i, b in enumerate(ids)},
        slack=0,
        branch_ids=tuple(f"l{c}" for _, c, _ in ordered),
        parent=np.array([p for p, _, _ in ordered], dtype=int),
        child=np.array([c for _, c, _ in ordered], dtype=int),
        z_pu=np.array([z for _, _, z in ordered]),
        s_base_kw=s_base_kw,
    )


def test_two_bus_closed_form():
    net = _compiled(2, [(0, 1, 0.05 + 0.0j)])
    result = sweep(net, np.array([0.0, 0.1], dtype=complex))
    expected = (1.0 + math.sqrt(1.0 - 4 * 0.05 * 0.1)) / 2.0
    assert expected == 0.9949747468305833
    assert abs(result.voltage[1, 0].real - expected) < 1e-12
    assert abs(result.voltage[1, 0].imag) < 1e-12
    assert result.converged.all()


def test_two_bus_with_reactance_matches_fixed_point():
    net = _compiled(2, [(0, 1, 0.03 + 0.02j)])
    s = np.array([0.0, 0.2 + 0.1j])
    result = sweep(net, s)
    expected = two_bus_voltage(0.03, 0.02, 0.2, 0.1)
    assert abs(result.voltage[1, 0] - expected) < 1e-12


def test_sweep_matches_admittance_reference():
    rng = np.random.default_rng(101)
    for _ in range(25):
        n, branches, s = random_radial_network(rng)
        net = _compiled(n, branches)
        result = sweep(net, s)
        assert result.converged.all()
        reference = gauss_seidel_voltages(n, branches, s)
        assert np.abs(result.voltage[:, 0] - reference).max() < 1e-8


def test_loss_identity_on_random_networks():
    rng = np.random.default_rng(202)
    for _ in range(25):
        n, branches, s = random_radial_network(rng)
        net = _compiled(n, branches)
        result = sweep(net, s)
        assert result.converged.all()
        v = result.voltage[:, 0]
        series = branch_loss_pu(v, branches)
        residual = injection_balance_pu(v, branches, s)
        assert abs(series - residual) < 1e-8


def test_loss_identity_on_benchmark(benchmark_case):
    net = compile_network(benchmark_case)
    s = load_consumption_pu(benchmark_case, net)
    result = sweep(net, s)
    assert result.converged.all()
    branches = list(zip(net.parent.tolist(), net.child.tolist(), net.z_pu.tolist()))
    for t in range(benchmark_case.horizon):
        v = result.voltage[:, t]
        series = branch_loss_pu(v, branches)
        residual = injection_balance_pu(v, branches, s[:, t])
        assert abs(series - residual) < 1e-8


def test_batch_equals_single_columns(benchmark_case):
    # Converged columns keep iterating until the whole batch settles, so
    # batch and single solves agree to the sweep tolerance, not bitwise.
    net = compile_network(benchmark_case)
    s = load_consumption_pu(benchmark_case, net)
    batch = sweep(net, s)
    for t in (0, 11, 23):
        single = sweep(net, s[:, t])
        assert np.abs(single.voltage[:, 0] - batch.voltage[:, t]).max() < 1e-9
        assert np.abs(single.branch_current[:, 0] - batch.branch_current[:, t]).max() < 1e-9


def test_slack_absorbs_loads_plus_losses(benchmark_case):
    solution = solve_horizon(benchmark_case)
    total_load = np.array(
        [benchmark_case.total_load_kw(t) for t in range(benchmark_case.horizon)]
    )
    assert np.abs(solution.slack_kw - total_load - solution.loss_kw).max() < 1e-6


def test_generation_raises_voltage_and_cuts_import(benchmark_case):
    base = solve_horizon(benchmark_case)
    schedule = zero_schedule(len(benchmark_case.units), benchmark_case.horizon)
    fc = [u.name for u in benchmark_case.units].index("FC")
    schedule.dg_setpoints[fc, :] = 40.0
    gen = solve_horizon(benchmark_case, schedule)
    assert gen.slack_kw.max() < base.slack_kw.max()
    assert gen.bus_voltage("f2-4").min() > base.bus_voltage("f2-4").min()


def test_battery_charge_adds_load(benchmark_case):
    schedule = zero_schedule(len(benchmark_case.units), benchmark_case.horizon)
    schedule.battery_power[:] = 10.0
    charged = solve_horizon(benchmark_case, schedule)
    base = solve_horizon(benchmark_case)
    assert np.all(charged.slack_kw > base.slack_kw)


def test_shift_distribution_is_unit_per_kw(benchmark_case):
    net = compile_network(benchmark_case)
    factors = shift_distribution_pu(benchmark_case, net)
    participating = np.zeros(benchmark_case.horizon)
    for lp in benchmark_case.load_points:
        if lp.category in benchmark_case.dr.participating:
            participating += np.asarray(lp.profile_kw)
    for t in range(benchmark_case.horizon):
        real_total = factors[:, t].real.sum() * net.s_base_kw
        if participating[t] > 0:
            assert abs(real_total - 1.0) < 1e-12
            assert factors[:, t].imag.sum() > 0.0
        else:
            assert real_total == 0.0


def test_shift_changes_consumption(benchmark_case):
    net = compile_network(benchmark_case)
    shift = np.zeros(benchmark_case.horizon)
    shift[3], shift[19] = 5.0, -5.0
    schedule = zero_schedule(len(benchmark_case.units), benchmark_case.horizon, dr=True)
    schedule.dr_shift[:] = shift
    s = consumption_from_schedule(benchmark_case, schedule, net)
    base = load_consumption_pu(benchmark_case, net)
    delta = (s - base).real.sum(axis=0) * net.s_base_kw
    assert abs(delta[3] - 5.0) < 1e-12
    assert abs(delta[19] + 5.0) < 1e-12
    assert np.abs(np.delete(delta, [3, 19])).max() < 1e-12


def test_solve_hour_matches_horizon(benchmark_case):
    full = solve_horizon(benchmark_case)
    one = solve_hour(benchmark_case, hour=9)
    assert np.array_equal(one.voltage[0], full.voltage[9])
    assert one.slack_kw[0] == full.slack_kw[9]
    assert one.horizon == 1


def test_voltage_collapse_detected():
    net = _compiled(2, [(0, 1, 0.05 + 0.02j)])
    result = sweep(net, np.array([0.0, 30.0], dtype=complex))
    assert bool(result.collapsed[0]) and not bool(result.converged[0])


def test_collapse_raises(benchmark_case):
    from dataclasses import replace

    heavy = benchmark_case.load_points[0]
    overloaded = replace(
        benchmark_case,
        load_points=benchmark_case.load_points + (replace(heavy, profile_kw=(4000.0,) * 24),),
        contingencies=(),
    )
    with pytest.raises(VoltageCollapseError):
        solve_horizon(overloaded)


def test_nonconvergence_raises(benchmark_case):
    with pytest.raises(ConvergenceError, match="at hour 0"):
        solve_horizon(benchmark_case, max_iterations=1)


def test_unconverged_flag_without_raise(benchmark_case):
    solution = solve_horizon(benchmark_case, max_iterations=1, raise_on_failure=False)
    assert not solution.converged.all()


def test_package_solution_loss_is_real_nonnegative(benchmark_case):
    net = compile_network(benchmark_case)
    result = sweep(net, load_consumption_pu(benchmark_case, net))
    solution = package_solution(net, result)
    assert solution.loss_kw.min() >= 0.0
    assert solution.voltage.shape == (24, net.n_bus)
    assert solution.min_voltage() > 0.95
