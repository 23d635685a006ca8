import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from analysis import (
    CHANNELS,
    channel_floor,
    classify_order,
    epsilon_sweep,
    error_norms,
    fit_channel,
    fit_power_law,
    monitor_invariants,
    shared_step,
    _windowed_sq,
)
from errors import AlignmentError, ConfigError, FitError
from integrator import TimeSpec, Trajectory, solve
from mesh_fields import Field, GridSpec, State
from models import (
    CompetitionParams,
    GaussianBump,
    InitialData,
    build_initial_data,
    coexistence_equilibrium,
)
from run_config import load_config_file
from simulate import initial_data_for


@pytest.fixture
def decoupled():
    grid = GridSpec.uniform(32)
    params = CompetitionParams(chi=0.0)
    return build_initial_data(GaussianBump(center=(0.4,)), grid), params


def test_identical_runs_have_zero_error(equilibrium_data, competition, short_time):
    a = solve(equilibrium_data, competition, short_time, "limit", record_history=True)
    b = solve(equilibrium_data, competition, short_time, "limit", record_history=True)
    report = error_norms(a, b)
    for name in CHANNELS:
        assert report.channel(name) == 0.0
    assert report.horizon == 0.05


def test_error_norms_by_hand():
    grid = GridSpec.uniform(4)
    one = Field.constant(grid, 1.0)
    ramp = Field.from_function(grid, lambda x: x)
    times = (0.0, 0.5, 1.0)
    limit = [State(one, one, None, t) for t in times]
    relaxed = [State(one + delta, one, one + ramp, t) for delta, t in zip((0, 0.1, 0.2), times)]
    report = error_norms(
        Trajectory("indirect", CompetitionParams(eps=0.2), relaxed, []),
        Trajectory("limit", CompetitionParams(), limit, []),
    )
    assert report.eps == 0.2
    assert report.sup_t_L2_u == pytest.approx(0.2)
    assert report.L2T_H1_u == pytest.approx(math.sqrt(0.5 * 0.01 + 0.5 * 0.04))
    assert report.sup_t_H1_v == 0.0
    # slope 1 on three interior faces of width 1/4
    assert report.sup_t_L2_grad_v_minus_grad_w == pytest.approx(math.sqrt(0.75))
    assert report.final_grad_w_minus_v_sq == pytest.approx(0.75)


def test_error_norms_symmetric_in_l2_channel(decoupled, short_time):
    initial, params = decoupled
    p = replace(params, chi=1.0)
    a = solve(initial, p, short_time, "indirect", record_history=True)
    b = solve(initial, p, short_time, "limit", record_history=True)
    assert error_norms(a, b).sup_t_L2_u == error_norms(b, a).sup_t_L2_u


def test_error_norms_alignment(equilibrium_data, competition, short_time):
    a = solve(equilibrium_data, competition, short_time, "limit")
    b = solve(equilibrium_data, competition, replace(short_time, fixed_dt=2e-3), "limit")
    with pytest.raises(AlignmentError):
        error_norms(a, b)
    level = Field.constant(GridSpec.uniform(16), 2.0 / 3.0)
    c = solve(InitialData(level, level, level), competition, short_time, "limit")
    with pytest.raises(AlignmentError):
        error_norms(a, c)


def test_fit_power_law_recovers_exponent():
    eps = [1e-1, 1e-2, 1e-3]
    order, constant = fit_power_law([(e, 3.0 * e) for e in eps])
    assert order == pytest.approx(1.0)
    assert constant == pytest.approx(3.0)
    order, _ = fit_power_law([(e, 0.5 * e**2) for e in eps])
    assert order == pytest.approx(2.0)


@pytest.mark.parametrize(
    "rows",
    [
        [(1e-1, 1e-2), (1e-2, 1e-3)],
        [(1e-1, 1e-2), (1e-2, 0.0), (1e-3, 1e-4)],
        [(1e-2, 1e-2), (1e-1, 1e-3), (1e-3, 1e-4)],
    ],
)
def test_fit_power_law_rejects(rows):
    with pytest.raises(FitError):
        fit_power_law(rows)


@pytest.mark.parametrize(
    ("order", "status"),
    [
        (1.0, "ok"),
        (0.75, "ok"),
        (1.3, "outside band"),
        (0.5, "outside band"),
        (1.6, "superconvergent: inspect"),
    ],
)
def test_classify_order(order, status):
    assert classify_order(order) == status


def test_fit_channel_below_floor():
    fit = fit_channel("sup_t_L2_u", [(1e-1, 1e-3), (1e-2, 1e-11), (1e-3, 1e-12)])
    assert fit.status == "below floor"
    assert math.isnan(fit.order)
    fit = fit_channel("sup_t_L2_u", [(1e-1, 1e-3), (1e-2, 1e-4), (1e-3, 1e-5)])
    assert fit.status == "ok"


def test_fit_channel_classifies_on_smallest_eps():
    # error saturating at large eps, linear below eps ~ 1/30
    eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
    fit = fit_channel("sup_t_L2_u", [(e, e / (1.0 + 30.0 * e)) for e in eps])
    assert fit.status == "ok"
    assert 0.85 < fit.order < 0.95
    assert fit.full_order < 0.75
    assert classify_order(fit.full_order) == "outside band"


def test_fit_channel_short_list_uses_every_row():
    fit = fit_channel("sup_t_L2_u", [(1e-1, 2e-2), (1e-2, 2e-3), (1e-3, 2e-4)])
    assert fit.order == pytest.approx(1.0)
    assert fit.full_order == pytest.approx(fit.order)
    assert fit.constant == pytest.approx(0.2)


def test_squared_channel_floor_is_squared():
    rows = [(1e-1, 1e-13), (1e-2, 1e-15), (1e-3, 1e-17)]
    assert channel_floor("final_grad_w_minus_v_sq", 1e-10) == pytest.approx(1e-20)
    assert channel_floor("sup_t_L2_u", 1e-10) == pytest.approx(1e-10)
    fit = fit_channel("final_grad_w_minus_v_sq", rows)
    assert fit.status != "below floor"
    assert fit.order == pytest.approx(2.0)
    assert fit_channel("sup_t_L2_u", rows).status == "below floor"


def test_windowed_sum():
    times = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    assert _windowed_sq(times, np.ones(5), 1.0) == pytest.approx(1.0)
    assert _windowed_sq(times, np.array([0.0, 0.0, 4.0, 0.0, 0.0]), 1.0) == pytest.approx(2.0)
    assert _windowed_sq(np.array([0.0]), np.ones(1), 1.0) == 0.0


def test_equilibrium_run_passes_monitors(equilibrium_data, competition, short_time):
    report = monitor_invariants(solve(equilibrium_data, competition, short_time), competition)
    assert report.passed
    assert set(report.min_values) == {"u", "v", "w"}
    assert report.v_inf_bar == 1.0
    assert report.l1_bounds["u"] == 1.0
    assert report.window == 0.05
    assert report.mass is None
    assert max(report.grad_gap_curve) < 1e-12


def test_predprey_monitors_use_species_names(line_grid, predprey, short_time):
    z_star, v_star = coexistence_equilibrium(predprey)
    z, v = Field.constant(line_grid, z_star), Field.constant(line_grid, v_star)
    traj = solve(InitialData(z, v, v), predprey, short_time)
    report = monitor_invariants(traj, predprey)
    assert report.passed
    assert set(report.sup_l1) == {"z", "v", "w"}
    assert report.mass == pytest.approx(z_star + v_star)
    assert report.mass_bound == pytest.approx(0.25 * (0.8**2 / 0.5 + 4.0))


def test_limit_run_monitors_two_fields(equilibrium_data, competition, short_time):
    traj = solve(equilibrium_data, competition, short_time, "limit")
    report = monitor_invariants(traj, competition)
    assert set(report.min_values) == {"u", "v"}
    assert report.sup_linf_w is None
    assert report.passed


def test_violations_are_collected_and_logged(equilibrium_data, competition, short_time, caplog):
    traj = solve(equilibrium_data, competition, short_time)
    traj.diagnostics[3] = replace(traj.diagnostics[3], min_u=-1e-3, max_v=1.5)
    with caplog.at_level(logging.WARNING, logger="analysis"):
        report = monitor_invariants(traj, competition)
    assert not report.passed
    checks = {v.check for v in report.violations}
    assert checks == {"positivity_u", "linf_v"}
    violation = next(v for v in report.violations if v.check == "linf_v")
    assert violation.time == traj.diagnostics[3].time
    assert violation.observed == 1.5
    assert "linf_v violated" in caplog.text


def test_sup_channels_grow_with_horizon(decoupled, short_time):
    initial, params = decoupled
    p = replace(params, chi=1.0, eps=0.05)
    ts = replace(short_time, snapshot_stride=5)
    relaxed = solve(initial, p, ts, "indirect")
    limit = solve(initial, p, ts, "limit")
    previous = None
    for k in range(1, len(relaxed.snapshots) + 1):
        report = error_norms(
            Trajectory("indirect", p, relaxed.snapshots[:k], relaxed.diagnostics),
            Trajectory("limit", p, limit.snapshots[:k], limit.diagnostics),
        )
        if previous is not None:
            for name in CHANNELS:
                assert report.channel(name) >= previous.channel(name), (k, name)
        previous = report
    assert previous.sup_t_L2_u > 0.0


def _chemical_lag(dt, line_grid, eps=0.1, t_end=0.3):
    data = InitialData(
        Field.zeros(line_grid), Field.constant(line_grid, 1.0), Field.zeros(line_grid), False
    )
    p = CompetitionParams(eps=eps)
    traj = solve(data, p, TimeSpec(t_end=t_end, fixed_dt=dt, snapshot_stride=1))
    frame = traj.diagnostics_frame()
    expected = 1.0 - np.exp(-frame["time"].to_numpy() / eps)
    return traj, p, float(np.max(np.abs(frame["max_w"].to_numpy() - expected)))


def test_chemical_sup_tracks_relaxation_curve(line_grid):
    traj, p, lag = _chemical_lag(1e-3, line_grid)
    _, _, finer_lag = _chemical_lag(5e-4, line_grid)
    assert lag <= 1e-3 / p.eps
    assert lag / finer_lag >= 1.9
    report = monitor_invariants(traj, p)
    assert report.passed
    assert report.v_inf_bar == 1.0
    assert report.sup_linf_w == pytest.approx(1.0 - math.exp(-3.0), abs=lag)
    assert report.sup_linf_w < 1.0


def test_shared_step(decoupled):
    initial, params = decoupled
    assert shared_step(initial, params, TimeSpec(t_end=1.0, fixed_dt=2e-4)) == 2e-4
    assert shared_step(initial, params, TimeSpec(t_end=1.0, dt_max=5e-3)) == 5e-3
    steep = replace(params, chi=20.0)
    assert shared_step(initial, steep, TimeSpec(t_end=1.0, dt_max=1.0)) < 0.01


@pytest.mark.parametrize(
    ("eps_list", "error"),
    [([0.1, 0.01], FitError), ([0.1, 0.2, 0.01], FitError), ([2.0, 1.0, 0.5], ConfigError)],
)
def test_sweep_rejects_eps_lists(decoupled, eps_list, error):
    initial, params = decoupled
    with pytest.raises(error):
        epsilon_sweep(initial, params, TimeSpec(t_end=0.01), eps_list)


def test_decoupled_sweep_is_below_floor(decoupled):
    initial, params = decoupled
    ts = TimeSpec(t_end=0.05, fixed_dt=1e-3, snapshot_stride=25)
    report = epsilon_sweep(initial, params, ts, [1e-1, 1e-2, 1e-3], digest="abc")
    assert report.eps_list == (1e-1, 1e-2, 1e-3)
    assert report.dt == 1e-3
    for row in report.rows:
        assert row.sup_t_L2_u == 0.0
        assert row.L2T_H1_u == 0.0
        assert row.sup_t_H1_v == 0.0
        assert row.sup_t_L2_grad_v_minus_grad_w > 0.0
    for name in ("sup_t_L2_u", "L2T_H1_u", "sup_t_H1_v"):
        assert report.fits[name].status == "below floor"
    assert report.gap_monotone
    assert set(report.invariants) == {"limit", "eps=0.1", "eps=0.01", "eps=0.001"}
    assert report.invariants_passed
    assert all(t.history is None for t in report.trajectories.values())
    assert list(report.frame().columns) == ["eps", *CHANNELS, "final_grad_w_minus_v_sq"]


def test_sweep_with_process_pool_matches_serial(decoupled):
    initial, params = decoupled
    p = replace(params, chi=1.0)
    ts = TimeSpec(t_end=0.02, fixed_dt=1e-3)
    serial = epsilon_sweep(initial, p, ts, [1e-1, 1e-2, 1e-3])
    pooled = epsilon_sweep(initial, p, ts, [1e-1, 1e-2, 1e-3], workers=2)
    assert pooled.rows == serial.rows


@pytest.mark.slow
def test_competition_sweep_converges_at_first_order(config_dir):
    cfg = load_config_file(config_dir / "competition_sweep.cfg")
    report = epsilon_sweep(initial_data_for(cfg), cfg.params, cfg.time, cfg.sweep.eps)
    for name in ("sup_t_L2_u", "sup_t_H1_v", "sup_t_L2_grad_v_minus_grad_w"):
        assert report.fits[name].status == "ok", report.fits[name]
    assert report.gap_monotone
    assert report.gap_fit.order >= 0.75
    assert math.isfinite(report.fits["sup_t_L2_u"].full_order)
    assert report.invariants_passed
    for inv in report.invariants.values():
        assert inv.sup_linf_v <= 1.0 + 1e-8


@pytest.mark.slow
def test_predprey_sweep_converges_at_first_order(config_dir):
    cfg = load_config_file(config_dir / "predprey_sweep.cfg")
    report = epsilon_sweep(initial_data_for(cfg), cfg.params, cfg.time, cfg.sweep.eps)
    assert report.fits["sup_t_L2_u"].status == "ok", report.fits["sup_t_L2_u"]
    assert all(min(inv.min_values.values()) >= -1e-10 for inv in report.invariants.values())
