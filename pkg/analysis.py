"""Comparison of relaxed and limit trajectories, invariant monitors and order fits.

The four error channels measure how far a relaxed run (index eps) is from the limit
run sharing its initial data and step sequence:

    sup_t_L2_u                      sup_t ||u - u_eps||_2
    L2T_H1_u                        (int_0^T ||u - u_eps||_H1^2 dt)^(1/2)
    sup_t_H1_v                      sup_t ||v - v_eps||_H1
    sup_t_L2_grad_v_minus_grad_w    sup_t ||grad v - grad w_eps||_2

Usage:
    report = epsilon_sweep(initial, params, time_spec, [1e-1, 1e-2, 1e-3])
    report.fits["sup_t_L2_u"].order
"""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from errors import AlignmentError, ConfigError, FitError, SimulationError
from integrator import TimeSpec, Trajectory, cfl_dt, solve
from mesh_fields import Field, State, grad_sq_norm, h1_norm, norm_lp
from models import InitialData, ModelParams

logger = logging.getLogger(__name__)

CHANNELS = ("sup_t_L2_u", "L2T_H1_u", "sup_t_H1_v", "sup_t_L2_grad_v_minus_grad_w")
BOUND_TOL = 1e-8
POSITIVITY_FLOOR = -1e-10
ORDER_BAND = (0.75, 1.25)
SUPERCONVERGENT_ABOVE = 1.4
DEFAULT_ERROR_FLOOR = 1e-10
ASYMPTOTIC_POINTS = 3  # smallest eps values entering the reported order
SQUARED_CHANNELS = ("final_grad_w_minus_v_sq",)


@dataclass(frozen=True)
class NormReport:
    """Distance between one relaxed trajectory and the limit trajectory."""

    eps: float
    horizon: float
    sup_t_L2_u: float
    L2T_H1_u: float
    sup_t_H1_v: float
    sup_t_L2_grad_v_minus_grad_w: float
    final_grad_w_minus_v_sq: float  # ||grad w_eps - grad v_eps||_2^2 at the horizon

    def channel(self, name: str) -> float:
        return getattr(self, name)


def _states(traj: Trajectory) -> list[State]:
    return traj.history if traj.history is not None else traj.snapshots


def _chemical(state: State) -> Field:
    return state.v if state.w is None else state.w


def error_norms(traj_eps: Trajectory, traj_lim: Trajectory) -> NormReport:
    """Error channels between a relaxed and a limit trajectory on a shared time grid.

    Per-step histories are used when both runs kept them, otherwise the snapshots.

    Raises:
        AlignmentError: if the grids or the time grids differ.
    """
    states_eps, states_lim = _states(traj_eps), _states(traj_lim)
    if states_eps[0].grid != states_lim[0].grid:
        raise AlignmentError("trajectories live on different grids")
    times_eps = np.array([s.time for s in states_eps])
    times_lim = np.array([s.time for s in states_lim])
    if times_eps.shape != times_lim.shape or not np.array_equal(times_eps, times_lim):
        raise AlignmentError(
            f"time grids differ ({len(times_eps)} vs {len(times_lim)} states); "
            "run both models on the same fixed step schedule"
        )

    l2_u, h1_u_sq, h1_v, grad_gap = [], [], [], []
    for se, sl in zip(states_eps, states_lim, strict=True):
        du = sl.u - se.u
        l2_u.append(norm_lp(du, 2))
        h1_u_sq.append(h1_norm(du) ** 2)
        h1_v.append(h1_norm(sl.v - se.v))
        grad_gap.append(math.sqrt(grad_sq_norm(sl.v - _chemical(se))))

    # right-endpoint rule over the shared steps
    steps = np.diff(times_eps)
    space_time = math.sqrt(float(np.sum(steps * np.array(h1_u_sq[1:])))) if steps.size else 0.0

    final = states_eps[-1]
    return NormReport(
        eps=traj_eps.params.eps,
        horizon=float(times_eps[-1]),
        sup_t_L2_u=max(l2_u),
        L2T_H1_u=space_time,
        sup_t_H1_v=max(h1_v),
        sup_t_L2_grad_v_minus_grad_w=max(grad_gap),
        final_grad_w_minus_v_sq=grad_sq_norm(_chemical(final) - final.v),
    )


@dataclass(frozen=True)
class Violation:
    check: str
    time: float
    bound: float
    observed: float


@dataclass(frozen=True)
class InvariantReport:
    """Outcome of the a priori bound checks on one trajectory.

    The L1 bounds and the windowed space-time bounds use computed stand-ins for the
    existence constants (``max(int f0, |Omega|)`` and friends), not sharp constants.
    """

    min_values: dict[str, float]
    sup_l1: dict[str, float]
    l1_bounds: dict[str, float]
    sup_linf_v: float
    v_inf_bar: float
    sup_linf_w: float | None
    window: float
    window_sq: dict[str, float]
    window_bounds: dict[str, float]
    sup_grad_sq_v: float
    grad_gap_times: tuple[float, ...]
    grad_gap_curve: tuple[float, ...]  # ||grad w - grad v||_2 per step
    mass: float | None = None  # predator-prey: sup_t (int z + b int v)
    mass_bound: float | None = None
    violations: tuple[Violation, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations


def _windowed_sq(times: np.ndarray, sq: np.ndarray, window: float) -> float:
    """Largest left-endpoint sum of ``dt * sq`` over windows of length ``window``."""
    if times.size < 2:
        return 0.0
    weighted = np.diff(times) * sq[:-1]
    cumulative = np.concatenate(([0.0], np.cumsum(weighted)))
    ends = np.searchsorted(times, times + window * (1 + 1e-12), side="right") - 1
    return float(np.max(cumulative[ends] - cumulative))


def monitor_invariants(
    traj: Trajectory, p: ModelParams, tol: float = BOUND_TOL
) -> InvariantReport:
    """Check the positivity, L1, L-infinity and space-time bounds along ``traj``.

    Violations are collected, logged at WARNING and returned, never raised.
    """
    frame = traj.diagnostics_frame()
    grid = traj.snapshots[0].grid
    measure = grid.measure
    times = frame["time"].to_numpy()
    relaxed = traj.model == "indirect"
    first, second, third = p.species
    keys = {"u": first, "v": second, "w": third}
    violations: list[Violation] = []

    def check(name: str, observed: np.ndarray, bound: np.ndarray | float, slack: float) -> None:
        excess = observed - (bound + slack)
        if np.any(excess > 0):
            k = int(np.argmax(excess))
            limit = bound[k] if isinstance(bound, np.ndarray) else bound
            violations.append(Violation(name, float(times[k]), float(limit), float(observed[k])))

    fields_present = ("u", "v", "w") if relaxed else ("u", "v")
    min_values = {}
    for name in fields_present:
        lowest = frame[f"min_{name}"].to_numpy()
        min_values[keys[name]] = float(lowest.min())
        check(f"positivity_{keys[name]}", -lowest, -POSITIVITY_FLOOR, 0.0)

    l1 = {name: frame[f"l1_{name}"].to_numpy() for name in fields_present}
    v1_bar = max(l1["v"][0], measure)
    l1_bounds = {keys["v"]: v1_bar}
    mass = mass_bound = None
    if p.model == "competition":
        u1_bar = max(l1["u"][0], measure)
        l1_bounds[keys["u"]] = u1_bar
        first_window_coeff = 1.0 + 1.0 / p.mu1
        first_scale = u1_bar
    else:
        # int z + b int v decays towards K by the logistic comparison
        mass_curve = l1["u"] + p.b * l1["v"]
        mass_bound = max(
            float(mass_curve[0]),
            measure
            / 4.0
            * (max(p.mu1 + 1.0, 0.0) ** 2 / p.mu1_prime + p.b * (p.mu2 + 1.0) ** 2 / p.mu2),
        )
        mass = float(mass_curve.max())
        check("mass_functional", mass_curve, mass_bound, tol)
        l1_bounds[keys["u"]] = mass_bound
        first_scale = mass_bound
    if relaxed:
        l1_bounds[keys["w"]] = max(l1["w"][0], v1_bar)
    sup_l1 = {}
    for name in fields_present:
        sup_l1[keys[name]] = float(l1[name].max())
        check(f"l1_{keys[name]}", l1[name], l1_bounds[keys[name]], tol)

    max_v = frame["max_v"].to_numpy()
    v_inf_bar = max(1.0, float(max_v[0]))
    check(f"linf_{keys['v']}", max_v, v_inf_bar, tol)

    sup_linf_w = None
    if relaxed:
        max_w = frame["max_w"].to_numpy()
        w0 = float(max_w[0])
        continuous = v_inf_bar + (w0 - v_inf_bar) * np.exp(-times / p.eps)
        discrete = np.empty_like(times)
        discrete[0] = w0
        for k, dt in enumerate(frame["dt"].to_numpy()[1:], start=1):
            discrete[k] = (discrete[k - 1] / dt + v_inf_bar / p.eps) / (1.0 / dt + 1.0 / p.eps)
        check(f"linf_{keys['w']}", max_w, np.maximum(continuous, discrete), tol)
        sup_linf_w = float(max_w.max())

    window = min(1.0, float(times[-1])) if times[-1] > 0 else 0.0
    window_sq = {
        keys["u"]: _windowed_sq(times, frame["sq_u"].to_numpy(), window),
        keys["v"]: _windowed_sq(times, frame["sq_v"].to_numpy(), window),
    }
    if p.model == "predprey":
        growth = max(p.mu1 + p.b * p.response.consumption_bound * v_inf_bar, 0.0)
        first_bound = first_scale * (1.0 + growth) / p.mu1_prime
    else:
        first_bound = first_scale * first_window_coeff
    window_bounds = {keys["u"]: first_bound, keys["v"]: v1_bar * (1.0 + 1.0 / p.mu2)}
    for name, observed in window_sq.items():
        if observed > window_bounds[name] + tol:
            violations.append(
                Violation(f"window_sq_{name}", float(times[-1]), window_bounds[name], observed)
            )

    gap = frame["grad_gap"].to_numpy() if relaxed else np.zeros_like(times)
    for v in violations:
        logger.warning(
            f"invariant {v.check} violated at t={v.time:.4g}: {v.observed:.6g} > {v.bound:.6g}"
        )

    return InvariantReport(
        min_values=min_values,
        sup_l1=sup_l1,
        l1_bounds=l1_bounds,
        sup_linf_v=float(max_v.max()),
        v_inf_bar=v_inf_bar,
        sup_linf_w=sup_linf_w,
        window=window,
        window_sq=window_sq,
        window_bounds=window_bounds,
        sup_grad_sq_v=float(frame["grad_sq_v"].max()),
        grad_gap_times=tuple(float(t) for t in times),
        grad_gap_curve=tuple(float(g) for g in np.sqrt(np.abs(gap))),
        mass=mass,
        mass_bound=mass_bound,
        violations=tuple(violations),
    )


def fit_power_law(rows: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit ``error ~ C eps^order``; returns ``(order, C)``.

    Raises:
        FitError: on fewer than three rows, a non-positive error or eps that do not
            strictly decrease.
    """
    if len(rows) < 3:
        raise FitError(f"an order fit needs at least 3 points, got {len(rows)}")
    eps = np.array([r[0] for r in rows], dtype=float)
    errors = np.array([r[1] for r in rows], dtype=float)
    if not np.all(np.isfinite(errors)) or np.any(errors <= 0):
        raise FitError("errors must be positive for a log-log fit (below floor)")
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise FitError("eps values must be positive and strictly decreasing")
    slope, intercept = np.polyfit(np.log(eps), np.log(errors), 1)
    return float(slope), float(math.exp(intercept))


def fit_order(rows: Sequence[tuple[float, float]]) -> float:
    """Slope of log(error) against log(eps)."""
    return fit_power_law(rows)[0]


def classify_order(
    order: float,
    band: tuple[float, float] = ORDER_BAND,
    superconvergent_above: float = SUPERCONVERGENT_ABOVE,
) -> str:
    if band[0] <= order <= band[1]:
        return "ok"
    if order > superconvergent_above:
        return "superconvergent: inspect"
    return "outside band"


@dataclass(frozen=True)
class FittedOrder:
    channel: str
    order: float  # over the asymptotic range; nan when below floor
    constant: float
    status: str
    full_order: float = math.nan  # over every row


def channel_floor(channel: str, error_floor: float) -> float:
    """Floor on the scale of ``channel``: squared norms are compared with ``error_floor**2``."""
    return error_floor**2 if channel in SQUARED_CHANNELS else error_floor


def fit_channel(
    channel: str,
    rows: Sequence[tuple[float, float]],
    error_floor: float = DEFAULT_ERROR_FLOOR,
    band: tuple[float, float] = ORDER_BAND,
    superconvergent_above: float = SUPERCONVERGENT_ABOVE,
    asymptotic_points: int = ASYMPTOTIC_POINTS,
) -> FittedOrder:
    """Fit one error channel, reporting ``below floor`` instead of fitting round-off.

    The classified order is the slope over the ``asymptotic_points`` smallest eps;
    at large eps the relaxation time is comparable to the time scale of v and the
    error saturates below the linear rate. The slope over every row is kept as
    ``full_order``.
    """
    floor = channel_floor(channel, error_floor)
    if any(error <= floor for _, error in rows):
        return FittedOrder(channel, math.nan, math.nan, "below floor")
    full_order, full_constant = fit_power_law(rows)
    if len(rows) > asymptotic_points:
        order, constant = fit_power_law(rows[-asymptotic_points:])
    else:
        order, constant = full_order, full_constant
    status = classify_order(order, band, superconvergent_above)
    return FittedOrder(channel, order, constant, status, full_order)


@dataclass(frozen=True)
class SweepReport:
    """Per-eps error rows (decreasing eps) with fitted convergence orders."""

    rows: tuple[NormReport, ...]
    fits: dict[str, FittedOrder]
    gap_fit: FittedOrder  # final ||grad w_eps - grad v_eps||^2 against eps
    gap_monotone: bool
    digest: str
    dt: float
    invariants: dict[str, InvariantReport] = field(default_factory=dict)
    trajectories: dict[str, Trajectory] = field(default_factory=dict, repr=False, compare=False)

    @property
    def eps_list(self) -> tuple[float, ...]:
        return tuple(r.eps for r in self.rows)

    @property
    def invariants_passed(self) -> bool:
        return all(r.passed for r in self.invariants.values())

    def frame(self) -> pd.DataFrame:
        columns = ["eps", *CHANNELS, "final_grad_w_minus_v_sq"]
        return pd.DataFrame([asdict(r) for r in self.rows])[columns]


def _validate_eps_list(eps_list: Sequence[float]) -> list[float]:
    values = [float(e) for e in eps_list]
    if len(values) < 3:
        raise FitError(f"a sweep needs at least 3 eps values, got {len(values)}")
    if any(b >= a for a, b in zip(values, values[1:], strict=False)):
        raise FitError(f"eps values must be strictly decreasing, got {values}")
    for eps in values:
        if not 0.0 < eps <= 1.0:
            raise ConfigError(f"eps must lie in (0,1], got {eps}")
    return values


def shared_step(initial: InitialData, p: ModelParams, ts: TimeSpec) -> float:
    """Fixed step used by every member of a sweep.

    An explicit ``ts.fixed_dt`` wins; otherwise the initial CFL bound under both the
    relaxed and the limit drift.
    """
    if ts.fixed_dt is not None:
        return ts.fixed_dt
    return min(
        cfl_dt(initial.u0, initial.w0, p, ts, v=initial.v0),
        cfl_dt(initial.u0, initial.v0, p, ts),
    )


def _run_member(
    initial: InitialData, p: ModelParams, ts: TimeSpec, model: str, log_every: int
) -> Trajectory:
    try:
        return solve(initial, p, ts, model, record_history=True, log_every=log_every)
    except SimulationError as err:
        if model == "indirect":
            raise err.with_context(eps=p.eps) from err
        raise


def epsilon_sweep(
    initial: InitialData,
    params: ModelParams,
    time_spec: TimeSpec,
    eps_list: Sequence[float],
    *,
    workers: int = 1,
    error_floor: float = DEFAULT_ERROR_FLOOR,
    digest: str = "",
    log_every: int = 0,
) -> SweepReport:
    """Run the limit model once and the relaxed model once per eps, then compare.

    All runs share one fixed step schedule, so errors are evaluated step by step
    without temporal interpolation. Members run in a process pool when
    ``workers > 1``; results are reduced in eps order either way.

    Raises:
        FitError: fewer than three eps values or eps not strictly decreasing
        ConfigError: eps outside (0,1]
        SimulationError: any member failure, tagged with its eps
    """
    values = _validate_eps_list(eps_list)
    dt = shared_step(initial, params, time_spec)
    ts = replace(time_spec, fixed_dt=dt)
    logger.info(f"Sweeping {len(values)} eps values with shared dt={dt:.3e}")

    members = [("limit", params)] + [("indirect", replace(params, eps=e)) for e in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_member, initial, p, ts, model, log_every) for model, p in members
            ]
            trajectories = [f.result() for f in futures]
    else:
        trajectories = [_run_member(initial, p, ts, model, log_every) for model, p in members]

    limit, relaxed = trajectories[0], trajectories[1:]
    rows = tuple(error_norms(traj, limit) for traj in relaxed)
    for row in rows:
        logger.info(f"eps={row.eps:g}: sup_t_L2_u={row.sup_t_L2_u:.3e}")

    fits = {
        name: fit_channel(name, [(r.eps, r.channel(name)) for r in rows], error_floor)
        for name in CHANNELS
    }
    gaps = [(r.eps, r.final_grad_w_minus_v_sq) for r in rows]
    gap_fit = fit_channel(
        "final_grad_w_minus_v_sq", gaps, error_floor, (ORDER_BAND[0], math.inf), math.inf
    )  # squared norm: floor is error_floor**2
    gap_monotone = all(b < a for (_, a), (_, b) in zip(gaps, gaps[1:], strict=False))

    labels = ["limit"] + [f"eps={e:g}" for e in values]
    invariants = {
        label: monitor_invariants(traj, traj.params)
        for label, traj in zip(labels, trajectories, strict=True)
    }
    kept = {
        label: replace(traj, history=None)
        for label, traj in zip(labels, trajectories, strict=True)
    }
    return SweepReport(rows, fits, gap_fit, gap_monotone, digest, dt, invariants, kept)
