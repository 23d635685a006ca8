"""IMEX time integration of the relaxed and limit taxis models.

One step of size ``dt`` treats diffusion and the eps-relaxation implicitly (backward
Euler) and the taxis and reaction terms explicitly:

    (I - dt d_u L) u'  = u + dt (taxis(u, w or v) + R_u)
    (I - dt d_v L) v'  = v + dt R_v
    ((1/dt + 1/eps) I - L) w' = w / dt + v' / eps

The relaxation solve uses the already updated prey density ``v'``; with that
ordering the eps -> 0 limit of the step is exactly the limit-model step.
Linear systems are tridiagonal in 1D (banded direct solve) and symmetric positive
definite in 2D (Jacobi-preconditioned conjugate gradients).
"""

import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, cg

from errors import BlowupError, DomainError, SimulationError, SolverError
from mesh_fields import Field, GridSpec, State, grad_sq_norm, integrate
from models import InitialData, ModelParams
from operators import (
    laplacian_matrix,
    max_face_velocity,
    reaction_jacobian_bound,
    reaction_terms,
    taxis_divergence,
)

logger = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e6
LINEAR_RTOL = 1e-10
CG_MAXITER = 10_000

# Optional forcing: maps the step start time to (S_u, S_v, S_w) arrays.
Source = Callable[[float], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class TimeSpec:
    """Horizon and step control of one run."""

    t_end: float
    dt_max: float = 1e-3
    cfl_adv: float = 0.5
    snapshot_stride: int = 10  # steps between snapshots
    snapshot_interval: float | None = None  # overrides the stride when set
    fixed_dt: float | None = None  # uniform schedule instead of CFL control

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise DomainError(f"t_end must be nonnegative, got {self.t_end}")
        if not self.dt_max > 0:
            raise DomainError(f"dt_max must be positive, got {self.dt_max}")
        if not (0 < self.cfl_adv <= 1):
            raise DomainError(f"cfl_adv must lie in (0,1], got {self.cfl_adv}")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise DomainError(
                f"snapshot_stride must be a positive integer, got {self.snapshot_stride}"
            )
        if self.snapshot_interval is not None and not self.snapshot_interval > 0:
            raise DomainError(f"snapshot_interval must be positive, got {self.snapshot_interval}")
        if self.fixed_dt is not None and not self.fixed_dt > 0:
            raise DomainError(f"fixed dt must be positive, got {self.fixed_dt}")

    def fixed_schedule(self) -> np.ndarray | None:
        """Step end times of the uniform schedule, or None under CFL control."""
        if self.fixed_dt is None or self.t_end == 0:
            return None
        steps = max(1, math.ceil(self.t_end / self.fixed_dt - 1e-9))
        return self.t_end * (np.arange(1, steps + 1) / steps)


@dataclass(frozen=True)
class StepDiagnostics:
    """Monitored quantities of the state reached at ``time`` (step 0 is the initial state)."""

    step: int
    time: float
    dt: float
    cfl_dt: float
    max_velocity: float
    min_u: float
    max_u: float
    min_v: float
    max_v: float
    min_w: float
    max_w: float
    l1_u: float
    l1_v: float
    l1_w: float
    sq_u: float  # int u^2
    sq_v: float
    grad_sq_v: float  # int |grad v|^2
    grad_gap: float  # int |grad (w - v)|^2


@dataclass
class Trajectory:
    """Snapshots and per-step diagnostics of one run."""

    model: str  # "indirect" or "limit"
    params: ModelParams
    snapshots: list[State]
    diagnostics: list[StepDiagnostics]
    history: list[State] | None = None  # every step, kept when requested

    @property
    def final(self) -> State:
        return self.snapshots[-1]

    @property
    def step_times(self) -> np.ndarray:
        return np.array([d.time for d in self.diagnostics])

    def diagnostics_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(d) for d in self.diagnostics])


class ShiftedLaplacianSolver:
    """Solve ``(shift I - diffusivity L) x = b`` with the Neumann Laplacian ``L``."""

    def __init__(self, grid: GridSpec, shift: float, diffusivity: float, rtol: float = LINEAR_RTOL):
        self.grid = grid
        self.rtol = rtol
        self.matrix = (
            shift * sp.identity(grid.size, format="csr") - diffusivity * laplacian_matrix(grid)
        ).tocsr()
        self.diagonal = self.matrix.diagonal()
        if grid.dim == 1:
            n = grid.size
            self.banded = np.zeros((3, n))
            self.banded[0, 1:] = self.matrix.diagonal(1)
            self.banded[1] = self.diagonal
            self.banded[2, :-1] = self.matrix.diagonal(-1)
        else:
            self.preconditioner = LinearOperator(
                self.matrix.shape, matvec=lambda x: x / self.diagonal, dtype=float
            )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.ascontiguousarray(rhs, dtype=float).ravel()
        if self.grid.dim == 1:
            x = solve_banded((1, 1), self.banded, b)
        else:
            x, info = cg(
                self.matrix,
                b,
                x0=b / self.diagonal,
                rtol=self.rtol * 0.1,
                atol=0.0,
                maxiter=CG_MAXITER,
                M=self.preconditioner,
            )
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
        scale = np.linalg.norm(b)
        if scale > 0:
            residual = np.linalg.norm(self.matrix @ x - b) / scale
            if not residual <= self.rtol:
                raise SolverError(f"linear solve residual {residual:.2e} exceeds {self.rtol:.0e}")
        return x.reshape(self.grid.shape)


@lru_cache(maxsize=64)
def _solver(grid: GridSpec, shift: float, diffusivity: float) -> ShiftedLaplacianSolver:
    return ShiftedLaplacianSolver(grid, shift, diffusivity)


def cfl_dt(
    u_or_z: Field, w_or_v: Field, p: ModelParams, ts: TimeSpec, v: Field | None = None
) -> float:
    """Admissible step for the explicit taxis and reaction terms.

    ``w_or_v`` drives the taxis; ``v`` (defaulting to ``w_or_v``) enters the kinetics.
    """
    speeds = max_face_velocity(w_or_v, p.chi)
    rate = sum(speed / h for speed, h in zip(speeds, w_or_v.grid.h, strict=True))
    dt_adv = ts.cfl_adv / rate if rate > 0 else math.inf
    stiffness = reaction_jacobian_bound(u_or_z, w_or_v if v is None else v, p)
    dt_reaction = ts.cfl_adv / stiffness if stiffness > 0 else math.inf
    return min(ts.dt_max, dt_adv, dt_reaction)


def _check_growth(name: str, values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise BlowupError(f"{name} became non-finite")
    peak = float(np.max(np.abs(values)))
    if peak > BLOWUP_THRESHOLD:
        raise BlowupError(f"{name} reached {peak:.3e}, above the blow-up threshold")


def step_imex(state: State, dt: float, p: ModelParams, source: Source | None = None) -> State:
    """Advance ``state`` by one IMEX step of size ``dt``."""
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")
    grid = state.grid
    u, v, w = state.u, state.v, state.w
    drift = v if w is None else w

    react_u, react_v = reaction_terms(u, v, p)
    taxis = taxis_divergence(u, drift, p.chi, p.taxis_sign)
    forcing = source(state.time) if source is not None else (0.0, 0.0, 0.0)

    u_new = _solver(grid, 1.0, dt * p.d_u).solve(
        u.values + dt * (taxis.values + react_u.values + forcing[0])
    )
    _check_growth("u", u_new)
    v_new = _solver(grid, 1.0, dt * p.d_v).solve(v.values + dt * (react_v.values + forcing[1]))
    _check_growth("v", v_new)

    w_field = None
    if w is not None:
        w_new = _solver(grid, 1.0 / dt + 1.0 / p.eps, 1.0).solve(
            w.values / dt + v_new / p.eps + forcing[2]
        )
        _check_growth("w", w_new)
        w_field = Field(grid, w_new)

    return State(Field(grid, u_new), Field(grid, v_new), w_field, state.time + dt)


def diagnose(
    state: State, step: int, dt: float, step_cfl: float, p: ModelParams
) -> StepDiagnostics:
    """Collect the monitored norms of ``state``."""
    u, v, w = state.u, state.v, state.w
    drift = v if w is None else w
    return StepDiagnostics(
        step=step,
        time=state.time,
        dt=dt,
        cfl_dt=step_cfl,
        max_velocity=max(max_face_velocity(drift, p.chi)),
        min_u=u.min(),
        max_u=u.max(),
        min_v=v.min(),
        max_v=v.max(),
        min_w=math.nan if w is None else w.min(),
        max_w=math.nan if w is None else w.max(),
        l1_u=integrate(abs_field(u)),
        l1_v=integrate(abs_field(v)),
        l1_w=math.nan if w is None else integrate(abs_field(w)),
        sq_u=integrate(u * u),
        sq_v=integrate(v * v),
        grad_sq_v=grad_sq_norm(v),
        grad_gap=math.nan if w is None else grad_sq_norm(w - v),
    )


def abs_field(f: Field) -> Field:
    return f.with_values(np.abs(f.values))


def solve(
    initial: InitialData,
    p: ModelParams,
    ts: TimeSpec,
    model: str = "indirect",
    *,
    source: Source | None = None,
    record_history: bool = False,
    log_every: int = 0,
) -> Trajectory:
    """Integrate one model from ``initial`` up to ``ts.t_end``.

    Args:
        initial: Initial fields; ``w0`` is ignored for the limit model
        p: Model parameters
        ts: Horizon, step control and snapshot policy
        model: "indirect" (three unknowns) or "limit" (two unknowns)
        source: Optional forcing added to the explicit part of each equation
        record_history: Keep the state of every step (needed for sup-in-time errors)
        log_every: Log progress at INFO every this many steps (0 disables)

    Returns:
        Trajectory whose last snapshot sits exactly at ``ts.t_end``
    """
    if model not in ("indirect", "limit"):
        raise DomainError(f"model must be 'indirect' or 'limit', got {model!r}")
    state = initial.indirect_state() if model == "indirect" else initial.limit_state()
    drift = lambda s: s.v if s.w is None else s.w  # noqa: E731

    initial_cfl = cfl_dt(state.u, drift(state), p, ts, v=state.v)
    snapshots = [state]
    diagnostics = [diagnose(state, 0, 0.0, initial_cfl, p)]
    history = [state] if record_history else None

    schedule = ts.fixed_schedule()
    next_snapshot = ts.snapshot_interval
    warned_cfl = False
    step = 0
    logger.debug(f"Starting {model} run to t={ts.t_end} on grid {initial.grid.describe()}")

    while state.time < ts.t_end:
        step_cfl = cfl_dt(state.u, drift(state), p, ts, v=state.v)
        if schedule is not None:
            t_next = float(schedule[step])
        else:
            remaining = ts.t_end - state.time
            t_next = ts.t_end if step_cfl >= remaining * (1 - 1e-12) else state.time + step_cfl
        dt = t_next - state.time
        if dt > step_cfl * (1 + 1e-12) and not warned_cfl:
            logger.warning(
                f"fixed step {dt:.3e} exceeds the CFL bound {step_cfl:.3e} at t={state.time:.4g}"
            )
            warned_cfl = True

        try:
            state = replace(step_imex(state, dt, p, source), time=t_next)
        except SimulationError as err:
            raise err.with_context(time=state.time) from err
        step += 1

        diagnostics.append(diagnose(state, step, dt, step_cfl, p))
        if history is not None:
            history.append(state)

        final = state.time >= ts.t_end
        if next_snapshot is not None:
            due = state.time >= next_snapshot * (1 - 1e-12)
            while next_snapshot is not None and state.time >= next_snapshot * (1 - 1e-12):
                next_snapshot += ts.snapshot_interval
        else:
            due = step % ts.snapshot_stride == 0
        if due or final:
            snapshots.append(state)

        if log_every and step % log_every == 0:
            logger.info(f"{model}: step {step}, t={state.time:.4f}, dt={dt:.3e}")

    logger.debug(f"Finished {model} run after {step} steps")
    return Trajectory(model, p, snapshots, diagnostics, history)
