"""Parameter records, scaling, initial data and right-hand sides of both taxis models.

Two models are supported:

* ``competition``: Lotka-Volterra competition where ``u`` avoids the chemical ``w``
  secreted by its competitor ``v`` (repulsive taxis, sign +1).
* ``predprey``: predator ``z`` attracted by the chemical ``w`` secreted by its prey
  ``v`` (attractive taxis, sign -1), with a Holling functional response.

Each model comes in the relaxed form with three unknowns (``w`` relaxes towards
``v`` on the time scale ``eps``) and in the fast-reaction limit form with two
unknowns, where the taxis follows ``grad v`` directly.
"""

import math
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np
from scipy.optimize import brentq

from errors import ConfigError, DomainError
from mesh_fields import Field, GridSpec, State
from operators import FunctionalResponse, laplacian_neumann, reaction_terms, taxis_divergence


def _require_eps(eps: float) -> None:
    if not (0.0 < eps <= 1.0):
        raise ConfigError(f"eps must lie in (0,1], got {eps}")


def _require_positive(record, names: tuple[str, ...]) -> None:
    for name in names:
        value = getattr(record, name)
        if not (math.isfinite(value) and value > 0):
            raise ConfigError(f"{name} must be a positive number, got {value}")


@dataclass(frozen=True)
class DimensionalParams:
    """Dimensional coefficients of the competition system with a secreted chemical."""

    D_u: float  # diffusivities
    D_v: float
    D_w: float
    alpha1: float  # growth, self-limitation and competition rates of U
    alpha2: float
    alpha3: float
    beta1: float  # the same for V
    beta2: float
    beta3: float
    chi0: float  # taxis sensitivity
    alpha: float  # chemical decay rate
    lam: float  # chemical secretion rate
    L: float  # length scale
    tau: float  # time scale
    W_star: float  # reference chemical density

    def __post_init__(self):
        _require_positive(self, tuple(f.name for f in fields(self)))


@dataclass(frozen=True)
class CompetitionParams:
    """Nondimensional competition model."""

    d_u: float = 1.0
    d_v: float = 1.0
    chi: float = 1.0
    mu1: float = 1.0
    mu2: float = 1.0
    a1: float = 0.5
    a2: float = 0.5
    eps: float = 0.01

    model: ClassVar[str] = "competition"
    taxis_sign: ClassVar[int] = 1
    species: ClassVar[tuple[str, str, str]] = ("u", "v", "w")

    def __post_init__(self):
        _require_positive(self, ("d_u", "d_v", "mu1", "mu2", "a1", "a2"))
        if not (math.isfinite(self.chi) and self.chi >= 0):
            raise ConfigError(f"chi must be nonnegative, got {self.chi}")
        _require_eps(self.eps)


@dataclass(frozen=True)
class PredPreyParams:
    """Nondimensional predator-prey model with prey taxis."""

    d_z: float = 1.0
    d_v: float = 1.0
    chi: float = 1.0
    mu1: float = -0.2  # any sign: net growth (or death) rate of the predator
    mu1_prime: float = 0.5
    mu2: float = 1.0
    b: float = 1.0
    response: FunctionalResponse = field(default_factory=FunctionalResponse)
    eps: float = 0.01

    model: ClassVar[str] = "predprey"
    taxis_sign: ClassVar[int] = -1
    species: ClassVar[tuple[str, str, str]] = ("z", "v", "w")

    def __post_init__(self):
        _require_positive(self, ("d_z", "d_v", "mu1_prime", "mu2", "b"))
        if not math.isfinite(self.mu1):
            raise ConfigError(f"mu1 must be a real number, got {self.mu1}")
        if not (math.isfinite(self.chi) and self.chi >= 0):
            raise ConfigError(f"chi must be nonnegative, got {self.chi}")
        _require_eps(self.eps)

    @property
    def d_u(self) -> float:
        """Diffusivity of the first unknown (the predator)."""
        return self.d_z


ModelParams = CompetitionParams | PredPreyParams


@dataclass(frozen=True)
class NondimensionalGroups:
    """Groups produced by ``nondimensionalize`` besides the competition parameters."""

    alpha_tilde: float
    lambda_tilde: float
    d_w: float
    eps: float


def nondimensionalize(
    d: DimensionalParams, epsilon_form: bool = True
) -> tuple[CompetitionParams, NondimensionalGroups]:
    """Scale the dimensional competition system.

    With ``epsilon_form`` the chemical equation is reduced to the relaxation form,
    which requires equal decay and secretion rates; ``eps = D_w / (alpha L^2)``.
    Without it the groups are returned for the record and the model uses ``eps = 1``.

    Raises:
        ConfigError: if ``alpha != lam`` in epsilon form or eps falls outside (0,1].
    """
    scale = d.tau / d.L**2
    groups = NondimensionalGroups(
        alpha_tilde=d.alpha * d.tau,
        lambda_tilde=d.lam * d.tau,
        d_w=d.D_w * scale,
        eps=d.D_w / (d.alpha * d.L**2) if epsilon_form else 1.0,
    )
    if epsilon_form:
        if not math.isclose(d.alpha, d.lam, rel_tol=1e-12):
            raise ConfigError(
                f"the relaxation form needs alpha == lambda (got {d.alpha} and {d.lam})"
            )
        _require_eps(groups.eps)
    params = CompetitionParams(
        d_u=d.D_u * scale,
        d_v=d.D_v * scale,
        chi=d.chi0 * d.W_star * scale,
        mu1=d.alpha1 * d.tau,
        mu2=d.beta1 * d.tau,
        a1=d.alpha3 * d.beta1 / (d.beta2 * d.alpha1),
        a2=d.beta3 * d.alpha1 / (d.alpha2 * d.beta1),
        eps=groups.eps,
    )
    return params, groups


def competition_equilibria(p: CompetitionParams) -> list[tuple[float, float]]:
    """Constant steady states ``(u, v)``: extinction, both semitrivial, and coexistence."""
    states = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    det = 1.0 - p.a1 * p.a2
    if det != 0:
        u_star = (1.0 - p.a1) / det
        v_star = (1.0 - p.a2) / det
        if u_star > 0 and v_star > 0:
            states.append((u_star, v_star))
    return states


def predprey_equilibria(p: PredPreyParams) -> list[tuple[float, float]]:
    """Constant steady states ``(z, v)``; the coexistence state is found by root bracketing."""
    states = [(0.0, 0.0), (0.0, 1.0)]
    if p.mu1 > 0:
        states.append((p.mu1 / p.mu1_prime, 0.0))

    def predator_level(v: float) -> float:
        return (p.mu1 + p.b * p.response(v)) / p.mu1_prime

    def prey_balance(v: float) -> float:
        # prey nullcline divided by v
        return p.mu2 * (1.0 - v) - p.response(v) / v * predator_level(v)

    low, high = 1e-9, 1.0
    if prey_balance(low) > 0 > prey_balance(high):
        v_star = brentq(prey_balance, low, high, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        z_star = predator_level(v_star)
        if z_star > 0:
            states.append((z_star, v_star))
    return states


def coexistence_equilibrium(p: ModelParams) -> tuple[float, float]:
    """Constant steady state with both species positive.

    Raises:
        ConfigError: if the kinetics have no such state.
    """
    states = competition_equilibria(p) if p.model == "competition" else predprey_equilibria(p)
    for first, second in states:
        if first > 0 and second > 0:
            return first, second
    raise ConfigError(f"the {p.model} kinetics have no coexistence equilibrium")


@dataclass(frozen=True)
class ConstantFamily:
    value: float = 0.5

    name: ClassVar[str] = "constant"


@dataclass(frozen=True)
class GaussianBump:
    """``floor + amplitude * exp(-|x - center|^2 / (2 width^2))`` for both species."""

    center: tuple[float, ...] = (0.5,)
    width: float = 0.1
    amplitude: float = 1.0
    floor: float = 0.0

    name: ClassVar[str] = "gaussian_bump"


@dataclass(frozen=True)
class CosinePerturbedEquilibrium:
    """Coexistence state plus ``amplitude * prod cos(mode pi x_k / L_k)``, clamped at zero."""

    amplitude: float = 0.1
    mode: int = 1

    name: ClassVar[str] = "cosine_perturbed_equilibrium"


InitialFamily = ConstantFamily | GaussianBump | CosinePerturbedEquilibrium


@dataclass(frozen=True)
class InitialData:
    """Initial fields; ``u0`` holds the predator for the predator-prey model."""

    u0: Field
    v0: Field
    w0: Field
    compatibility: bool = True

    def __post_init__(self):
        for name in ("u0", "v0", "w0"):
            f = getattr(self, name)
            if f.grid != self.u0.grid:
                raise ConfigError("initial fields must share one grid")
            if f.min() < 0:
                raise ConfigError(f"initial field {name} is negative (min {f.min():.3e})")
        if self.compatibility and not np.array_equal(self.w0.values, self.v0.values):
            raise ConfigError("compatible initial data requires w0 == v0")

    @property
    def grid(self) -> GridSpec:
        return self.u0.grid

    def indirect_state(self) -> State:
        return State(self.u0, self.v0, self.w0, 0.0)

    def limit_state(self) -> State:
        return State(self.u0, self.v0, None, 0.0)


def _gaussian_profile(family: GaussianBump, grid: GridSpec) -> Field:
    if not family.width > 0:
        raise ConfigError(f"gaussian width must be positive, got {family.width}")
    if family.floor < 0 or family.floor + family.amplitude < 0:
        raise ConfigError(
            f"gaussian bump with floor {family.floor} and amplitude {family.amplitude} "
            "is negative somewhere"
        )
    center = family.center * grid.dim if len(family.center) == 1 else family.center
    if len(center) != grid.dim:
        raise ConfigError(f"gaussian center needs {grid.dim} coordinates, got {len(center)}")

    def profile(*coords):
        r2 = sum((x - c) ** 2 for x, c in zip(coords, center, strict=True))
        return family.floor + family.amplitude * np.exp(-r2 / (2.0 * family.width**2))

    return Field.from_function(grid, profile)


def _cosine_fields(
    family: CosinePerturbedEquilibrium, grid: GridSpec, params: ModelParams | None
) -> tuple[Field, Field]:
    if params is None:
        raise ConfigError("the cosine family needs model parameters to locate the equilibrium")
    if family.mode < 0 or int(family.mode) != family.mode:
        raise ConfigError(f"cosine mode must be a nonnegative integer, got {family.mode}")
    first, second = coexistence_equilibrium(params)

    def shape(*coords):
        out = np.ones_like(coords[0])
        for x, extent in zip(coords, grid.length, strict=True):
            out = out * np.cos(family.mode * np.pi * x / extent)
        return out

    bump = Field.from_function(grid, shape)
    u0 = np.maximum(first + family.amplitude * bump.values, 0.0)
    v0 = np.maximum(second + family.amplitude * bump.values, 0.0)
    return Field(grid, u0), Field(grid, v0)


def build_initial_data(
    family: InitialFamily,
    grid: GridSpec,
    compatibility: bool = True,
    params: ModelParams | None = None,
    w_init: float = 0.0,
) -> InitialData:
    """Sample an initial-data family on ``grid``.

    With ``compatibility`` the chemical starts equal to ``v0``; otherwise it starts
    at the constant ``w_init``.
    """
    if isinstance(family, ConstantFamily):
        if family.value < 0:
            raise ConfigError(f"constant initial value must be nonnegative, got {family.value}")
        u0 = v0 = Field.constant(grid, family.value)
    elif isinstance(family, GaussianBump):
        u0 = v0 = _gaussian_profile(family, grid)
    elif isinstance(family, CosinePerturbedEquilibrium):
        u0, v0 = _cosine_fields(family, grid, params)
    else:
        raise ConfigError(f"unknown initial-data family {family!r}")

    if compatibility:
        w0 = v0
    else:
        if w_init < 0:
            raise ConfigError(f"w_init must be nonnegative, got {w_init}")
        w0 = Field.constant(grid, w_init)
    return InitialData(u0, v0, w0, compatibility)


def rhs_indirect(state: State, p: ModelParams) -> tuple[Field, Field, Field]:
    """Time derivatives of the relaxed model; the w component is already divided by eps."""
    if state.kind != "triple":
        raise DomainError("rhs_indirect needs a (u, v, w) state")
    u, v, w = state.u, state.v, state.w
    react_u, react_v = reaction_terms(u, v, p)
    du = p.d_u * laplacian_neumann(u) + taxis_divergence(u, w, p.chi, p.taxis_sign) + react_u
    dv = p.d_v * laplacian_neumann(v) + react_v
    dw = laplacian_neumann(w) + (v - w) / p.eps
    return du, dv, dw


def rhs_limit(state: State, p: ModelParams) -> tuple[Field, Field]:
    """Time derivatives of the limit model, where the taxis follows ``grad v``."""
    if state.kind != "dual":
        raise DomainError("rhs_limit needs a (u, v) state")
    u, v = state.u, state.v
    react_u, react_v = reaction_terms(u, v, p)
    du = p.d_u * laplacian_neumann(u) + taxis_divergence(u, v, p.chi, p.taxis_sign) + react_u
    dv = p.d_v * laplacian_neumann(v) + react_v
    return du, dv
