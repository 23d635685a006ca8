"""Spatial operators on cell-centred fields.

* ``laplacian_neumann``: 3-point / 5-point Laplacian with mirrored ghost cells.
* ``taxis_divergence``: conservative face-flux discretisation of
  ``sign * chi * div(u grad w)`` with first-order upwinding of the density.
* Reaction kinetics of the competition and predator-prey models and the Holling
  functional responses used by the latter.

Every divergence is assembled from face fluxes with zero flux on boundary faces, so
the discrete integral of each operator output vanishes up to round-off.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from errors import ConfigError, DomainError
from mesh_fields import Field, GridSpec

if TYPE_CHECKING:
    from models import CompetitionParams, ModelParams, PredPreyParams

POSITIVITY_TOL = 1e-12
RESPONSE_KINDS = ("holling1", "holling2", "holling3")


def _divergence(flux: np.ndarray, array_axis: int, h: float) -> np.ndarray:
    """Difference interior face fluxes after padding zero-flux boundary faces."""
    pad = [(0, 0)] * flux.ndim
    pad[array_axis] = (1, 1)
    return np.diff(np.pad(flux, pad), axis=array_axis) / h


def _check_same_grid(*fields: Field) -> GridSpec:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise DomainError("operator inputs live on different grids")
    return grid


def laplacian_neumann(f: Field) -> Field:
    """Discrete Laplacian under homogeneous Neumann conditions."""
    grid = f.grid
    out = np.zeros(grid.shape)
    for axis in range(grid.dim):
        array_axis = grid.array_axis(axis)
        h = grid.h[axis]
        flux = np.diff(f.values, axis=array_axis) / h
        out += _divergence(flux, array_axis, h)
    return Field(grid, out)


def _laplacian_matrix_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


@lru_cache(maxsize=32)
def laplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Sparse matrix of ``laplacian_neumann`` acting on row-major flattened fields."""
    if grid.dim == 1:
        return _laplacian_matrix_1d(grid.n[0], grid.h[0])
    nx, ny = grid.n
    lx = _laplacian_matrix_1d(nx, grid.h[0])
    ly = _laplacian_matrix_1d(ny, grid.h[1])
    # x varies fastest in the flat index i + nx * j
    return (sp.kron(sp.identity(ny), lx) + sp.kron(ly, sp.identity(nx))).tocsr()


def face_velocities(w: Field, chi: float, sign: int) -> list[np.ndarray]:
    """Interior face velocities ``sign * chi * (w[i+1] - w[i]) / h`` per grid axis."""
    grid = w.grid
    return [
        sign * chi * np.diff(w.values, axis=grid.array_axis(axis)) / grid.h[axis]
        for axis in range(grid.dim)
    ]


def max_face_velocity(w: Field, chi: float) -> tuple[float, ...]:
    """Largest face velocity magnitude along each axis."""
    return tuple(
        float(np.max(np.abs(v))) if v.size else 0.0 for v in face_velocities(w, chi, 1)
    )


def taxis_divergence(
    u: Field, w: Field, chi: float, sign: int, positivity_tol: float = POSITIVITY_TOL
) -> Field:
    """Upwind discretisation of ``sign * chi * div(u grad w)``.

    The term moves mass with velocity ``-V`` where ``V`` is the face velocity, so
    mass crosses face ``i+1/2`` from cell ``i`` to ``i+1`` iff ``V < 0``; the face
    density is taken from the cell the mass leaves. Empty cells therefore never
    lose mass.

    Raises:
        DomainError: if ``u`` has entries below ``-positivity_tol``.
    """
    grid = _check_same_grid(u, w)
    if sign not in (1, -1):
        raise DomainError(f"taxis sign must be +1 or -1, got {sign}")
    lowest = u.min()
    if lowest < -positivity_tol:
        raise DomainError(f"taxis density is negative (min {lowest:.3e})")

    out = np.zeros(grid.shape)
    for axis, velocity in enumerate(face_velocities(w, chi, sign)):
        array_axis = grid.array_axis(axis)
        n = u.values.shape[array_axis]
        left = np.take(u.values, np.arange(n - 1), axis=array_axis)
        right = np.take(u.values, np.arange(1, n), axis=array_axis)
        density = np.where(velocity < 0, left, right)
        flux = velocity * density
        out += _divergence(flux, array_axis, grid.h[axis])
    return Field(grid, out)


@dataclass(frozen=True)
class FunctionalResponse:
    """Holling functional response F(v) of the predator-prey model."""

    kind: str = "holling2"
    c: float = 1.0  # consumption scale
    m: float = 1.0  # half-saturation parameter, unused for holling1

    def __post_init__(self):
        if self.kind not in RESPONSE_KINDS:
            raise ConfigError(
                f"functional response must be one of {RESPONSE_KINDS}, got {self.kind}"
            )
        if not self.c > 0:
            raise ConfigError(f"functional response scale c must be positive, got {self.c}")
        if not self.m >= 0:
            raise ConfigError(f"half-saturation m must be nonnegative, got {self.m}")
        if self.kind == "holling3" and self.m == 0:
            # c v^2 is not bounded by C_F v
            raise ConfigError("holling3 requires m > 0")

    def __call__(self, v):
        if self.kind == "holling1":
            return self.c * v
        if self.kind == "holling2":
            return self.c * v / (1.0 + self.m * v)
        return self.c * v * v / (1.0 + self.m * v * v)

    def derivative(self, v):
        if self.kind == "holling1":
            return self.c * np.ones_like(v) if isinstance(v, np.ndarray) else self.c
        if self.kind == "holling2":
            return self.c / (1.0 + self.m * v) ** 2
        return 2.0 * self.c * v / (1.0 + self.m * v * v) ** 2

    @property
    def consumption_bound(self) -> float:
        """C_F with F(v) <= C_F v on v >= 0."""
        if self.kind == "holling3":
            return self.c / (2.0 * math.sqrt(self.m))
        return self.c

    @property
    def lipschitz(self) -> float:
        """Declared Lipschitz constant L of F on [0, inf)."""
        if self.kind == "holling3":
            return self.c * (3.0 * math.sqrt(3.0) / 8.0) / math.sqrt(self.m)
        return self.c


def eval_functional_response(response: FunctionalResponse, v: float) -> float:
    """Evaluate F at a nonnegative prey density."""
    if v < 0:
        raise DomainError(f"functional response is defined for v >= 0, got {v}")
    return float(response(v))


def reaction_competition(u: Field, v: Field, p: "CompetitionParams") -> tuple[Field, Field]:
    """Lotka-Volterra competition kinetics ``(mu1 u (1-u-a1 v), mu2 v (1-v-a2 u))``."""
    grid = _check_same_grid(u, v)
    uu, vv = u.values, v.values
    du = p.mu1 * uu * (1.0 - uu - p.a1 * vv)
    dv = p.mu2 * vv * (1.0 - vv - p.a2 * uu)
    return Field(grid, du), Field(grid, dv)


def reaction_predprey(z: Field, v: Field, p: "PredPreyParams") -> tuple[Field, Field]:
    """Predator-prey kinetics ``(mu1 z - mu1' z^2 + b F(v) z, mu2 v (1-v) - F(v) z)``."""
    grid = _check_same_grid(z, v)
    zz, vv = z.values, v.values
    consumed = p.response(vv)
    dz = p.mu1 * zz - p.mu1_prime * zz * zz + p.b * consumed * zz
    dv = p.mu2 * vv * (1.0 - vv) - consumed * zz
    return Field(grid, dz), Field(grid, dv)


def reaction_terms(u: Field, v: Field, p: "ModelParams") -> tuple[Field, Field]:
    """Kinetics of whichever model ``p`` describes."""
    if p.model == "competition":
        return reaction_competition(u, v, p)
    return reaction_predprey(u, v, p)


def reaction_jacobian_bound(u: Field, v: Field, p: "ModelParams") -> float:
    """Pointwise maximum of the row-sum norm of the kinetic Jacobian."""
    uu, vv = u.values, v.values
    if p.model == "competition":
        j11 = p.mu1 * (1.0 - 2.0 * uu - p.a1 * vv)
        j12 = -p.mu1 * p.a1 * uu
        j21 = -p.mu2 * p.a2 * vv
        j22 = p.mu2 * (1.0 - 2.0 * vv - p.a2 * uu)
    else:
        consumed = p.response(vv)
        slope = p.response.derivative(vv)
        j11 = p.mu1 - 2.0 * p.mu1_prime * uu + p.b * consumed
        j12 = p.b * slope * uu
        j21 = -consumed
        j22 = p.mu2 * (1.0 - 2.0 * vv) - slope * uu
    rows = np.maximum(np.abs(j11) + np.abs(j12), np.abs(j21) + np.abs(j22))
    return float(np.max(rows))
