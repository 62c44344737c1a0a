"""Staggered-grid layout, field containers, and spatial operators.

All discrete fields live on a marker-and-cell (MAC) arrangement over the
channel [0, L_x] x [0, L_y], periodic in x and wall-bounded in y.  Arrays are
row-major with shape (rows, cols) = (y index, x index), x fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError

# Location tags for staggered scalar fields.
CENTER = "cell-center"
XFACE = "x-face"
YFACE = "y-face"

_LOCATIONS = (CENTER, XFACE, YFACE)


@dataclass(frozen=True)
class StaggeredGrid:
    """Uniform MAC grid for a horizontally periodic channel.

    Cell (j, i) occupies [i*hx, (i+1)*hx] x [j*hy, (j+1)*hy].  Scalar sample
    points by location tag:

      cell-center: ((i + 1/2)*hx, (j + 1/2)*hy), shape (n_y, n_x)
      x-face:      (i*hx,         (j + 1/2)*hy), shape (n_y, n_x)
      y-face:      ((i + 1/2)*hx, j*hy),         shape (n_y + 1, n_x)

    x-faces wrap periodically (face 0 is also face n_x); y-faces include both
    walls, rows 0 and n_y.  The horizontal velocity u lives on x-faces, the
    vertical velocity v on y-faces, temperature and pressure at centers.
    """

    n_x: int
    n_y: int
    L_x: float
    L_y: float = 1.0

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ConfigurationError(
                f"grid must be at least 2x2, got {self.n_x}x{self.n_y}")
        if not (self.L_x > 0 and self.L_y > 0):
            raise ConfigurationError("domain lengths must be positive")

    @property
    def h_x(self) -> float:
        return self.L_x / self.n_x

    @property
    def h_y(self) -> float:
        return self.L_y / self.n_y

    @property
    def cell_area(self) -> float:
        return self.h_x * self.h_y

    def shape(self, location: str) -> tuple[int, int]:
        if location == YFACE:
            return (self.n_y + 1, self.n_x)
        if location in (CENTER, XFACE):
            return (self.n_y, self.n_x)
        raise ConfigurationError(f"unknown location tag {location!r}")

    def x_coords(self, location: str) -> np.ndarray:
        """x coordinates of sample points, shape (n_x,)."""
        i = np.arange(self.n_x)
        if location == XFACE:
            return i * self.h_x
        return (i + 0.5) * self.h_x

    def y_coords(self, location: str) -> np.ndarray:
        """y coordinates of sample points, shape (rows,)."""
        if location == YFACE:
            return np.arange(self.n_y + 1) * self.h_y
        return (np.arange(self.n_y) + 0.5) * self.h_y


@dataclass(frozen=True)
class ScalarField:
    """A single scalar sampled at one staggered location."""

    grid: StaggeredGrid
    location: str
    values: np.ndarray

    def __post_init__(self):
        if self.location not in _LOCATIONS:
            raise ConfigurationError(f"unknown location tag {self.location!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values is not self.values:
            object.__setattr__(self, "values", values)
        expect = self.grid.shape(self.location)
        if values.shape != expect:
            raise ConfigurationError(
                f"{self.location} field needs shape {expect}, "
                f"got {values.shape}")

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return replace(self, values=values)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


@dataclass(frozen=True)
class FieldSet:
    """Full prognostic state: velocities, temperature deviation, pressure.

    The temperature variable is the deviation from the linear conductive
    profile, so homogeneous Dirichlet walls apply to it as well.
    """

    u: ScalarField
    v: ScalarField
    theta: ScalarField
    pressure: ScalarField
    time: float = 0.0

    def __post_init__(self):
        pairs = ((self.u, XFACE), (self.v, YFACE),
                 (self.theta, CENTER), (self.pressure, CENTER))
        for field, want in pairs:
            if field.location != want:
                raise ConfigurationError(
                    f"field tagged {field.location!r} where {want!r} expected")
            if field.grid != self.u.grid:
                raise ConfigurationError("all fields must share one grid")

    @property
    def grid(self) -> StaggeredGrid:
        return self.u.grid

    @classmethod
    def from_arrays(cls, grid: StaggeredGrid, u: np.ndarray, v: np.ndarray,
                    theta: np.ndarray, pressure: np.ndarray,
                    time: float = 0.0) -> "FieldSet":
        return cls(u=ScalarField(grid, XFACE, u),
                   v=ScalarField(grid, YFACE, v),
                   theta=ScalarField(grid, CENTER, theta),
                   pressure=ScalarField(grid, CENTER, pressure),
                   time=time)

    @classmethod
    def zeros(cls, grid: StaggeredGrid, time: float = 0.0) -> "FieldSet":
        return cls.from_arrays(grid,
                               np.zeros(grid.shape(XFACE)),
                               np.zeros(grid.shape(YFACE)),
                               np.zeros(grid.shape(CENTER)),
                               np.zeros(grid.shape(CENTER)),
                               time=time)

    def all_finite(self) -> bool:
        return (self.u.all_finite() and self.v.all_finite()
                and self.theta.all_finite() and self.pressure.all_finite())


# ---------------------------------------------------------------------------
# Array-level stencils.  These operate on raw arrays so the time stepper can
# avoid container overhead in its inner loop; the public field-level wrappers
# below validate tags and grids.
# ---------------------------------------------------------------------------

def divergence_arrays(u: np.ndarray, v: np.ndarray,
                      h_x: float, h_y: float) -> np.ndarray:
    """Discrete divergence at cell centers from face-normal velocities."""
    du = (np.roll(u, -1, axis=1) - u) / h_x
    dv = (v[1:, :] - v[:-1, :]) / h_y
    return du + dv


def laplacian_dirichlet_center(a: np.ndarray, h_x: float,
                               h_y: float) -> np.ndarray:
    """Five-point Laplacian at centers, zero walls via ghost = -interior."""
    out = np.empty_like(a)
    out[1:-1, :] = a[:-2, :] - 2.0 * a[1:-1, :] + a[2:, :]
    out[0, :] = a[1, :] - 3.0 * a[0, :]
    out[-1, :] = a[-2, :] - 3.0 * a[-1, :]
    out /= h_y * h_y
    out += (np.roll(a, -1, axis=1) - 2.0 * a + np.roll(a, 1, axis=1)) \
        / (h_x * h_x)
    return out


# x-face rows sit at the same heights as centers and u is no-slip at the
# walls, so the same ghost reflection applies.
laplacian_dirichlet_xface = laplacian_dirichlet_center


def laplacian_yface_interior(v: np.ndarray, h_x: float,
                             h_y: float) -> np.ndarray:
    """Laplacian at y-faces; wall rows (which hold pinned values) are zero."""
    out = np.zeros_like(v)
    out[1:-1, :] = (v[:-2, :] - 2.0 * v[1:-1, :] + v[2:, :]) / (h_y * h_y)
    out[1:-1, :] += (np.roll(v[1:-1, :], -1, axis=1) - 2.0 * v[1:-1, :]
                     + np.roll(v[1:-1, :], 1, axis=1)) / (h_x * h_x)
    return out


def laplacian_neumann_center(a: np.ndarray, h_x: float,
                             h_y: float) -> np.ndarray:
    """Five-point Laplacian at centers with zero-flux walls (ghost = interior).

    This is the operator inverted by the pressure solve.
    """
    out = np.empty_like(a)
    out[1:-1, :] = a[:-2, :] - 2.0 * a[1:-1, :] + a[2:, :]
    out[0, :] = a[1, :] - a[0, :]
    out[-1, :] = a[-2, :] - a[-1, :]
    out /= h_y * h_y
    out += (np.roll(a, -1, axis=1) - 2.0 * a + np.roll(a, 1, axis=1)) \
        / (h_x * h_x)
    return out


def _corner_products(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """u*v interpolated to cell corners, shape (n_y + 1, n_x).

    Corner (j, i) sits at (i*h_x, j*h_y).  Wall rows are exactly zero:
    v vanishes there and the no-slip average of u across the wall is zero.
    """
    n_y = u.shape[0]
    ub = np.zeros((n_y + 1, u.shape[1]))
    ub[1:-1, :] = 0.5 * (u[:-1, :] + u[1:, :])
    vb = 0.5 * (np.roll(v, 1, axis=1) + v)
    return ub * vb


def advect_u_arrays(u: np.ndarray, v: np.ndarray,
                    h_x: float, h_y: float) -> np.ndarray:
    """Conservative advection tendency -d(uu)/dx - d(vu)/dy on x-faces."""
    uc = 0.5 * (u + np.roll(u, -1, axis=1))
    flux_uu = uc * uc
    ddx = (flux_uu - np.roll(flux_uu, 1, axis=1)) / h_x
    flux_vu = _corner_products(u, v)
    ddy = (flux_vu[1:, :] - flux_vu[:-1, :]) / h_y
    return -(ddx + ddy)


def advect_v_arrays(u: np.ndarray, v: np.ndarray,
                    h_x: float, h_y: float) -> np.ndarray:
    """Conservative advection tendency -d(uv)/dx - d(vv)/dy on y-faces.

    Wall rows are returned as zero; the wall-normal velocity is pinned.
    """
    flux_uv = _corner_products(u, v)
    out = np.zeros_like(v)
    out[1:-1, :] = (flux_uv[1:-1, :] - np.roll(flux_uv[1:-1, :], -1, axis=1)) \
        / h_x
    vc = 0.5 * (v[:-1, :] + v[1:, :])
    flux_vv = vc * vc
    out[1:-1, :] += (flux_vv[:-1, :] - flux_vv[1:, :]) / h_y
    return out


def advect_scalar_arrays(u: np.ndarray, v: np.ndarray, s: np.ndarray,
                         h_x: float, h_y: float) -> np.ndarray:
    """Conservative advection tendency -d(us)/dx - d(vs)/dy at centers.

    The wall-normal flux vanishes because v is zero on the walls, so the
    domain integral of s is advected conservatively.
    """
    sx = 0.5 * (np.roll(s, 1, axis=1) + s)
    flux_us = u * sx
    ddx = (np.roll(flux_us, -1, axis=1) - flux_us) / h_x
    flux_vs = np.zeros_like(v)
    flux_vs[1:-1, :] = v[1:-1, :] * 0.5 * (s[:-1, :] + s[1:, :])
    ddy = (flux_vs[1:, :] - flux_vs[:-1, :]) / h_y
    return -(ddx + ddy)


def interpolate_v_to_centers(v: np.ndarray) -> np.ndarray:
    return 0.5 * (v[:-1, :] + v[1:, :])


def interpolate_theta_to_yfaces(theta: np.ndarray) -> np.ndarray:
    """Temperature averaged onto y-faces; wall rows zero (Dirichlet walls)."""
    out = np.zeros((theta.shape[0] + 1, theta.shape[1]))
    out[1:-1, :] = 0.5 * (theta[:-1, :] + theta[1:, :])
    return out


def enforce_wall_arrays(v: np.ndarray) -> np.ndarray:
    out = v.copy()
    out[0, :] = 0.0
    out[-1, :] = 0.0
    return out


# ---------------------------------------------------------------------------
# Field-level wrappers.
# ---------------------------------------------------------------------------

def _check_same_grid(a: ScalarField, b: ScalarField):
    if a.grid != b.grid:
        raise ConfigurationError("fields live on different grids")


def divergence(fs: FieldSet) -> ScalarField:
    """Cell-centered divergence of the staggered velocity field."""
    g = fs.grid
    vals = divergence_arrays(fs.u.values, fs.v.values, g.h_x, g.h_y)
    return ScalarField(g, CENTER, vals)


def diffuse(s: ScalarField, coefficient: float) -> ScalarField:
    """Diffusive tendency coefficient * Laplacian(s) at s's own location.

    Walls are homogeneous Dirichlet for center and x-face fields (ghost rows
    mirror the interior with flipped sign); y-face wall rows stay zero.
    """
    g = s.grid
    if s.location == CENTER:
        lap = laplacian_dirichlet_center(s.values, g.h_x, g.h_y)
    elif s.location == XFACE:
        lap = laplacian_dirichlet_xface(s.values, g.h_x, g.h_y)
    else:
        lap = laplacian_yface_interior(s.values, g.h_x, g.h_y)
    return ScalarField(g, s.location, coefficient * lap)


def advect_scalar(fs: FieldSet, s: ScalarField) -> ScalarField:
    """Conservative advection of a cell-centered scalar by fs's velocity."""
    _check_same_grid(fs.u, s)
    if s.location != CENTER:
        raise ConfigurationError("advect_scalar expects a cell-centered field")
    g = fs.grid
    vals = advect_scalar_arrays(fs.u.values, fs.v.values, s.values,
                                g.h_x, g.h_y)
    return ScalarField(g, CENTER, vals)


def apply_boundary_conditions(fs: FieldSet) -> FieldSet:
    """Re-impose wall conditions representable in stored values.

    Only the wall-normal velocity rows are stored directly on the walls; the
    no-slip and zero-temperature conditions enter through ghost reflection
    inside the stencils.
    """
    v_new = fs.v.with_values(enforce_wall_arrays(fs.v.values))
    return replace(fs, v=v_new)


def integral(s: ScalarField) -> float:
    """Domain integral of a field, cell-area weighted."""
    return float(s.values.sum() * s.grid.cell_area)
