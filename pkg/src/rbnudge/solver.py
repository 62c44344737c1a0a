"""Boussinesq solver: tendencies, pressure projection, and time stepping.

Equations advanced (non-dimensional, temperature measured as the deviation
from the conductive profile):

    du/dt + d(uu)/dx + d(vu)/dy = -dp/dx + nu * lap(u)
    dv/dt + d(uv)/dx + d(vv)/dy = -dp/dy + nu * lap(v) + pr * theta
    dtheta/dt + d(u theta)/dx + d(v theta)/dy = kappa * lap(theta) + v

with nu = pr / sqrt(ra) and kappa = 1 / sqrt(ra).  Advection and diffusion
are second-order central differences in flux form on the staggered grid;
incompressibility is enforced by a fractional-step projection whose elliptic
solve is diagonalized exactly by a Fourier transform in x and a half-sample
cosine transform in y.

Time stepping is explicit third-order Adams-Bashforth.  Because the discrete
projection P is linear and idempotent and every accepted state satisfies
P w = w, combining the stored tendencies first and projecting once is
identical to multistepping the projected system dw/dt = P F(w); there is no
splitting error.  Startup uses a projected Heun step (step 0) and
Adams-Bashforth 2 (step 1), which keeps the global error third order; a
first-order Euler start would cap the observable order at two.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.fft

from .errors import (ConfigurationError, NumericalBlowupError,
                     SolverFailureError, UndefinedDiagnosticError)
from .grid import (FieldSet, StaggeredGrid,
                   advect_scalar_arrays, advect_u_arrays, advect_v_arrays,
                   divergence_arrays, enforce_wall_arrays,
                   interpolate_theta_to_yfaces, interpolate_v_to_centers,
                   laplacian_dirichlet_center, laplacian_dirichlet_xface,
                   laplacian_neumann_center, laplacian_yface_interior)

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhysicalParams:
    """Rayleigh and Prandtl numbers plus the derived diffusivities."""

    ra: float
    pr: float

    def __post_init__(self):
        if not (self.ra > 0 and self.pr > 0):
            raise ConfigurationError("ra and pr must be positive")

    @property
    def nu(self) -> float:
        """Momentum diffusivity pr / sqrt(ra)."""
        return self.pr / np.sqrt(self.ra)

    @property
    def kappa(self) -> float:
        """Thermal diffusivity 1 / sqrt(ra)."""
        return 1.0 / np.sqrt(self.ra)


class Tendency(NamedTuple):
    """Right-hand-side arrays for the three prognostic fields."""

    du: np.ndarray
    dv: np.ndarray
    dtheta: np.ndarray


# Forcing objects are duck-typed (the assimilation layer defines its own
# container); a forcing only needs the attributes active, du, dv, dtheta.


class PoissonSolver:
    """Fast direct solver for lap(phi) = rhs at cell centers.

    Boundary closure matches the projection: periodic in x, zero normal
    derivative at the walls (ghost = interior).  Periodicity diagonalizes the
    x direction by a real FFT; the Neumann closure is diagonalized exactly by
    the type-II discrete cosine transform, whose basis vectors
    cos(pi m (j + 1/2) / n_y) satisfy the ghost condition identically.  The
    null space (constants) is fixed by the zero-mean gauge.
    """

    def __init__(self, grid: StaggeredGrid, tolerance: float = 1e-12):
        self.grid = grid
        self.tolerance = tolerance
        n_x, n_y = grid.n_x, grid.n_y
        k = np.arange(n_x // 2 + 1)
        m = np.arange(n_y)
        # Eigenvalues of the 1-D second-difference operators.
        lam_x = -(2.0 - 2.0 * np.cos(2.0 * np.pi * k / n_x)) / grid.h_x ** 2
        lam_y = -(2.0 - 2.0 * np.cos(np.pi * m / n_y)) / grid.h_y ** 2
        denom = lam_y[:, None] + lam_x[None, :]
        denom[0, 0] = 1.0  # constant mode, handled by the gauge
        self._denom = denom
        self.last_residual: float | None = None

    def solve(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        """Return the zero-mean solution of lap(phi) = rhs.

        rhs must be finite with zero mean (up to roundoff); the Neumann
        problem is otherwise unsolvable.
        """
        g = self.grid
        if rhs.shape != (g.n_y, g.n_x):
            raise ConfigurationError(
                f"rhs shape {rhs.shape} does not match grid "
                f"({g.n_y}, {g.n_x})")
        if not np.isfinite(rhs).all():
            raise SolverFailureError("non-finite right-hand side")
        scale = np.abs(rhs).max()
        if check and scale > 0 and abs(rhs.mean()) > 1e-8 * scale:
            raise SolverFailureError(
                f"right-hand side mean {rhs.mean():.3e} is incompatible "
                "with zero-flux walls")
        rhat = scipy.fft.rfft(scipy.fft.dct(rhs, type=2, axis=0), axis=1)
        rhat /= self._denom
        rhat[0, 0] = 0.0
        phi = scipy.fft.idct(scipy.fft.irfft(rhat, n=g.n_x, axis=1),
                             type=2, axis=0)
        phi -= phi.mean()
        if check:
            res = self.residual(phi, rhs)
            self.last_residual = res
            if res > self.tolerance:
                raise SolverFailureError(
                    f"elliptic residual {res:.3e} above tolerance "
                    f"{self.tolerance:.1e}", residual=res)
        return phi

    def residual(self, phi: np.ndarray, rhs: np.ndarray) -> float:
        """Relative max-norm residual |lap(phi) - rhs| / |rhs|."""
        g = self.grid
        lap = laplacian_neumann_center(phi, g.h_x, g.h_y)
        scale = np.abs(rhs).max()
        if scale == 0.0:
            scale = 1.0
        return float(np.abs(lap - rhs).max() / scale)


def _project_arrays(u, v, dt, solver: PoissonSolver):
    """Remove the divergent part of (u, v); returns (u, v, phi)."""
    g = solver.grid
    div = divergence_arrays(u, v, g.h_x, g.h_y)
    phi = solver.solve(div / dt, check=False)
    u_new = u - dt * (phi - np.roll(phi, 1, axis=1)) / g.h_x
    v_new = v.copy()
    v_new[1:-1, :] -= dt * (phi[1:, :] - phi[:-1, :]) / g.h_y
    div_after = divergence_arrays(u_new, v_new, g.h_x, g.h_y)
    worst = float(np.abs(div_after).max())
    limit = 1e-10 * max(1.0, float(np.abs(u).max()), float(np.abs(v).max()))
    if not worst <= limit:
        raise SolverFailureError(
            f"post-projection divergence {worst:.3e} above {limit:.1e}",
            residual=worst)
    return u_new, v_new, phi


def project(fs: FieldSet, dt: float, solver: PoissonSolver) -> FieldSet:
    """Project velocity onto the discretely divergence-free space.

    The correction u -= dt * grad(phi) with lap(phi) = div/dt leaves
    wall-normal velocities untouched (Neumann walls) and stores phi as the
    new pressure field.
    """
    if not dt > 0:
        raise ConfigurationError("projection needs a positive dt")
    if fs.grid != solver.grid:
        raise ConfigurationError("solver was built for a different grid")
    u, v, phi = _project_arrays(fs.u.values, fs.v.values, dt, solver)
    return replace(fs,
                   u=fs.u.with_values(u),
                   v=fs.v.with_values(v),
                   pressure=fs.pressure.with_values(phi))


def tendency(fs: FieldSet, params: PhysicalParams,
             forcing=None) -> Tendency:
    """Evaluate all explicit right-hand sides (everything except pressure).

    Wall rows of the v tendency are pinned to zero.  An optional forcing
    object contributes additively; its v component is also wall-pinned.
    """
    u = fs.u.values
    v = fs.v.values
    th = fs.theta.values
    if not (np.isfinite(u).all() and np.isfinite(v).all()
            and np.isfinite(th).all()):
        raise NumericalBlowupError("non-finite state passed to tendency")
    g = fs.grid
    h_x, h_y = g.h_x, g.h_y
    nu, kappa = params.nu, params.kappa

    du = advect_u_arrays(u, v, h_x, h_y)
    du += nu * laplacian_dirichlet_xface(u, h_x, h_y)

    dv = advect_v_arrays(u, v, h_x, h_y)
    dv += nu * laplacian_yface_interior(v, h_x, h_y)
    dv += params.pr * interpolate_theta_to_yfaces(th)

    dth = advect_scalar_arrays(u, v, th, h_x, h_y)
    dth += kappa * laplacian_dirichlet_center(th, h_x, h_y)
    dth += interpolate_v_to_centers(v)

    if forcing is not None and getattr(forcing, "active", False):
        du += forcing.du
        dv += forcing.dv
        dth += forcing.dtheta
        dv[0, :] = 0.0
        dv[-1, :] = 0.0
    return Tendency(du, dv, dth)


@dataclass
class TimeStepper:
    """Adams-Bashforth 3 state: step size, history, and stability guard.

    The tendency history holds up to two previous evaluations (newest
    first); together with the fresh tendency that is enough for the
    third-order weights (23, -16, 5)/12.  Assimilation forcing participates
    in the stored tendencies exactly like the physical terms, so a run
    forced every step and a run forced in bursts share one code path.
    """

    dt: float
    cfl_limit: float = 0.8
    step_index: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not 0 < self.cfl_limit:
            raise ConfigurationError("cfl_limit must be positive")

    def reset(self):
        self.step_index = 0
        self.history.clear()

    def push(self, t: Tendency):
        self.history.insert(0, t)
        del self.history[2:]


def _resolve_forcing(forcing, fs: FieldSet):
    if callable(forcing):
        return forcing(fs)
    return forcing


def _project_or_blowup(u, v, dt, solver, step_index):
    """Projection that reports non-finite inputs as integration blowup."""
    try:
        return _project_arrays(u, v, dt, solver)
    except SolverFailureError:
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise NumericalBlowupError(
                f"non-finite velocity entering projection at step "
                f"{step_index}", step_index=step_index) from None
        raise


def step(fs: FieldSet, stepper: TimeStepper, params: PhysicalParams,
         forcing=None) -> FieldSet:
    """Advance one step; returns the new projected state at time + dt.

    forcing may be None, a static forcing object, or a callable
    fs -> forcing evaluated at whatever state the scheme needs (the Heun
    corrector on step 0 re-evaluates it at the provisional state).
    """
    dt = stepper.dt
    g = fs.grid
    if not hasattr(stepper, "_solver") or stepper._solver.grid != g:
        stepper._solver = PoissonSolver(g)
    solver = stepper._solver

    try:
        f_now = _resolve_forcing(forcing, fs)
        t_now = tendency(fs, params, f_now)
    except NumericalBlowupError as err:
        if err.step_index is None:
            raise NumericalBlowupError(str(err),
                                       step_index=stepper.step_index) from None
        raise

    depth = len(stepper.history)
    if depth == 0:
        # Projected Heun start: Euler predictor, trapezoidal corrector.
        up = fs.u.values + dt * t_now.du
        vp = enforce_wall_arrays(fs.v.values + dt * t_now.dv)
        thp = fs.theta.values + dt * t_now.dtheta
        up, vp, phip = _project_or_blowup(up, vp, dt, solver,
                                          stepper.step_index)
        fs_prov = FieldSet.from_arrays(g, up, vp, thp, phip,
                                       time=fs.time + dt)
        f_prov = _resolve_forcing(forcing, fs_prov)
        t_prov = tendency(fs_prov, params, f_prov)
        inc_u = 0.5 * (t_now.du + t_prov.du)
        inc_v = 0.5 * (t_now.dv + t_prov.dv)
        inc_th = 0.5 * (t_now.dtheta + t_prov.dtheta)
    elif depth == 1:
        t1 = stepper.history[0]
        inc_u = 1.5 * t_now.du - 0.5 * t1.du
        inc_v = 1.5 * t_now.dv - 0.5 * t1.dv
        inc_th = 1.5 * t_now.dtheta - 0.5 * t1.dtheta
    else:
        t1, t2 = stepper.history[0], stepper.history[1]
        c0, c1, c2 = 23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0
        inc_u = c0 * t_now.du + c1 * t1.du + c2 * t2.du
        inc_v = c0 * t_now.dv + c1 * t1.dv + c2 * t2.dv
        inc_th = c0 * t_now.dtheta + c1 * t1.dtheta + c2 * t2.dtheta

    u_new = fs.u.values + dt * inc_u
    v_new = enforce_wall_arrays(fs.v.values + dt * inc_v)
    th_new = fs.theta.values + dt * inc_th
    u_new, v_new, phi = _project_or_blowup(u_new, v_new, dt, solver,
                                           stepper.step_index)

    umax = float(np.abs(u_new).max())
    vmax = float(np.abs(v_new).max())
    courant = dt * (umax / g.h_x + vmax / g.h_y)
    healthy = (np.isfinite(courant)
               and np.isfinite(th_new).all() and courant <= stepper.cfl_limit)
    if not healthy:
        raise NumericalBlowupError(
            f"unstable state at step {stepper.step_index}: Courant number "
            f"{courant:.3g} (limit {stepper.cfl_limit}; healthy runs sit "
            "near 0.15) or non-finite fields",
            step_index=stepper.step_index)

    stepper.push(t_now)
    stepper.step_index += 1
    return FieldSet.from_arrays(g, u_new, v_new, th_new, phi,
                                time=fs.time + dt)


def advance(fs: FieldSet, stepper: TimeStepper, params: PhysicalParams,
            n_steps: int, forcing_provider=None,
            hooks: Sequence[Callable[[int, FieldSet], None]] = (),
            log_every: int = 0, logger=None) -> FieldSet:
    """Run n_steps of the scheme, threading forcing and per-step hooks.

    forcing_provider(step_index, fs) -> forcing or None is consulted before
    each step; hooks fire after each step with (completed_steps, new_state).
    """
    for n in range(n_steps):
        if forcing_provider is not None:
            idx = stepper.step_index
            fs = step(fs, stepper, params,
                      forcing=lambda state: forcing_provider(idx, state))
        else:
            fs = step(fs, stepper, params)
        done = stepper.step_index
        for hook in hooks:
            hook(done, fs)
        if log_every and done % log_every == 0:
            logger = logger or _log
            g = fs.grid
            cou = stepper.dt * (np.abs(fs.u.values).max() / g.h_x
                                + np.abs(fs.v.values).max() / g.h_y)
            wd = np.abs(divergence_arrays(fs.u.values, fs.v.values,
                                          g.h_x, g.h_y)).max()
            logger.info("step %d t=%.4f courant=%.3f ke=%.6e maxdiv=%.2e",
                        done, fs.time, cou, kinetic_energy(fs), wd)
    return fs


def kinetic_energy(fs: FieldSet) -> float:
    """Cell-area weighted kinetic energy of the staggered velocity."""
    g = fs.grid
    return 0.5 * g.cell_area * float((fs.u.values ** 2).sum()
                                     + (fs.v.values ** 2).sum())


def turnover_time(fs: FieldSet) -> float:
    """Large-eddy turnover estimate 2 L_y / max |velocity component|."""
    umax = max(float(np.abs(fs.u.values).max()),
               float(np.abs(fs.v.values).max()))
    if not (np.isfinite(umax) and umax > 0):
        raise UndefinedDiagnosticError(
            "turnover time undefined for zero or non-finite velocity")
    return 2.0 * fs.grid.L_y / umax
