"""Elliptic solve, projection, tendencies, and time stepping.

Oracles: a dense min-norm solve for the pressure Poisson problem,
high-order finite differences of continuum fluxes for the manufactured
smooth-field truncation tests, and self-convergence for the temporal order.
"""

import types

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import (dense_neumann_laplacian, fd_laplacian, fd_partial,
                      make_grid, mms_theta, mms_u, mms_v, random_fieldset,
                      smooth_initial_state, streamfunction_velocity)
from rbnudge.errors import (ConfigurationError, NumericalBlowupError,
                            SolverFailureError, UndefinedDiagnosticError)
from rbnudge.grid import (CENTER, XFACE, YFACE, FieldSet, ScalarField,
                          StaggeredGrid, divergence, divergence_arrays,
                          laplacian_neumann_center)
from rbnudge.solver import (PhysicalParams, PoissonSolver, TimeStepper,
                            advance, kinetic_energy, project, step, tendency,
                            turnover_time)

RNG = np.random.default_rng(42)


def zero_mean_rhs(grid, rng):
    r = rng.standard_normal(grid.shape(CENTER))
    return r - r.mean()


class TestPoissonSolver:
    @pytest.mark.parametrize("shape", [(6, 4), (8, 6), (9, 7), (16, 16)])
    def test_matches_dense_min_norm_solution(self, shape):
        g = make_grid(n_x=shape[0], n_y=shape[1], l_x=1.9)
        rhs = zero_mean_rhs(g, RNG)
        phi = PoissonSolver(g).solve(rhs)
        mat = dense_neumann_laplacian(g)
        want, *_ = np.linalg.lstsq(mat, rhs.ravel(), rcond=None)
        want = want.reshape(g.n_y, g.n_x)
        # min-norm solution is orthogonal to the constant null space
        assert abs(want.mean()) <= 1e-12 * np.abs(want).max()
        assert np.allclose(phi, want, rtol=0,
                           atol=1e-12 * max(1.0, np.abs(want).max()))

    def test_inverts_the_neumann_laplacian_exactly(self):
        g = make_grid(n_x=24, n_y=20, l_x=2.3)
        phi0 = zero_mean_rhs(g, RNG)
        rhs = laplacian_neumann_center(phi0, g.h_x, g.h_y)
        phi = PoissonSolver(g).solve(rhs)
        assert np.allclose(phi, phi0, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("shape", [(64, 64), (256, 256)])
    def test_residual_within_tolerance(self, shape):
        g = make_grid(n_x=shape[0], n_y=shape[1], l_x=2.0)
        solver = PoissonSolver(g)
        rhs = zero_mean_rhs(g, RNG)
        phi = solver.solve(rhs)
        assert solver.last_residual <= 1e-12
        assert abs(phi.mean()) <= 1e-13 * np.abs(phi).max()

    def test_rejects_bad_rhs(self):
        g = make_grid()
        solver = PoissonSolver(g)
        with pytest.raises(SolverFailureError):
            solver.solve(np.ones(g.shape(CENTER)))  # incompatible mean
        bad = np.zeros(g.shape(CENTER))
        bad[0, 0] = np.nan
        with pytest.raises(SolverFailureError):
            solver.solve(bad)
        with pytest.raises(ConfigurationError):
            solver.solve(np.zeros((3, 3)))


@settings(max_examples=20, deadline=None)
@given(n_x=st.integers(4, 20), n_y=st.integers(4, 20),
       seed=st.integers(0, 2 ** 31))
def test_property_poisson_residual_and_gauge(n_x, n_y, seed):
    g = StaggeredGrid(n_x=n_x, n_y=n_y, L_x=1.5)
    solver = PoissonSolver(g)
    rhs = zero_mean_rhs(g, np.random.default_rng(seed))
    phi = solver.solve(rhs)
    assert solver.last_residual <= 1e-12
    assert abs(phi.mean()) <= 1e-12 * max(1.0, np.abs(phi).max())


class TestProjection:
    def test_recovers_exact_helmholtz_decomposition(self):
        g = make_grid(n_x=18, n_y=14, l_x=2.0)
        solver = PoissonSolver(g)
        u_df, v_df = streamfunction_velocity(g, RNG)
        phi0 = zero_mean_rhs(g, RNG)
        dt = 0.37
        u = u_df + dt * (phi0 - np.roll(phi0, 1, axis=1)) / g.h_x
        v = v_df.copy()
        v[1:-1, :] += dt * (phi0[1:, :] - phi0[:-1, :]) / g.h_y
        fs = FieldSet.from_arrays(g, u, v, np.zeros(g.shape(CENTER)),
                                  np.zeros(g.shape(CENTER)))
        out = project(fs, dt, solver)
        scale = max(1.0, np.abs(u_df).max(), np.abs(v_df).max())
        assert np.allclose(out.u.values, u_df, rtol=0, atol=1e-10 * scale)
        assert np.allclose(out.v.values, v_df, rtol=0, atol=1e-10 * scale)
        assert np.allclose(out.pressure.values, phi0, rtol=0, atol=1e-10)

    @pytest.mark.parametrize("n", [64, 256])
    def test_divergence_after_projection(self, n):
        g = make_grid(n_x=n, n_y=n, l_x=2.0)
        solver = PoissonSolver(g)
        fs = random_fieldset(g, np.random.default_rng(n), divfree=False)
        out = project(fs, 1e-3, solver)
        div = np.abs(divergence(out).values).max()
        assert div <= 1e-10

    def test_projection_is_idempotent(self):
        g = make_grid(n_x=20, n_y=16, l_x=1.0)
        solver = PoissonSolver(g)
        fs = random_fieldset(g, RNG, divfree=False)
        once = project(fs, 0.01, solver)
        twice = project(once, 0.01, solver)
        assert np.allclose(once.u.values, twice.u.values, atol=1e-12)
        assert np.allclose(once.v.values, twice.v.values, atol=1e-12)

    def test_wall_normal_velocity_untouched(self):
        g = make_grid()
        solver = PoissonSolver(g)
        fs = random_fieldset(g, RNG, divfree=False)
        out = project(fs, 0.1, solver)
        assert np.array_equal(out.v.values[0], fs.v.values[0])
        assert np.array_equal(out.v.values[-1], fs.v.values[-1])

    def test_validates_inputs(self):
        g = make_grid()
        solver = PoissonSolver(g)
        fs = FieldSet.zeros(g)
        with pytest.raises(ConfigurationError):
            project(fs, 0.0, solver)
        with pytest.raises(ConfigurationError):
            project(fs, 0.1, PoissonSolver(make_grid(n_x=10)))


def staggered_samples(grid, func):
    """Evaluate func(x, y) on all three staggered point sets."""
    out = {}
    for loc in (XFACE, YFACE, CENTER):
        x = grid.x_coords(loc)
        y = grid.y_coords(loc)
        out[loc] = func(x[None, :], y[:, None])
    return out


def continuum_tendencies(grid, params, lx):
    """Continuum right-hand sides via high-order finite differences."""
    def u(x, y):
        return mms_u(x, y, lx)

    def v(x, y):
        return mms_v(x, y, lx)

    def th(x, y):
        return mms_theta(x, y, lx)

    def uu(x, y):
        return u(x, y) ** 2

    def uv(x, y):
        return u(x, y) * v(x, y)

    def vv(x, y):
        return v(x, y) ** 2

    def uth(x, y):
        return u(x, y) * th(x, y)

    def vth(x, y):
        return v(x, y) * th(x, y)

    xu = grid.x_coords(XFACE)[None, :]
    yu = grid.y_coords(XFACE)[:, None]
    xv = grid.x_coords(YFACE)[None, :]
    yv = grid.y_coords(YFACE)[:, None]
    xc = grid.x_coords(CENTER)[None, :]
    yc = grid.y_coords(CENTER)[:, None]

    du = (-fd_partial(uu, xu, yu, axis=0) - fd_partial(uv, xu, yu, axis=1)
          + params.nu * fd_laplacian(u, xu, yu))
    dv = (-fd_partial(uv, xv, yv, axis=0) - fd_partial(vv, xv, yv, axis=1)
          + params.nu * fd_laplacian(v, xv, yv)
          + params.pr * th(xv, yv))
    dth = (-fd_partial(uth, xc, yc, axis=0) - fd_partial(vth, xc, yc, axis=1)
           + params.kappa * fd_laplacian(th, xc, yc)
           + v(xc, yc))
    return du, dv, dth


class TestTendency:
    def test_spatial_truncation_is_second_order(self):
        lx = 2.0
        params = PhysicalParams(ra=100.0, pr=0.7)
        errs = []
        for n in (24, 48, 96):
            g = make_grid(n_x=n, n_y=n, l_x=lx)
            u = staggered_samples(g, lambda x, y: mms_u(x, y, lx))[XFACE]
            v = staggered_samples(g, lambda x, y: mms_v(x, y, lx))[YFACE]
            th = staggered_samples(g, lambda x, y: mms_theta(x, y, lx))[CENTER]
            fs = FieldSet.from_arrays(g, u, v, th, np.zeros_like(th))
            got = tendency(fs, params)
            want_u, want_v, want_th = continuum_tendencies(g, params, lx)
            err = max(np.abs(got.du - want_u).max(),
                      np.abs(got.dv[1:-1] - want_v[1:-1]).max(),
                      np.abs(got.dtheta - want_th).max())
            errs.append(err)
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
        for order in orders:
            assert 1.7 <= order <= 2.3, orders

    def test_wall_rows_of_v_tendency_are_zero(self):
        g = make_grid(n_x=12, n_y=10, l_x=2.0)
        fs = random_fieldset(g, RNG, divfree=False)
        t = tendency(fs, PhysicalParams(ra=1e4, pr=1.0))
        assert np.all(t.dv[0] == 0) and np.all(t.dv[-1] == 0)

    def test_forcing_participates_additively(self):
        g = make_grid()
        fs = random_fieldset(g, RNG)
        params = PhysicalParams(ra=1e4, pr=1.0)
        base = tendency(fs, params)
        f = types.SimpleNamespace(
            active=True,
            du=np.full(g.shape(XFACE), 0.25),
            dv=np.zeros(g.shape(YFACE)),
            dtheta=np.full(g.shape(CENTER), -1.5))
        forced = tendency(fs, params, f)
        assert np.allclose(forced.du - base.du, 0.25, atol=1e-14)
        assert np.allclose(forced.dtheta - base.dtheta, -1.5, atol=1e-14)
        inactive = types.SimpleNamespace(active=False, du=f.du, dv=f.dv,
                                         dtheta=f.dtheta)
        same = tendency(fs, params, inactive)
        assert np.array_equal(same.du, base.du)

    def test_non_finite_state_raises_blowup(self):
        g = make_grid()
        fs = random_fieldset(g, RNG)
        bad = fs.theta.values.copy()
        bad[2, 2] = np.inf
        fs_bad = FieldSet(u=fs.u, v=fs.v,
                          theta=fs.theta.with_values(bad),
                          pressure=fs.pressure)
        with pytest.raises(NumericalBlowupError):
            tendency(fs_bad, PhysicalParams(ra=1e4, pr=1.0))


class TestTimeStepping:
    def test_temporal_self_convergence_is_third_order(self):
        lx = 2.0
        g = make_grid(n_x=32, n_y=32, l_x=lx)
        params = PhysicalParams(ra=1e6, pr=1.0)
        horizon = 0.064
        finals = {}
        for n_steps in (16, 32, 64, 128):
            stepper = TimeStepper(dt=horizon / n_steps)
            fs = advance(smooth_initial_state(g, lx), stepper, params,
                         n_steps)
            finals[n_steps] = fs
        errs = []
        for n_steps in (16, 32, 64):
            a, b = finals[n_steps], finals[2 * n_steps]
            errs.append(max(np.abs(a.u.values - b.u.values).max(),
                            np.abs(a.v.values - b.v.values).max(),
                            np.abs(a.theta.values - b.theta.values).max()))
        slopes = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
        for slope in slopes:
            assert 2.7 <= slope <= 3.3, slopes

    def test_constant_forcing_integrates_exactly(self):
        # With physics switched off by tiny diffusivities, a constant
        # temperature forcing must integrate to theta = c * t through the
        # startup ramp and the multistep weights alike.
        g = make_grid(n_x=8, n_y=8, l_x=1.0)
        params = PhysicalParams(ra=1e30, pr=1e-12)
        c = 0.7
        f = types.SimpleNamespace(active=True,
                                  du=np.zeros(g.shape(XFACE)),
                                  dv=np.zeros(g.shape(YFACE)),
                                  dtheta=np.full(g.shape(CENTER), c))
        stepper = TimeStepper(dt=1e-3)
        fs = FieldSet.zeros(g)
        for _ in range(5):
            fs = step(fs, stepper, params, forcing=f)
        assert np.allclose(fs.theta.values, c * 5e-3, rtol=1e-10)
        assert np.abs(fs.u.values).max() <= 1e-10

    def test_startup_history_depth(self):
        g = make_grid()
        params = PhysicalParams(ra=1e5, pr=1.0)
        stepper = TimeStepper(dt=1e-4)
        fs = random_fieldset(g, RNG, divfree=True, amplitude=0.1)
        assert len(stepper.history) == 0
        fs = step(fs, stepper, params)
        assert len(stepper.history) == 1 and stepper.step_index == 1
        fs = step(fs, stepper, params)
        assert len(stepper.history) == 2 and stepper.step_index == 2
        fs = step(fs, stepper, params)
        assert len(stepper.history) == 2 and stepper.step_index == 3
        stepper.reset()
        assert len(stepper.history) == 0 and stepper.step_index == 0

    def test_step_keeps_state_divergence_free(self):
        g = make_grid(n_x=24, n_y=24, l_x=2.0)
        params = PhysicalParams(ra=1e5, pr=1.0)
        stepper = TimeStepper(dt=1e-3)
        fs = random_fieldset(g, RNG, divfree=True, amplitude=0.2)
        for _ in range(4):
            fs = step(fs, stepper, params)
            assert np.abs(divergence(fs).values).max() <= 1e-10
        assert fs.time == pytest.approx(4e-3)

    def test_courant_violation_raises_blowup_with_index(self):
        g = make_grid(n_x=8, n_y=8, l_x=1.0)
        params = PhysicalParams(ra=1e6, pr=1.0)
        stepper = TimeStepper(dt=0.05)
        u = np.full(g.shape(XFACE), 50.0)
        v = np.zeros(g.shape(YFACE))
        th = np.zeros(g.shape(CENTER))
        fs = FieldSet.from_arrays(g, u, v, th, th.copy())
        with pytest.raises(NumericalBlowupError) as excinfo:
            step(fs, stepper, params)
        assert excinfo.value.step_index == 0

    def test_advance_runs_hooks_and_forcing_provider(self):
        g = make_grid()
        params = PhysicalParams(ra=1e5, pr=1.0)
        stepper = TimeStepper(dt=1e-4)
        fs = random_fieldset(g, RNG, divfree=True, amplitude=0.1)
        seen = []
        asked = []

        def provider(idx, state):
            asked.append(idx)
            return None

        advance(fs, stepper, params, 3, forcing_provider=provider,
                hooks=[lambda k, s: seen.append((k, s.time))])
        assert [k for k, _ in seen] == [1, 2, 3]
        # the startup corrector re-consults the provider at step 0
        assert asked == [0, 0, 1, 2]


class TestDiagnostics:
    def test_turnover_time(self):
        g = make_grid()
        fs = FieldSet.zeros(g)
        u = fs.u.values.copy()
        u[3, 2] = -2.0
        fs2 = FieldSet(u=fs.u.with_values(u), v=fs.v, theta=fs.theta,
                       pressure=fs.pressure)
        assert turnover_time(fs2) == pytest.approx(1.0)
        with pytest.raises(UndefinedDiagnosticError):
            turnover_time(FieldSet.zeros(g))

    def test_kinetic_energy_hand_value(self):
        g = make_grid(n_x=6, n_y=4, l_x=3.0)
        fs = FieldSet.zeros(g)
        u = np.ones(g.shape(XFACE))
        fs2 = FieldSet(u=fs.u.with_values(u), v=fs.v, theta=fs.theta,
                       pressure=fs.pressure)
        # 0.5 * sum(u^2) * cell area = 0.5 * 24 * (0.5 * 0.25)
        assert kinetic_energy(fs2) == pytest.approx(0.5 * 24 * 0.125)
