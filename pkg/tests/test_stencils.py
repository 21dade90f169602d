"""Stencil checks: exactness classes, linearity, convergence order, masking."""

import numpy as np
import numpy.testing as npt

from pinpred import geometry as geo
from pinpred import stencils as st

GRID = geo.GridSpec(16, 16)
CFG = st.StencilConfig(dx=1.0)


def cell_coords(h, w, dx):
    ys = (np.arange(h) + 0.5) * dx
    xs = (np.arange(w) + 0.5) * dx
    return np.meshgrid(ys, xs, indexing="ij")


def interior(a, margin=1):
    return a[margin:-margin, margin:-margin]


class TestGradient:
    def test_constant_field(self):
        g = st.gradient(geo.ScalarField(np.full(GRID.shape, 4.2), GRID), CFG)
        npt.assert_array_equal(g.u_x, 0)
        npt.assert_array_equal(g.u_y, 0)

    def test_linear_exact_interior(self):
        yy, xx = cell_coords(16, 16, 1.0)
        g = st.gradient(geo.ScalarField(3.0 * xx, GRID), CFG)
        npt.assert_allclose(interior(g.u_x), 3.0, rtol=1e-14)
        npt.assert_allclose(interior(g.u_y), 0.0, atol=1e-14)

    def test_quadratic_exact_interior(self):
        yy, xx = cell_coords(16, 16, 0.5)
        cfg = st.StencilConfig(dx=0.5)
        g = st.gradient(geo.ScalarField(xx**2, GRID), cfg)
        npt.assert_allclose(interior(g.u_x), interior(2.0 * xx), rtol=1e-13)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        f = rng.standard_normal(GRID.shape)
        g = rng.standard_normal(GRID.shape)
        a, b = 1.7, -0.3
        lhs = st.gradient(geo.ScalarField(a * f + b * g, GRID), CFG)
        fx = st.gradient(geo.ScalarField(f, GRID), CFG)
        gx = st.gradient(geo.ScalarField(g, GRID), CFG)
        npt.assert_allclose(lhs.u_x, a * fx.u_x + b * gx.u_x, rtol=1e-12, atol=1e-13)
        npt.assert_allclose(lhs.u_y, a * fx.u_y + b * gx.u_y, rtol=1e-12, atol=1e-13)


class TestLaplacian:
    def test_constant_field(self):
        lap = st.laplacian(geo.ScalarField(np.ones(GRID.shape), GRID), CFG)
        npt.assert_array_equal(lap.values, 0)

    def test_quadratic_exact_interior(self):
        yy, xx = cell_coords(16, 16, 0.25)
        cfg = st.StencilConfig(dx=0.25)
        lap = st.laplacian(geo.ScalarField(xx**2 + yy**2, GRID), cfg)
        npt.assert_allclose(interior(lap.values), 4.0, rtol=1e-11)

    def test_halving_h_quarters_error(self):
        errs = []
        for w in (32, 64):
            dx = 1.0 / w
            grid = geo.GridSpec(w, w, dx=dx)
            yy, xx = cell_coords(w, w, dx)
            f = np.sin(2 * np.pi * xx)
            truth = -((2 * np.pi) ** 2) * f
            lap = st.laplacian(geo.ScalarField(f, grid), st.StencilConfig(dx=dx))
            errs.append(np.abs(interior(lap.values, 2) - interior(truth, 2)).max())
        ratio = errs[0] / errs[1]
        assert 3.3 <= ratio <= 4.8


class TestConvergenceOrder:
    def measured_order(self, op, truth_fn):
        errs = []
        for w in (32, 64, 128):
            dx = 1.0 / w
            grid = geo.GridSpec(w, w, dx=dx)
            yy, xx = cell_coords(w, w, dx)
            f = np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy)
            got = op(geo.ScalarField(f, grid), st.StencilConfig(dx=dx))
            err = np.abs(interior(got, 2) - interior(truth_fn(xx, yy), 2)).max()
            errs.append(err)
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
        return np.mean(orders)

    def test_gradient_second_order(self):
        order = self.measured_order(
            lambda f, cfg: st.gradient(f, cfg).u_x,
            lambda xx, yy: 2 * np.pi * np.cos(2 * np.pi * xx) * np.cos(2 * np.pi * yy),
        )
        assert 1.8 <= order <= 2.2

    def test_laplacian_second_order(self):
        order = self.measured_order(
            lambda f, cfg: st.laplacian(f, cfg).values,
            lambda xx, yy: -2 * (2 * np.pi) ** 2 * np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy),
        )
        assert 1.8 <= order <= 2.2


class TestDivergenceAndAdvection:
    def test_rotational_field_divergence_free(self):
        yy, xx = cell_coords(16, 16, 1.0)
        u = geo.VectorField2(-yy, xx, GRID)
        div = st.divergence(u, CFG)
        npt.assert_allclose(interior(div.values), 0.0, atol=1e-13)

    def test_identity_field_divergence(self):
        yy, xx = cell_coords(16, 16, 1.0)
        div = st.divergence(geo.VectorField2(xx, yy, GRID), CFG)
        npt.assert_allclose(interior(div.values), 2.0, rtol=1e-14)

    def test_advection_dot_product(self):
        yy, xx = cell_coords(16, 16, 1.0)
        u = geo.VectorField2(np.full(GRID.shape, 2.0), np.full(GRID.shape, -1.0), GRID)
        c = geo.ScalarField(xx + 3 * yy, GRID)
        adv = st.advection_term(u, c, CFG)
        npt.assert_allclose(interior(adv.values), -1.0, rtol=1e-14)

    def test_zero_velocity(self):
        rng = np.random.default_rng(9)
        c = geo.ScalarField(rng.standard_normal(GRID.shape), GRID)
        u = geo.VectorField2(np.zeros(GRID.shape), np.zeros(GRID.shape), GRID)
        npt.assert_array_equal(st.advection_term(u, c, CFG).values, 0)


class TestApplyMask:
    def test_idempotent_and_zeroing(self):
        rng = np.random.default_rng(13)
        grid = geo.GridSpec(12, 12)
        solid = geo.empty_domain(12, 12).solid.copy()
        solid[5, 5] = True
        m = geo.ObstacleMap(solid)
        sdf = geo.compute_sdf(m, grid)
        mask = geo.boundary_mask(sdf, geo.MASK1_RADIUS)
        f = geo.ScalarField(rng.standard_normal(grid.shape) + 5.0, grid)
        once = st.apply_mask(f, mask)
        twice = st.apply_mask(once, mask)
        npt.assert_array_equal(once.values, twice.values)
        assert (once.values[mask.excluded] == 0).all()
        npt.assert_array_equal(once.values[~mask.excluded], f.values[~mask.excluded])
        # excluded count agrees with direct enumeration of the sdf rule
        assert mask.excluded.sum() == (sdf.values <= 2.5).sum()
