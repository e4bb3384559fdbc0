"""Tests for the Darcy solver, transport scheme, and random-field expansion."""

import numpy as np
import pytest

from amfmcmc.groundwater import (
    GridField,
    SourceSpec,
    bilinear_sample,
    coarsen_field,
    darcy_flow,
    kl_field,
    transport,
)

GRID = GridField(40, 20, 20.0, 10.0)


def uniform_flow(grid=GRID, k=8.0):
    return darcy_flow(np.full((grid.nx, grid.ny), k), grid)


class TestGrid:
    def test_geometry(self):
        assert GRID.dx == 0.5 and GRID.dy == 0.5
        x, y = GRID.cell_centers()
        assert x[0] == 0.25 and x[-1] == 19.75
        assert y[0] == 0.25 and y[-1] == 9.75
        assert GRID.center_points().shape == (800, 2)

    def test_validation(self):
        with pytest.raises(ValueError):
            GridField(1, 5, 10.0, 5.0)
        with pytest.raises(ValueError):
            GridField(4, 2, -1.0, 5.0)


class TestDarcy:
    def test_uniform_k_linear_head(self):
        res = uniform_flow()
        x, _ = GRID.cell_centers()
        exact = 12.0 - x[:, None] / 20.0
        assert np.abs(res.head - exact).max() < 1e-10

    def test_uniform_k_velocity(self):
        res = uniform_flow()
        assert np.abs(res.vx - 1.6).max() < 1e-9
        assert np.abs(res.vy).max() < 1e-9

    def test_heterogeneous_flux_conservation(self):
        rng = np.random.default_rng(3)
        k = np.exp(rng.normal(2.0, 0.7, size=(GRID.nx, GRID.ny)))
        res = darcy_flow(k, GRID)
        div = (res.qx[1:, :] - res.qx[:-1, :]) * GRID.dy \
            + (res.qy[:, 1:] - res.qy[:, :-1]) * GRID.dx
        mean_flux = np.abs(res.qx).mean() * GRID.dy
        assert np.abs(div).max() < 1e-9 * mean_flux

    def test_boundary_faces(self):
        res = uniform_flow()
        # no-flow top and bottom
        assert np.all(res.qy[:, 0] == 0.0)
        assert np.all(res.qy[:, -1] == 0.0)
        # inflow equals outflow in steady state
        assert res.qx[0, :].sum() == pytest.approx(res.qx[-1, :].sum(), rel=1e-9)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            darcy_flow(np.full((5, 5), 8.0), GRID)
        bad = np.full((GRID.nx, GRID.ny), 8.0)
        bad[3, 3] = -1.0
        with pytest.raises(ValueError):
            darcy_flow(bad, GRID)


class TestTransport:
    TIMES = (6.0, 8.0, 10.0, 12.0, 14.0)

    def test_zero_source_stays_zero(self):
        res = uniform_flow()
        src = SourceSpec(4.0, 5.0, ((4.0, 9.0, 0.0),))
        tr = transport(GRID, res.qx, res.qy, src, self.TIMES)
        for f in tr.fields:
            assert np.all(f == 0.0)

    def test_mass_balance(self):
        res = uniform_flow()
        src = SourceSpec(3.854, 5.999, ((4.897, 9.075, 11.044),))
        tr = transport(GRID, res.qx, res.qy, src, self.TIMES)
        balance = tr.injected - tr.outflow - tr.in_domain + tr.clamp_added
        rel = np.abs(balance) / tr.injected
        assert np.all(rel < 0.005)   # the stated contract
        assert np.all(rel < 1e-9)    # the scheme is exactly conservative

    def test_injected_mass_schedule(self):
        res = uniform_flow()
        src = SourceSpec(4.0, 5.0, ((1.0, 2.0, 3.0), (5.0, 5.25, 8.0)))
        tr = transport(GRID, res.qx, res.qy, src, (0.5, 1.5, 4.0, 6.0))
        np.testing.assert_allclose(tr.injected, [0.0, 1.5, 3.0, 5.0], atol=1e-12)

    def test_source_position_off_center_conserves_mass(self):
        res = uniform_flow()
        src = SourceSpec(3.87, 5.23, ((2.0, 4.0, 7.0),))  # between cell centers
        tr = transport(GRID, res.qx, res.qy, src, (5.0,))
        assert tr.injected[0] == pytest.approx(14.0, rel=1e-12)
        assert tr.in_domain[0] + tr.outflow[0] - tr.clamp_added \
            == pytest.approx(14.0, rel=1e-9)

    def test_plume_eventually_leaves_domain(self):
        res = uniform_flow()
        src = SourceSpec(4.0, 5.0, ((1.0, 3.0, 10.0),))
        tr = transport(GRID, res.qx, res.qy, src, (40.0,))
        assert tr.outflow[-1] > 0.95 * tr.injected[-1]
        assert tr.in_domain[-1] < 0.05 * tr.injected[-1]

    def test_concentrations_nonnegative(self):
        rng = np.random.default_rng(9)
        k = np.exp(rng.normal(2.0, 0.6, size=(GRID.nx, GRID.ny)))
        res = darcy_flow(k, GRID)
        src = SourceSpec(3.5, 6.5, ((1.0, 5.0, 9.0),))
        tr = transport(GRID, res.qx, res.qy, src, (4.0, 8.0, 12.0))
        for f in tr.fields:
            assert f.min() >= 0.0

    def test_bad_times_rejected(self):
        res = uniform_flow()
        src = SourceSpec(4.0, 5.0, ((1.0, 2.0, 1.0),))
        with pytest.raises(ValueError):
            transport(GRID, res.qx, res.qy, src, (3.0, 2.0))
        with pytest.raises(ValueError):
            transport(GRID, res.qx, res.qy, src, (-1.0, 2.0))

    def test_zero_flow_rejected(self):
        qx = np.zeros((GRID.nx + 1, GRID.ny))
        qy = np.zeros((GRID.nx, GRID.ny + 1))
        src = SourceSpec(4.0, 5.0, ((1.0, 2.0, 1.0),))
        with pytest.raises(ValueError):
            transport(GRID, qx, qy, src, (1.0,))


class TestBilinear:
    def test_reproduces_linear_field(self):
        x, y = GRID.cell_centers()
        field = 2.0 * x[:, None] - 0.5 * y[None, :] + 1.0
        pts = [(5.3, 4.7), (0.26, 0.27), (19.7, 9.7), (12.0, 5.0)]
        got = bilinear_sample(field, GRID, pts)
        want = [2.0 * px - 0.5 * py + 1.0 for (px, py) in pts]
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_coarsen_block_means(self):
        f = np.arange(16, dtype=float).reshape(4, 4)
        c = coarsen_field(f, 2)
        want = np.array([[f[:2, :2].mean(), f[:2, 2:].mean()],
                         [f[2:, :2].mean(), f[2:, 2:].mean()]])
        np.testing.assert_array_equal(c, want)
        with pytest.raises(ValueError):
            coarsen_field(np.zeros((5, 4)), 2)


class TestKLField:
    # discretization-exact top-20 share of the total field variance on the
    # 40x20 grid; independently re-derived by the dense eigen-oracle below
    PINNED_FRACTION = 0.8502472712159629

    def test_zero_coefficients_give_mean_field(self):
        kl = kl_field(GRID, n_terms=5)
        np.testing.assert_allclose(kl.realize(np.zeros(5)), 2.0, atol=1e-12)

    def test_eigenvalues_nonincreasing_nonnegative(self):
        kl = kl_field(GRID)
        assert np.all(kl.eigenvalues >= 0.0)
        assert np.all(np.diff(kl.eigenvalues) <= 1e-12)

    def test_modes_orthonormal(self):
        kl = kl_field(GRID)
        gram = kl.modes.T @ kl.modes
        assert np.abs(gram - np.eye(kl.n_terms)).max() < 1e-8

    def test_variance_fraction_matches_eigen_oracle(self):
        kl = kl_field(GRID)
        pts = GRID.center_points()
        cov = 0.4 * np.exp(-np.abs(pts[:, 0:1] - pts[:, 0:1].T) / 10.0
                           - np.abs(pts[:, 1:2] - pts[:, 1:2].T) / 5.0)
        w = np.sort(np.linalg.eigvalsh(cov))[::-1]
        want = w[:20].sum() / np.trace(cov)
        assert kl.variance_fraction == pytest.approx(want, abs=1e-10)
        assert kl.variance_fraction == pytest.approx(self.PINNED_FRACTION, abs=1e-10)

    def test_realization_linearity(self):
        kl = kl_field(GRID, n_terms=8)
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(2, 8))
        ya = kl.realize(a) - kl.mean
        yb = kl.realize(b) - kl.mean
        yab = kl.realize(a + b) - kl.mean
        np.testing.assert_allclose(yab, ya + yb, atol=1e-12)

    def test_monte_carlo_covariance(self):
        kl = kl_field(GRID)
        rng = np.random.default_rng(42)
        # cells (10,10) and (12,10) sit at (5.25, 5.25) and (6.25, 5.25)
        draws = rng.standard_normal((10_000, kl.n_terms))
        v1 = np.empty(draws.shape[0])
        v2 = np.empty(draws.shape[0])
        for n, xi in enumerate(draws):
            y = kl.realize(xi)
            v1[n] = y[10, 10]
            v2[n] = y[12, 10]
        emp = np.cov(v1, v2)[0, 1]
        model = kl.covariance_between((5.25, 5.25), (6.25, 5.25))
        assert emp == pytest.approx(model, rel=0.05)

    def test_n_terms_validation(self):
        with pytest.raises(ValueError):
            kl_field(GRID, n_terms=0)
        with pytest.raises(ValueError):
            kl_field(GridField(4, 2, 2.0, 1.0), n_terms=9)

    def test_wrong_coefficient_count_rejected(self):
        kl = kl_field(GRID, n_terms=6)
        with pytest.raises(ValueError):
            kl.realize(np.zeros(5))
