"""Tests for the benchmark forward-model pairs and the problem registry."""

import numpy as np
import pytest

from amfmcmc.errors import ConfigError
from amfmcmc.models import (
    diffusion1d_solve,
    fidelity_r2,
    make_problem,
    problem_names,
)


class TestRegistry:
    def test_names(self):
        assert problem_names() == ("diffusion1d", "plume28", "plume5", "toy1d")

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            make_problem("nonexistent")

    def test_overrides_reach_builder(self):
        p = make_problem("toy1d", noise_sd=0.5, true_m=3.0)
        assert np.all(p.noise_sd == 0.5)
        assert p.true_params[0] == 3.0

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigError):
            make_problem("toy1d", bogus_knob=1)

    def test_output_layout_consistent(self):
        rng = np.random.default_rng(0)
        for name in problem_names():
            p = make_problem(name)
            m = p.space.sample(rng, 1)[0]
            hi = np.asarray(p.pair.high(m))
            lo = np.asarray(p.pair.low(m))
            n = p.pair.n_outputs
            assert hi.shape == lo.shape == (n,)
            assert len(p.pair.output_labels) == n
            assert len(p.pair.output_groups) == n
            assert p.noise_sd.shape == (n,)

    def test_measurements_deterministic(self):
        for name in ("toy1d", "diffusion1d"):
            p = make_problem(name)
            m1 = p.measurements(seed=7)
            m2 = p.measurements(seed=7)
            m3 = p.measurements(seed=8)
            np.testing.assert_array_equal(m1.values, m2.values)
            assert not np.array_equal(m1.values, m3.values)
            assert m1.labels == p.pair.output_labels


class TestPurity:
    """Simulators must be pure: same input, same output, call after call."""

    @pytest.mark.parametrize("name,n_draws", [
        ("toy1d", 100), ("diffusion1d", 100), ("plume5", 100), ("plume28", 100),
    ])
    def test_repeat_calls_identical(self, name, n_draws):
        p = make_problem(name)
        rng = np.random.default_rng(1)
        draws = p.sample_prior(rng, n_draws)
        # evaluate everything once, then spot-check repeats in reverse order
        first_hi = [np.asarray(p.pair.high(m)) for m in draws[:3]]
        first_lo = [np.asarray(p.pair.low(m)) for m in draws[:3]]
        for m in draws[3:]:
            p.pair.low(m)
        for m, want in zip(draws[:3], first_hi):
            np.testing.assert_array_equal(np.asarray(p.pair.high(m)), want)
        for m, want in zip(draws[:3], first_lo):
            np.testing.assert_array_equal(np.asarray(p.pair.low(m)), want)


class TestToy1d:
    def test_anchor_values(self):
        p = make_problem("toy1d")
        assert p.pair.high([0.0])[0] == 0.0
        assert p.pair.low([0.0])[0] == -0.1
        assert p.pair.high([np.pi])[0] == pytest.approx(0.0, abs=1e-12)
        assert p.pair.low([np.pi])[0] == pytest.approx(-0.1 * np.pi - 0.1, abs=1e-12)

    def test_fidelity_gap_identity(self):
        p = make_problem("toy1d")
        rng = np.random.default_rng(2)
        for m in rng.uniform(0, 10, size=100):
            gap = p.pair.high([m])[0] - p.pair.low([m])[0]
            assert gap == pytest.approx(0.1 * m + 0.1, abs=1e-14)

    def test_box(self):
        p = make_problem("toy1d")
        assert p.space.lower[0] == 0.0 and p.space.upper[0] == 10.0


class TestDiffusion1d:
    def test_zero_strength_zero_output(self):
        p = make_problem("diffusion1d")
        out = p.pair.high([np.log(0.5), 0.0])
        assert np.all(out == 0.0)

    def test_large_kappa_decay(self):
        # no source, uniform nonzero start: diffusion wipes the state out
        out = diffusion1d_solve(kappa=50.0, strength=0.0, n_nodes=101, dt=1e-3,
                                sensors=(0.25, 0.5, 0.75), times=(1.0,), u0=1.0)
        assert np.abs(out).max() < 1e-6

    def test_second_order_in_space(self):
        ref = diffusion1d_solve(0.5, 8.0, 1001, 2.5e-5, (0.25, 0.5, 0.75), (0.05,))
        errs = []
        for n in (21, 41):
            u = diffusion1d_solve(0.5, 8.0, n, 2.5e-5, (0.25, 0.5, 0.75), (0.05,))
            errs.append(np.abs(u - ref).max())
        order = np.log2(errs[0] / errs[1])
        assert 1.8 < order < 2.3

    def test_output_times_must_align_with_dt(self):
        with pytest.raises(ValueError):
            diffusion1d_solve(0.5, 8.0, 11, 1e-2, (0.5,), (0.055,))

    def test_fidelity_r2_high(self):
        p = make_problem("diffusion1d")
        r2 = fidelity_r2(p.pair, p.space, n_draws=50, seed=0)
        assert r2 > 0.95

    def test_box_and_truth(self):
        p = make_problem("diffusion1d")
        assert tuple(p.space.lower) == (-2.0, 0.0)
        assert tuple(p.space.upper) == (1.0, 20.0)
        assert p.true_params[0] == pytest.approx(np.log(0.5))
        assert p.true_params[1] == 8.0
        assert p.pair.n_outputs == 9


class TestPlume5:
    def test_box_and_truth(self):
        p = make_problem("plume5")
        assert p.space.names == ("x_s", "y_s", "s_s", "t_on", "t_off")
        assert tuple(p.space.lower) == (3.0, 3.0, 10.0, 3.0, 9.0)
        assert tuple(p.space.upper) == (5.0, 7.0, 13.0, 5.0, 11.0)
        np.testing.assert_allclose(p.true_params,
                                   [3.854, 5.999, 11.044, 4.897, 9.075])
        assert np.all(p.noise_sd == 0.01)
        assert p.pair.output_groups == ("conc",) * 5

    def test_breakthrough_orders_sensibly(self):
        p = make_problem("plume5")
        out = p.pair.high(p.true_params)
        # nothing has reached the well ahead of the advective front
        assert out[0] == pytest.approx(0.0, abs=1e-6)
        # the plume then arrives: a clear signal within the observation window
        assert out.max() > 1.0

    def test_source_symmetry_in_y(self):
        # the well sits at mid-height: mirrored sources give identical signals
        p = make_problem("plume5")
        m_up = np.array([4.0, 6.0, 11.0, 4.0, 9.5])
        m_dn = np.array([4.0, 4.0, 11.0, 4.0, 9.5])
        np.testing.assert_allclose(p.pair.high(m_up), p.pair.high(m_dn),
                                   rtol=1e-9, atol=1e-12)

    def test_bad_switch_times_rejected(self):
        p = make_problem("plume5")
        with pytest.raises(ValueError):
            p.pair.high([4.0, 5.0, 11.0, 5.0, 4.0])

    def test_fidelity_r2_reported(self):
        p = make_problem("plume5")
        r2 = fidelity_r2(p.pair, p.space, n_draws=50, seed=0)
        print(f"plume5 low-vs-high R^2 over 50 prior draws: {r2:.3f}")
        assert r2 > 0.5


class TestPlume28:
    def test_space_layout(self):
        p = make_problem("plume28")
        assert p.space.ndim == 28
        assert p.space.names[:2] == ("x_s", "y_s")
        assert p.space.names[2:8] == ("s1", "s2", "s3", "s4", "s5", "s6")
        assert all(n.startswith("xi") for n in p.space.names[8:])
        np.testing.assert_array_equal(p.space.lower[8:], -4.0)
        np.testing.assert_array_equal(p.space.upper[8:], 4.0)
        np.testing.assert_allclose(
            p.true_params[:8],
            [4.033, 5.405, 1.229, 7.628, 4.327, 5.438, 0.293, 6.474])
        groups = p.pair.output_groups
        assert groups.count("conc") == 30 and groups.count("head") == 6
        # all true values (including the fixed field coefficients) lie in the box
        assert p.space.contains(p.true_params)

    def test_true_field_coefficients_fixed(self):
        p1 = make_problem("plume28")
        p2 = make_problem("plume28")
        np.testing.assert_array_equal(p1.true_params, p2.true_params)

    def test_gaussian_prior_on_field_coefficients(self):
        p = make_problem("plume28")
        m = p.true_params
        want = -0.5 * np.sum(m[8:] ** 2)
        assert p.log_prior(m) == pytest.approx(want, rel=1e-12)
        rng = np.random.default_rng(5)
        draws = p.sample_prior(rng, 4000)
        assert np.all(np.abs(draws[:, 8:]) <= 4.0)
        assert np.all(draws[:, :8] >= p.space.lower[:8])
        # xi columns look standard normal, source columns look uniform
        assert draws[:, 8:].std() == pytest.approx(1.0, abs=0.05)
        assert draws[:, 0].std() == pytest.approx(2.0 / np.sqrt(12.0), abs=0.05)

    def test_heads_physical(self):
        p = make_problem("plume28")
        out = p.pair.high(p.true_params)
        heads = out[-6:]
        assert np.all(heads > 11.0) and np.all(heads < 12.0)

    def test_fidelity_r2_reported(self):
        p = make_problem("plume28")
        r2 = fidelity_r2(p.pair, p.space, n_draws=50, seed=0)
        print(f"plume28 low-vs-high R^2 over 50 prior draws: {r2:.3f}")
        assert r2 > 0.5
