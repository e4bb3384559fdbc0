"""Acceptance gate: one test per shipped claim, one pass/fail line each.

Each test exercises a complete user-visible behavior at its stated
tolerance and time budget, printing ``[acceptance] criterion NN PASS/FAIL``
with the measured numbers. Criteria that cannot be met are left failing —
with the measured value in the message — rather than weakened; the decision
record next to the repository carries the analysis.
"""

import time

import numpy as np
import pytest
import yaml
from scipy.stats import ks_2samp

from amfmcmc import cli
from amfmcmc.errors import EmptySamplesError  # noqa: F401  (import sanity)
from amfmcmc.gp import (FidelityDataset, FitConfig, KernelParams,
                        MFHyperparams, MultiFidelityGP, nlml)
from amfmcmc.groundwater import GridField, SourceSpec, darcy_flow, kl_field, transport
from amfmcmc.inference import AMFConfig, CountingSimulator, amf_run, make_exact_target
from amfmcmc.mcmc import SamplerConfig, run
from amfmcmc.models import diffusion1d_solve, make_problem
from amfmcmc.experiments import kde_mode_count, reproduce_figure
from amfmcmc.seeding import substream, substream_seed
from amfmcmc.space import ParameterSpace

from _oracles import oracle_nlml, oracle_predict


def _line(num: int, ok: bool, detail: str) -> str:
    status = "PASS" if ok else "FAIL"
    message = f"[acceptance] criterion {num:02d} {status}: {detail}"
    print(message, flush=True)
    return message


# ---------------------------------------------------------------------------
# 1. sparse-design comparison: two-fidelity beats single-fidelity


def test_criterion_01_multifidelity_beats_single_fidelity(tmp_path):
    t0 = time.perf_counter()
    pairs = []
    for seed in range(5):
        r = reproduce_figure("fig1", seed=seed, output_dir=str(tmp_path / str(seed)))
        pairs.append((r["rmse_mf"], r["rmse_sf"]))
    elapsed = time.perf_counter() - t0
    ok = all(mf < sf for mf, sf in pairs) and elapsed < 10.0
    detail = (f"grid RMSE (mf, sf) per seed: "
              + ", ".join(f"({mf:.3f}, {sf:.3f})" for mf, sf in pairs)
              + f"; {elapsed:.1f}s (< 10s)")
    message = _line(1, ok, detail)
    assert ok, message


# ---------------------------------------------------------------------------
# 2./3. dense-inverse oracle equivalence for prediction and the fit objective


def _random_case(rng):
    d = int(rng.integers(1, 4))
    n_low = int(rng.integers(3, 11))
    n_high = int(rng.integers(2, 6))  # n_low + n_high <= 15
    x_low = rng.uniform(0.0, 2.0, (n_low, d))
    x_high = rng.uniform(0.0, 2.0, (n_high, d))
    y_low = np.sin(x_low.sum(axis=1)) + 0.05 * rng.standard_normal(n_low)
    y_high = 1.3 * np.sin(x_high.sum(axis=1)) + 0.1 * x_high[:, 0]
    data = FidelityDataset(inputs_low=x_low, outputs_low=y_low,
                           inputs_high=x_high, outputs_high=y_high)
    hyper = MFHyperparams(
        kernel_low=KernelParams(variance=float(rng.uniform(0.3, 2.0)),
                                length_scales=rng.uniform(0.4, 1.5, d)),
        kernel_delta=KernelParams(variance=float(rng.uniform(0.1, 0.8)),
                                  length_scales=rng.uniform(0.4, 1.5, d)),
        rho=float(rng.uniform(0.5, 1.5)),
        noise_low=float(rng.uniform(0.02, 0.1)),
        noise_high=float(rng.uniform(0.01, 0.05)),
    )
    query = rng.uniform(0.0, 2.0, d)
    return data, hyper, query


def _oracle_args(data, hyper):
    return (data.inputs_low, data.outputs_low, data.inputs_high, data.outputs_high,
            hyper.kernel_low.variance, hyper.kernel_low.length_scales,
            hyper.kernel_delta.variance, hyper.kernel_delta.length_scales,
            hyper.rho, hyper.noise_low, hyper.noise_high)


def test_criterion_02_predict_matches_dense_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(20):
        data, hyper, q = _random_case(rng)
        model = MultiFidelityGP(data, hyper)
        pred = model.predict(q)
        mean_o, var_o = oracle_predict(q, *_oracle_args(data, hyper))
        worst = max(worst,
                    abs(pred.mean - mean_o) / max(1.0, abs(mean_o)),
                    abs(pred.variance - var_o) / max(1.0, abs(var_o)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 5.0
    message = _line(2, ok, f"predict vs dense oracle, 20 datasets: worst rel err "
                           f"{worst:.2e} (< 1e-8); {elapsed:.1f}s (< 5s)")
    assert ok, message


def test_criterion_03_nlml_matches_dense_oracle():
    rng = np.random.default_rng(202)  # same datasets as criterion 2
    worst = 0.0
    for _ in range(20):
        data, hyper, _ = _random_case(rng)
        value = nlml(data, hyper)
        value_o = oracle_nlml(*_oracle_args(data, hyper))
        worst = max(worst, abs(value - value_o) / max(1.0, abs(value_o)))
    ok = worst < 1e-8
    message = _line(3, ok, f"fit objective vs dense oracle, 20 datasets: "
                           f"worst rel err {worst:.2e} (< 1e-8)")
    assert ok, message


# ---------------------------------------------------------------------------
# 4. sampler recovers a correlated 2-D Gaussian


def test_criterion_04_sampler_recovers_gaussian():
    t0 = time.perf_counter()
    true_mean = np.array([0.4, -0.6])
    true_cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    prec = np.linalg.inv(true_cov)

    def target(x):
        r = x - true_mean
        return -0.5 * float(r @ prec @ r)

    space = ParameterSpace(names=("x1", "x2"), lower=(-9.0, -9.0), upper=(9.0, 9.0))
    cfg = SamplerConfig(n_chains=4, n_iterations=20_000, thin_every=10, seed=44)
    res = run(target, space, cfg)

    post = res.history_states[res.n_burn:]          # (n_post, 4, 2)
    est_mean = post.reshape(-1, 2).mean(axis=0)
    est_cov = np.cov(post.reshape(-1, 2).T)
    chain_means = post.mean(axis=0)                  # (4, 2)
    mc_se = chain_means.std(axis=0, ddof=1) / np.sqrt(chain_means.shape[0])
    mean_ok = bool(np.all(np.abs(est_mean - true_mean) <= 3.0 * mc_se))
    cov_err = np.linalg.norm(est_cov - true_cov) / np.linalg.norm(true_cov)
    rhat_max = float(np.max(res.report.per_parameter))
    elapsed = time.perf_counter() - t0

    ok = mean_ok and cov_err < 0.10 and rhat_max < 1.2 and elapsed < 60.0
    message = _line(4, ok, f"mean err {np.abs(est_mean - true_mean).round(4)} vs "
                           f"3*SE {np.round(3 * mc_se, 4)}, cov rel err {cov_err:.3f} "
                           f"(< 0.10), rhat {rhat_max:.3f} (< 1.2); {elapsed:.1f}s (< 60s)")
    assert ok, message


# ---------------------------------------------------------------------------
# 5. refinement-loop budget accounting is exact


def test_criterion_05_budget_accounting_exact():
    t0 = time.perf_counter()
    problem = make_problem("toy1d")
    meas = problem.measurements(5)
    high = CountingSimulator(problem.pair.high)
    low = CountingSimulator(problem.pair.low)
    pair = type(problem.pair)(high=high, low=low,
                              output_labels=problem.pair.output_labels,
                              output_groups=problem.pair.output_groups)
    cfg = AMFConfig(
        n_low_init=200, n_high_init=30, max_iterations=70,
        batch_high=1, batch_low=1,
        sampler=SamplerConfig(n_chains=4, n_iterations=400, thin_every=5),
        fit=FitConfig(n_starts=2, max_iter=50),
        seed=5, inner_iterations=50, refit_starts=1, diag_samples=30)
    state = amf_run(pair, problem.space, meas, cfg)
    elapsed = time.perf_counter() - t0

    ok = (high.count, low.count) == (100, 270) \
        and state.eval_counts == (100, 270) and elapsed < 600.0
    message = _line(5, ok, f"counters (high, low) = ({high.count}, {low.count}), "
                           f"loop-reported {state.eval_counts} (expected (100, 270)); "
                           f"{elapsed:.0f}s (< 600s)")
    assert ok, message


# ---------------------------------------------------------------------------
# 6. adaptive surrogate posterior matches the direct simulator posterior


def _amf_posterior(problem, meas, seed, n_low, inner):
    # HF budget pinned at 10 initial + 40 rounds x batch 1 = 50 evaluations;
    # the low-fidelity design is free, and the multimodal toy needs a
    # prior-wide one so no posterior mode is lost before refinement starts.
    cfg = AMFConfig(
        n_low_init=n_low, n_high_init=10, max_iterations=40,
        batch_high=1, batch_low=1,
        sampler=SamplerConfig(n_chains=4, n_iterations=5000, thin_every=5),
        fit=FitConfig(n_starts=3, max_iter=80),
        seed=seed, inner_iterations=inner, refit_starts=1, diag_samples=50)
    state = amf_run(problem.pair, problem.space, meas, cfg,
                    log_prior=problem.log_prior, prior_sampler=problem.sample_prior)
    assert state.eval_counts[0] == 50  # 10 initial + 40 refinement rounds
    return state.posterior_samples


def _exact_posterior(problem, meas, seed):
    target = make_exact_target(problem.pair.high, problem.space, meas,
                               log_prior=problem.log_prior)
    cfg = SamplerConfig(n_chains=4, n_iterations=5000, thin_every=10,
                        seed=substream_seed(seed, "reference"))
    return run(target, problem.space, cfg).samples


def test_criterion_06_amf_posterior_matches_direct_posterior():
    t0 = time.perf_counter()
    detail_parts = []
    all_ok = True
    for name, n_low, inner in (("toy1d", 200, 80), ("diffusion1d", 60, 60)):
        problem = make_problem(name)
        passes = 0
        worst_by_seed = []
        for seed in range(5):
            meas = problem.measurements(seed)
            amf_samples = _amf_posterior(problem, meas, seed, n_low, inner)
            ref_samples = _exact_posterior(problem, meas, seed)
            assert amf_samples.shape[0] >= 10_000
            assert ref_samples.shape[0] >= 10_000
            ks = max(ks_2samp(amf_samples[:, j], ref_samples[:, j]).statistic
                     for j in range(amf_samples.shape[1]))
            worst_by_seed.append(ks)
            passes += ks < 0.1
        all_ok &= passes >= 4
        detail_parts.append(f"{name}: KS per seed "
                            + ", ".join(f"{v:.3f}" for v in worst_by_seed)
                            + f" -> {passes}/5 < 0.1")
    elapsed = time.perf_counter() - t0
    ok = all_ok and elapsed < 900.0
    message = _line(6, ok, "; ".join(detail_parts) + f"; {elapsed:.0f}s (< 900s)")
    assert ok, message


# ---------------------------------------------------------------------------
# 7. refinement shrinks posterior-region predictive uncertainty


def test_criterion_07_refinement_shrinks_gp_uncertainty():
    problem = make_problem("toy1d")
    ratios = []
    ok = True
    for seed in range(5):
        meas = problem.measurements(seed)
        cfg = AMFConfig(
            n_low_init=30, n_high_init=5, max_iterations=6,
            batch_high=2, batch_low=2,
            sampler=SamplerConfig(n_chains=4, n_iterations=400, thin_every=5),
            fit=FitConfig(n_starts=4, max_iter=80),
            seed=seed, inner_iterations=80, refit_starts=2, diag_samples=200)
        state = amf_run(problem.pair, problem.space, meas, cfg,
                        log_prior=problem.log_prior,
                        prior_sampler=problem.sample_prior)
        first = state.history[0]["mean_gp_sd"]["y"]
        last = state.history[-1]["mean_gp_sd"]["y"]
        ratios.append(last / first)
        ok &= last < first
    message = _line(7, ok, "final/initial mean sigma_gp per seed: "
                           + ", ".join(f"{r:.3f}" for r in ratios) + " (all < 1)")
    assert ok, message


# ---------------------------------------------------------------------------
# 8. the mirrored source location shows up as two posterior modes


def test_criterion_08_plume_bimodality(tmp_path):
    t0 = time.perf_counter()
    modes = []
    for seed in range(5):
        r = reproduce_figure("example2-bimodal", seed=seed,
                             output_dir=str(tmp_path / str(seed)))
        modes.append(r["n_modes"])
    elapsed = time.perf_counter() - t0
    passes = sum(m >= 2 for m in modes)
    ok = passes >= 4 and elapsed < 1800.0
    message = _line(8, ok, f"y_s KDE modes per seed (bandwidth 0.2): {modes} -> "
                           f"{passes}/5 >= 2 modes; {elapsed:.0f}s (< 1800s)")
    assert ok, message


# ---------------------------------------------------------------------------
# 9. random-field truncation keeps the targeted share of variance


def test_criterion_09_kl_variance_fraction():
    grid = GridField(nx=40, ny=20, lx=20.0, ly=10.0)
    kl = kl_field(grid, variance=0.4, corr_x=10.0, corr_y=5.0, mean=2.0, n_terms=20)
    # discretization-exact eigen-oracle value for this covariance and grid,
    # pinned to guard the decomposition itself
    pinned = 0.8502472712159629
    pin_ok = abs(kl.variance_fraction - pinned) < 1e-10
    band_ok = abs(kl.variance_fraction - 0.883) <= 0.03
    ok = pin_ok and band_ok
    message = _line(9, ok, f"20-term variance fraction {kl.variance_fraction:.10f}; "
                           f"eigen-oracle pin {pinned} matched: {pin_ok}; "
                           f"target band 0.883 +/- 0.03 met: {band_ok} "
                           f"(the band is not attainable for this covariance on this "
                           f"domain at any defensible discretization; the exact value "
                           f"is reported unmodified rather than tuned into the band)")
    assert ok, message


# ---------------------------------------------------------------------------
# 10. physics sanity of the groundwater and diffusion solvers


def test_criterion_10_physics_sanity():
    t0 = time.perf_counter()

    # (a) uniform-conductivity Darcy head profile is linear in x
    grid = GridField(nx=40, ny=20, lx=20.0, ly=10.0)
    res = darcy_flow(np.full((40, 20), 8.0), grid)
    x = grid.cell_centers()[0][:, None]
    head_err = float(np.abs(res.head - (12.0 - x / 20.0)).max())

    # (b) conservative transport: mass ledger closes
    source = SourceSpec(x=4.0, y=5.0, schedule=((0.0, 3.0, 2.0),))
    tr = transport(grid, res.qx, res.qy, source, times=(2.0, 6.0, 12.0))
    final_mass = tr.in_domain[-1] + tr.outflow[-1] - tr.clamp_added
    mass_err = abs(final_mass - tr.injected[-1]) / tr.injected[-1]

    # (c) diffusion solver converges at second order in the node spacing
    sensors, times = (0.25, 0.5, 0.75), (0.05, 0.1, 0.15)
    ref = diffusion1d_solve(0.5, 8.0, n_nodes=1001, dt=2.5e-5,
                            sensors=sensors, times=times)
    errs = [np.abs(diffusion1d_solve(0.5, 8.0, n_nodes=n, dt=2.5e-5,
                                     sensors=sensors, times=times) - ref).max()
            for n in (21, 41)]
    order = float(np.log2(errs[0] / errs[1]))

    elapsed = time.perf_counter() - t0
    ok = head_err < 1e-10 and mass_err <= 0.005 and 1.8 < order < 2.3 \
        and elapsed < 60.0
    message = _line(10, ok, f"darcy head err {head_err:.2e} (< 1e-10), transport "
                            f"mass imbalance {mass_err:.2e} (<= 5e-3), diffusion "
                            f"convergence order {order:.2f} (in (1.8, 2.3)); "
                            f"{elapsed:.0f}s (< 60s)")
    assert ok, message


# ---------------------------------------------------------------------------
# 11. byte-identical artifacts across reruns and thread counts


def test_criterion_11_byte_identical_outputs(tmp_path):
    t0 = time.perf_counter()
    doc = {
        "problem": {"name": "toy1d"},
        "mode": "amf",
        "seed": 11,
        "amf": {"n_low_init": 20, "n_high_init": 5, "max_iterations": 3,
                "batch_high": 1, "batch_low": 2, "inner_iterations": 60,
                "diag_samples": 40},
        "sampler": {"n_chains": 4, "n_iterations": 400, "thin_every": 5},
        "fit": {"n_starts": 2, "max_iter": 40},
    }
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump(doc), encoding="utf-8")
    runs = {"serial_a": [], "serial_b": ["--threads", "1"],
            "parallel": ["--threads", "3"]}
    for label, extra in runs.items():
        code = cli.cli_run(["--config", str(config),
                            "--output-dir", str(tmp_path / label), *extra])
        assert code == 0
    artifacts = ("trace.csv", "posterior.csv", "rhat.csv", "summary.csv",
                 "history.csv", "gp.json")
    mismatched = []
    for name in artifacts:
        blobs = {label: (tmp_path / label / name).read_bytes() for label in runs}
        if len(set(blobs.values())) != 1:
            mismatched.append(name)
    elapsed = time.perf_counter() - t0
    ok = not mismatched and elapsed < 120.0
    message = _line(11, ok, f"{len(artifacts)} artifacts x 3 runs (rerun + 3 threads): "
                            + ("all byte-identical" if not mismatched
                               else f"mismatch in {mismatched}")
                            + f"; {elapsed:.0f}s (< 120s)")
    assert ok, message
