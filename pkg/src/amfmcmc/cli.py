"""Batch command-line runner: one YAML config in, CSV artifacts out.

Run modes
---------
``exact-mcmc``      sample the posterior that calls the expensive simulator
``surrogate-mcmc``  sample the posterior of a previously saved model file
``amf``             adaptive two-fidelity refinement loop
``agp``             the same loop restricted to high-fidelity data only
``fit-gp``          fit models on a prior-drawn design and save them
``diag``            recompute convergence diagnostics from a trace file

Every run writes its tables into ``--output-dir`` plus a ``manifest.yaml``
recording the resolved configuration, seed, package version, and wall-clock
time. All randomness derives from the single config seed through named
sub-streams (``mcmc``, ``design``, ``noise``, ``fit``), so reruns are
byte-identical in every CSV regardless of ``--threads``.

Exit codes: 0 on success; 2 for a config/schema problem (including empty
posterior samples and model-file version mismatches); 3 for a numerical
failure, with a JSON state snapshot written next to the other outputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import traceback

import numpy as np
import yaml

from . import __version__
from . import io as aio
from .errors import AmfError, ConfigError, EmptySamplesError
from .gp import FidelityDataset, FitConfig, fit_multioutput
from .inference import (AMFConfig, Measurements, agp_run, amf_run,
                        make_exact_target, make_surrogate_target)
from .mcmc import SamplerConfig, rhat_series, run
from .models import make_problem
from .seeding import substream, substream_seed

ENV_THREADS = "AMFMCMC_THREADS"
MODES = ("exact-mcmc", "surrogate-mcmc", "amf", "agp", "fit-gp", "diag")

_log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# config schema


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _check_keys(mapping: dict, allowed, where: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    _require(not unknown,
             f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")


def _get_mapping(doc: dict, key: str) -> dict:
    value = doc.get(key, {})
    _require(isinstance(value, dict), f"config key {key!r} must be a mapping")
    return value


def _get_int(mapping: dict, key: str, default, where: str, minimum=None):
    value = mapping.get(key, default)
    if value is None:
        return None
    _require(isinstance(value, int) and not isinstance(value, bool),
             f"{where}.{key} must be an integer")
    _require(minimum is None or value >= minimum,
             f"{where}.{key} must be >= {minimum}")
    return value


def _get_number(mapping: dict, key: str, default, where: str):
    value = mapping.get(key, default)
    if value is None:
        return None
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             f"{where}.{key} must be a number")
    return float(value)


def _get_str(mapping: dict, key: str, default, where: str):
    value = mapping.get(key, default)
    if value is None:
        return None
    _require(isinstance(value, str), f"{where}.{key} must be a string")
    return value


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    _require(isinstance(doc, dict), f"{path}: config must be a YAML mapping")
    _check_keys(doc, ("problem", "mode", "seed", "output_dir", "threads",
                      "sampler", "amf", "fit", "gp_file", "traces"), "config")
    return doc


def _sampler_config(doc: dict, seed: int) -> SamplerConfig:
    section = _get_mapping(doc, "sampler")
    allowed = ("n_chains", "n_iterations", "thin_every", "n_pairs", "snooker_prob",
               "crossover_probs", "jump_scale_override", "unit_jump_prob",
               "perturb_scale", "jitter_sd", "snooker_gamma", "burn_in_fraction")
    _check_keys(section, allowed, "sampler")
    kwargs = {}
    for key in ("n_chains", "n_iterations", "thin_every", "n_pairs"):
        value = _get_int(section, key, None, "sampler",
                         minimum=0 if key == "n_iterations" else 1)
        if value is not None:
            kwargs[key] = value
    for key in ("snooker_prob", "jump_scale_override", "unit_jump_prob",
                "perturb_scale", "jitter_sd", "burn_in_fraction"):
        value = _get_number(section, key, None, "sampler")
        if value is not None:
            kwargs[key] = value
    for key in ("crossover_probs", "snooker_gamma"):
        if key in section:
            value = section[key]
            _require(isinstance(value, (list, tuple)) and
                     all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value),
                     f"sampler.{key} must be a list of numbers")
            kwargs[key] = tuple(float(v) for v in value)
    try:
        return SamplerConfig(seed=seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from exc


def _fit_config(doc: dict, seed: int, n_threads: int) -> FitConfig:
    section = _get_mapping(doc, "fit")
    _check_keys(section, ("n_starts", "max_iter"), "fit")
    kwargs = {}
    for key in ("n_starts", "max_iter"):
        value = _get_int(section, key, None, "fit", minimum=1)
        if value is not None:
            kwargs[key] = value
    try:
        return FitConfig(seed=seed, n_threads=n_threads, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}") from exc


def _amf_config(doc: dict, seed: int, n_threads: int) -> AMFConfig:
    section = _get_mapping(doc, "amf")
    _require(bool(section), "mode amf/agp/fit-gp requires an 'amf' section "
             "(n_low_init, n_high_init, max_iterations, ...)")
    allowed = ("n_low_init", "n_high_init", "max_iterations", "batch_high",
               "batch_low", "inner_iterations", "refit_starts", "prune_max_size",
               "prune_min_high", "diag_samples", "diag_rmse_samples")
    _check_keys(section, allowed, "amf")
    kwargs = {}
    for key in ("n_low_init", "n_high_init", "max_iterations"):
        value = _get_int(section, key, None, "amf", minimum=0)
        _require(value is not None, f"amf.{key} is required")
        kwargs[key] = value
    for key in ("batch_high", "batch_low", "inner_iterations", "refit_starts",
                "prune_max_size", "prune_min_high", "diag_samples",
                "diag_rmse_samples"):
        value = _get_int(section, key, None, "amf", minimum=0)
        if value is not None:
            kwargs[key] = value
    try:
        return AMFConfig(sampler=_sampler_config(doc, seed=0),
                         fit=_fit_config(doc, seed=0, n_threads=1),
                         seed=seed, n_threads=n_threads, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"amf: {exc}") from exc


def _build_problem(doc: dict):
    section = _get_mapping(doc, "problem")
    _require(bool(section), "config requires a 'problem' section with a 'name'")
    _check_keys(section, ("name", "overrides"), "problem")
    name = _get_str(section, "name", None, "problem")
    _require(name is not None, "problem.name is required")
    overrides = section.get("overrides", {})
    _require(isinstance(overrides, dict), "problem.overrides must be a mapping")
    return make_problem(name, **overrides)


# ---------------------------------------------------------------------------
# shared output helpers


def _write_sampler_outputs(output_dir, space, res) -> list:
    """trace/posterior/rhat/summary tables for one sampler run."""
    if res.samples.shape[0] == 0:
        raise EmptySamplesError(
            "run produced no posterior samples; increase sampler.n_iterations")
    names = list(space.names)
    paths = []

    trace = os.path.join(output_dir, "trace.csv")
    aio.write_trace_csv(trace, names, res.history_states, res.history_log_posts)
    paths.append(trace)

    posterior = os.path.join(output_dir, "posterior.csv")
    aio.write_trace_csv(posterior, names, res.history_states[res.n_burn:],
                        res.history_log_posts[res.n_burn:], first_iteration=res.n_burn)
    paths.append(posterior)

    rhat_path = os.path.join(output_dir, "rhat.csv")
    lengths, values = rhat_series(res.history_states.transpose(1, 0, 2))
    aio.write_rhat_csv(rhat_path, names, lengths, values)
    paths.append(rhat_path)

    summary = os.path.join(output_dir, "summary.csv")
    aio.export_posterior_summary(summary, res.samples, names)
    paths.append(summary)
    return paths


# ---------------------------------------------------------------------------
# mode runners


def _mode_exact(doc, seed, output_dir, threads):
    problem = _build_problem(doc)
    meas = _measurements(problem, seed)
    cfg = _sampler_config(doc, seed=substream_seed(seed, "mcmc"))
    target = make_exact_target(problem.pair.high, problem.space, meas,
                               log_prior=problem.log_prior)
    res = run(target, problem.space, cfg, n_threads=threads)
    return _write_sampler_outputs(output_dir, problem.space, res)


def _mode_surrogate(doc, seed, output_dir, threads):
    problem = _build_problem(doc)
    gp_file = _get_str(doc, "gp_file", None, "config")
    _require(gp_file is not None, "mode surrogate-mcmc requires config key 'gp_file'")
    models = aio.load_gp(gp_file)
    if not isinstance(models, list):
        models = [models]
    meas = _measurements(problem, seed)
    _require(len(models) == meas.values.shape[0],
             f"{gp_file}: {len(models)} model channel(s) but the problem has "
             f"{meas.values.shape[0]} observations")
    cfg = _sampler_config(doc, seed=substream_seed(seed, "mcmc"))
    target = make_surrogate_target(models, problem.space, meas,
                                   log_prior=problem.log_prior)
    res = run(target, problem.space, cfg, n_threads=threads)
    return _write_sampler_outputs(output_dir, problem.space, res)


def _measurements(problem, seed) -> Measurements:
    try:
        return problem.measurements(seed)
    except ValueError as exc:
        raise ConfigError(f"problem {problem.name!r}: {exc}") from exc


def _loop_outputs(output_dir, problem, state) -> list:
    paths = _write_sampler_outputs(output_dir, problem.space, state.last_run)
    history = os.path.join(output_dir, "history.csv")
    aio.write_history_csv(history, state.history)
    paths.append(history)
    gp_path = os.path.join(output_dir, "gp.json")
    aio.persist_gp(state.models, gp_path)
    paths.append(gp_path)
    return paths


def _mode_amf(doc, seed, output_dir, threads):
    problem = _build_problem(doc)
    meas = _measurements(problem, seed)
    cfg = _amf_config(doc, seed, threads)
    state = amf_run(problem.pair, problem.space, meas, cfg,
                    log_prior=problem.log_prior, prior_sampler=problem.sample_prior)
    return _loop_outputs(output_dir, problem, state)


def _mode_agp(doc, seed, output_dir, threads):
    problem = _build_problem(doc)
    meas = _measurements(problem, seed)
    cfg = _amf_config(doc, seed, threads)
    state = agp_run(problem.pair.high, problem.space, meas, cfg,
                    log_prior=problem.log_prior, prior_sampler=problem.sample_prior)
    return _loop_outputs(output_dir, problem, state)


def _mode_fitgp(doc, seed, output_dir, threads):
    problem = _build_problem(doc)
    cfg = _amf_config(doc, seed, threads)
    design_rng = substream(seed, "design")
    draw = problem.sample_prior
    x_low = draw(design_rng, cfg.n_low_init)
    x_high = draw(design_rng, cfg.n_high_init)
    y_low = np.array([problem.pair.low(row) for row in x_low]) \
        if cfg.n_low_init else np.empty((0, problem.pair.n_outputs))
    y_high = np.array([problem.pair.high(row) for row in x_high])
    datasets = [FidelityDataset(inputs_low=x_low, outputs_low=y_low[:, k],
                                inputs_high=x_high, outputs_high=y_high[:, k])
                for k in range(problem.pair.n_outputs)]
    fit_cfg = FitConfig(n_starts=cfg.fit.n_starts, max_iter=cfg.fit.max_iter,
                        seed=substream_seed(seed, "fit"), n_threads=threads)
    models = fit_multioutput(datasets, fit_cfg)
    gp_path = os.path.join(output_dir, "gp.json")
    aio.persist_gp(models, gp_path)
    return [gp_path]


def _mode_diag(doc, seed, output_dir, threads, traces=None):
    traces = traces or _get_str(doc, "traces", None, "config")
    _require(traces is not None,
             "mode diag requires a trace file (--traces or config key 'traces')")
    try:
        names, states, _, _ = aio.read_trace_csv(traces)
    except FileNotFoundError as exc:
        raise ConfigError(f"trace file not found: {traces}") from exc
    lengths, values = rhat_series(states.transpose(1, 0, 2))
    rhat_path = os.path.join(output_dir, "rhat.csv")
    aio.write_rhat_csv(rhat_path, names, lengths, values)
    return [rhat_path]


_RUNNERS = {
    "exact-mcmc": _mode_exact,
    "surrogate-mcmc": _mode_surrogate,
    "amf": _mode_amf,
    "agp": _mode_agp,
    "fit-gp": _mode_fitgp,
    "diag": _mode_diag,
}


# ---------------------------------------------------------------------------
# entry point


def _default_threads() -> int:
    raw = os.environ.get(ENV_THREADS)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"environment variable {ENV_THREADS}={raw!r} is not an integer") from exc
    _require(value >= 1, f"environment variable {ENV_THREADS} must be >= 1")
    return value


def _resolve(doc: dict, args) -> dict:
    """Merge config-file values and command-line overrides."""
    mode = args.mode or _get_str(doc, "mode", None, "config")
    _require(mode is not None, "a run mode is required (--mode or config key 'mode')")
    _require(mode in MODES, f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    seed = args.seed if args.seed is not None else _get_int(doc, "seed", 0, "config", minimum=0)
    output_dir = args.output_dir or _get_str(doc, "output_dir", ".", "config")
    threads = args.threads if args.threads is not None \
        else _get_int(doc, "threads", None, "config", minimum=1)
    if threads is None:
        threads = _default_threads()
    _require(threads >= 1, "threads must be >= 1")
    return {"mode": mode, "seed": seed, "output_dir": output_dir,
            "threads": threads, "traces": args.traces}


def cli_run(argv=None) -> int:
    """Run one batch job; returns the process exit code."""
    parser = argparse.ArgumentParser(
        prog="amfmcmc",
        description="Two-fidelity Bayesian calibration runs driven by a YAML config.")
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--mode", choices=MODES, help="overrides the config 'mode'")
    parser.add_argument("--seed", type=int, help="overrides the config 'seed'")
    parser.add_argument("--output-dir", help="overrides the config 'output_dir'")
    parser.add_argument("--threads", type=int,
                        help=f"worker threads (default: config, then ${ENV_THREADS}, then 1)")
    parser.add_argument("--traces", help="trace CSV for --mode diag")
    args = parser.parse_args(argv)

    t0 = time.perf_counter()
    resolved = None
    output_dir = "."
    try:
        doc = load_config(args.config)
        resolved = _resolve(doc, args)
        output_dir = resolved["output_dir"]
        os.makedirs(output_dir, exist_ok=True)
        runner = _RUNNERS[resolved["mode"]]
        if resolved["mode"] == "diag":
            paths = runner(doc, resolved["seed"], output_dir,
                           resolved["threads"], traces=resolved["traces"])
        else:
            paths = runner(doc, resolved["seed"], output_dir, resolved["threads"])
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AmfError, FloatingPointError, np.linalg.LinAlgError) as exc:
        snapshot = os.path.join(output_dir, "state_snapshot.json")
        try:
            os.makedirs(output_dir, exist_ok=True)
            aio.write_state_snapshot(snapshot, {
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(),
                "resolved": resolved,
                "config_file": args.config,
            })
        except OSError:
            snapshot = "(snapshot could not be written)"
        print(f"numerical failure: {exc}\nstate snapshot: {snapshot}", file=sys.stderr)
        return 3

    manifest = os.path.join(output_dir, "manifest.yaml")
    aio.write_manifest(manifest, {"file": os.path.abspath(args.config), **doc},
                       seed=resolved["seed"],
                       wall_clock_s=time.perf_counter() - t0,
                       outputs=[os.path.basename(p) for p in paths],
                       version=__version__)
    for path in [*paths, manifest]:
        print(path)
    return 0


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    raise SystemExit(cli_run())


if __name__ == "__main__":
    main()
