"""Bayesian inversion: likelihoods, posterior targets, adaptive refinement.

The surrogate posterior augments the measurement-noise variance with the
GP's own predictive variance per observation, so regions where the surrogate
is uncertain are penalized less sharply. The adaptive loop alternates
surrogate MCMC with batches of new simulations at posterior samples,
refitting the GP system each round and warm-starting the next sampler run
from the previous archive.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SimulatorFailureError
from .gp import FidelityDataset, FitConfig, MultiFidelityGP, fit_multioutput
from .mcmc import RunResult, SamplerConfig, run
from .seeding import substream, substream_seed
from .space import ParameterSpace

_log = logging.getLogger(__name__)

__all__ = [
    "Measurements",
    "AMFConfig",
    "AMFState",
    "PrunePolicy",
    "CountingSimulator",
    "log_likelihood",
    "log_posterior_exact",
    "log_posterior_surrogate",
    "make_exact_target",
    "make_surrogate_target",
    "amf_run",
    "agp_run",
    "prune_training",
]

_DUP_RTOL = 1e-10


@dataclass(frozen=True)
class Measurements:
    """Observed data with per-observation Gaussian noise levels.

    ``noise_sd`` may be a scalar (shared) or one positive value per
    observation. ``labels`` and ``groups`` tag observations for reporting;
    groups aggregate observations of one physical kind (e.g. all
    concentrations vs all heads).
    """

    values: np.ndarray
    noise_sd: np.ndarray
    labels: tuple = ()
    groups: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        sd = np.asarray(self.noise_sd, dtype=float).reshape(-1)
        if sd.size == 1:
            sd = np.full(v.size, float(sd[0]))
        if sd.size != v.size:
            raise ValueError("noise_sd must be scalar or one value per observation")
        if not np.isfinite(v).all():
            raise ValueError("measurement values must be finite")
        if not np.all(sd > 0.0):
            raise ValueError("noise standard deviations must be positive")
        labels = tuple(self.labels) if self.labels else tuple(f"y{i}" for i in range(v.size))
        groups = tuple(self.groups) if self.groups else tuple("y" for _ in range(v.size))
        if len(labels) != v.size or len(groups) != v.size:
            raise ValueError("labels/groups must align with values")
        v.setflags(write=False)
        sd.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "noise_sd", sd)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)

    @property
    def n_obs(self) -> int:
        return self.values.size


class CountingSimulator:
    """Thread-safe call counter around a forward model."""

    def __init__(self, simulator):
        self._sim = simulator
        self._lock = threading.Lock()
        self.count = 0

    def __call__(self, m):
        with self._lock:
            self.count += 1
        return self._sim(m)


def log_likelihood(outputs, meas: Measurements, extra_var=0.0) -> float:
    """Independent-Gaussian log likelihood with variance augmentation.

    The variance of observation i is ``noise_sd[i]^2 + extra_var[i]``
    (``extra_var`` scalar or per-observation, nonnegative). Non-finite model
    outputs yield -inf with a logged event.
    """
    f = np.asarray(outputs, dtype=float).reshape(-1)
    if f.size != meas.n_obs:
        raise ValueError("model outputs must align with the measurements")
    ev = np.asarray(extra_var, dtype=float).reshape(-1)
    if ev.size == 1:
        ev = np.full(f.size, float(ev[0]))
    if ev.size != f.size:
        raise ValueError("extra_var must be scalar or one value per observation")
    if np.any(ev < 0.0) or not np.isfinite(ev).all():
        raise ValueError("extra_var must be nonnegative and finite")
    if not np.isfinite(f).all():
        _log.debug("non-finite model outputs in likelihood; returning -inf")
        return -np.inf
    var = meas.noise_sd**2 + ev
    r = meas.values - f
    return float(-0.5 * np.sum(r * r / var + np.log(2.0 * np.pi * var)))


def log_posterior_exact(m, simulator, space: ParameterSpace, meas: Measurements,
                        log_prior=None) -> float:
    """Box-prior log posterior with the simulator itself as the forward map.

    Outside the box: -inf without calling the simulator. ``log_prior``, when
    given, adds a density term on top of the uniform box (e.g. a truncated
    Gaussian on some coordinates). Simulator exceptions are logged and mapped
    to -inf.
    """
    m = np.asarray(m, dtype=float).reshape(-1)
    if not space.contains(m):
        return -np.inf
    lp = 0.0 if log_prior is None else float(log_prior(m))
    if lp == -np.inf:
        return -np.inf
    try:
        f = simulator(m)
    except Exception as exc:  # simulator failures reject the point, not the run
        _log.warning("simulator failed at %s: %s", np.array2string(m, precision=4), exc)
        return -np.inf
    return lp + log_likelihood(f, meas)


def log_posterior_surrogate(m, models, space: ParameterSpace, meas: Measurements,
                            log_prior=None) -> float:
    """Box-prior log posterior with per-channel GP means as the forward map.

    Each channel's GP predictive variance is added to that observation's
    noise variance, widening the posterior where the surrogate is uncertain.
    """
    m = np.asarray(m, dtype=float).reshape(-1)
    if not space.contains(m):
        return -np.inf
    lp = 0.0 if log_prior is None else float(log_prior(m))
    if lp == -np.inf:
        return -np.inf
    q = m[None, :]
    f = np.empty(len(models))
    v = np.empty(len(models))
    for k, model in enumerate(models):
        mean, var = model.predict_batch(q)
        f[k] = mean[0]
        v[k] = var[0]
    return lp + log_likelihood(f, meas, extra_var=v)


def make_exact_target(simulator, space: ParameterSpace, meas: Measurements,
                      log_prior=None):
    return lambda m: log_posterior_exact(m, simulator, space, meas, log_prior)


def make_surrogate_target(models, space: ParameterSpace, meas: Measurements,
                          log_prior=None):
    models = list(models)
    return lambda m: log_posterior_surrogate(m, models, space, meas, log_prior)


# ---------------------------------------------------------------- pruning

@dataclass(frozen=True)
class PrunePolicy:
    """Cap on total training rows; ``min_high`` HF rows are always kept."""

    max_size: int
    min_high: int = 1

    def __post_init__(self):
        if self.max_size < 1 or self.min_high < 1:
            raise ValueError("max_size and min_high must be positive")


def prune_training(data, meas: Measurements, policy: PrunePolicy):
    """Drop training rows least compatible with the measurements.

    ``data`` is one FidelityDataset or an input-aligned per-channel list.
    Rows are ranked by the exact-data log likelihood of their stored outputs
    (across channels) against the measurements; low-fidelity rows are dropped
    first, then high-fidelity rows, lowest likelihood first and oldest first
    on ties, until the total row count is at most ``policy.max_size``. Input
    alignment across channels is preserved. Returns the same shape as given.
    """
    single = isinstance(data, FidelityDataset)
    datasets = [data] if single else list(data)
    if len(datasets) != meas.n_obs:
        raise ValueError("need one dataset channel per measurement")
    n_low = datasets[0].n_low
    n_high = datasets[0].n_high
    for ds in datasets[1:]:
        if ds.n_low != n_low or ds.n_high != n_high:
            raise ValueError("channel datasets must be input-aligned")

    total = n_low + n_high
    if total <= policy.max_size:
        return data

    def row_ll(fidelity, j):
        outs = np.array([
            (ds.outputs_low[j] if fidelity == "low" else ds.outputs_high[j])
            for ds in datasets
        ])
        return log_likelihood(outs, meas)

    keep_low = np.ones(n_low, dtype=bool)
    keep_high = np.ones(n_high, dtype=bool)
    excess = total - policy.max_size

    ll_low = [row_ll("low", j) for j in range(n_low)]
    order_low = sorted(range(n_low), key=lambda j: (ll_low[j], j))
    for j in order_low[: min(excess, n_low)]:
        keep_low[j] = False
    excess -= min(excess, n_low)

    if excess > 0:
        ll_high = [row_ll("high", j) for j in range(n_high)]
        can_drop = max(0, n_high - policy.min_high)
        order_high = sorted(range(n_high), key=lambda j: (ll_high[j], j))
        for j in order_high[: min(excess, can_drop)]:
            keep_high[j] = False

    pruned = [
        FidelityDataset(
            ds.inputs_low[keep_low], ds.outputs_low[keep_low],
            ds.inputs_high[keep_high], ds.outputs_high[keep_high],
        )
        for ds in datasets
    ]
    return pruned[0] if single else pruned


# ---------------------------------------------------------------- adaptive loop

@dataclass
class AMFConfig:
    """Adaptive-refinement settings.

    ``max_iterations`` refinement rounds follow the initial design
    (``n_low_init`` low-fidelity + ``n_high_init`` high-fidelity prior
    draws); each round adds ``batch_high``/``batch_low`` posterior-sampled
    training points, refits, and re-runs the sampler warm-started from the
    previous archive. ``inner_iterations`` (when set) shortens the sampler
    runs of refinement rounds; the final round always uses the full
    ``sampler.n_iterations`` so the returned posterior is well sampled.
    """

    n_low_init: int
    n_high_init: int
    max_iterations: int
    batch_high: int = 1
    batch_low: int = 1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    seed: int = 0
    inner_iterations: int | None = None
    refit_starts: int = 2
    prune_max_size: int | None = None
    prune_min_high: int | None = None
    diag_samples: int = 400
    diag_rmse_samples: int = 0
    n_threads: int = 1

    def __post_init__(self):
        if self.n_high_init < 1 or self.n_low_init < 0:
            raise ValueError("need at least one initial HF point and n_low_init >= 0")
        if self.max_iterations < 0 or self.batch_high < 1 or self.batch_low < 0:
            raise ValueError("max_iterations >= 0, batch_high >= 1, batch_low >= 0")
        if self.n_low_init == 0 and self.batch_low != 0:
            raise ValueError("batch_low must be 0 when there is no low-fidelity design")
        if self.prune_max_size is not None and self.prune_max_size < self.n_high_init:
            raise ValueError("prune_max_size must be at least n_high_init")


@dataclass
class AMFState:
    """Final state of the adaptive loop.

    ``eval_counts`` counts training-data simulator calls (high, low) only;
    diagnostic RMSE evaluations, when enabled, are tallied separately in
    ``diag_eval_count``. ``history`` holds one record per completed stage
    (stage 0 = initial design) with per-group mean posterior GP sd.
    """

    datasets: list
    models: list
    posterior_samples: np.ndarray
    archive: np.ndarray
    eval_counts: tuple
    history: list
    last_run: RunResult
    diag_eval_count: int = 0


def _rows_collide(row, existing, batch):
    """True if `row` duplicates any row of `existing` or `batch` (relative tol)."""
    row = np.asarray(row, dtype=float)
    mag_r = max(1.0, float(np.abs(row).max()))
    for other in (existing, *batch):
        pool = np.atleast_2d(other)
        if pool.size == 0:
            continue
        diff = np.abs(pool - row).max(axis=1)
        mag = np.maximum(mag_r, np.abs(pool).max(axis=1))
        if np.any(diff <= _DUP_RTOL * mag):
            return True
    return False


def _draw_batch(pool, n, existing, space, rng, draw_prior):
    """n distinct pool rows, deduplicated against `existing` and each other.

    Falls back to prior draws if the pool cannot supply enough distinct rows.
    """
    if n == 0:
        return np.empty((0, space.ndim))
    batch: list[np.ndarray] = []
    attempts = 0
    limit = 200 * n
    while len(batch) < n and attempts < limit:
        attempts += 1
        row = pool[int(rng.integers(pool.shape[0]))]
        if not _rows_collide(row, existing, batch):
            batch.append(np.array(row, dtype=float))
    fallback_attempts = 0
    while len(batch) < n:
        fallback_attempts += 1
        if fallback_attempts > 1000:
            raise RuntimeError("could not draw distinct refinement points")
        _log.warning("sample pool exhausted by deduplication; falling back to a prior draw")
        row = draw_prior(rng, 1)[0]
        if not _rows_collide(row, existing, batch):
            batch.append(row)
    return np.array(batch)


def _evaluate_rows(simulator, rows, n_outputs):
    if rows.shape[0] == 0:
        return np.empty((0, n_outputs))
    outs = []
    for r in rows:
        f = np.asarray(simulator(r), dtype=float).reshape(-1)
        if f.size != n_outputs:
            raise SimulatorFailureError(
                f"simulator returned {f.size} outputs, expected {n_outputs}"
            )
        outs.append(f)
    return np.vstack(outs)


def _mean_gp_sd(models, meas, pool, rng, n_diag):
    """Mean posterior-sample GP predictive sd, aggregated per channel group."""
    take = min(n_diag, pool.shape[0])
    if take == 0:
        return {str(g): float("nan") for g in dict.fromkeys(meas.groups)}
    idx = rng.choice(pool.shape[0], size=take, replace=False)
    q = pool[idx]
    sd = np.empty((take, len(models)))
    for k, model in enumerate(models):
        _, var = model.predict_batch(q)
        sd[:, k] = np.sqrt(var)
    out = {}
    groups = np.array(meas.groups)
    for g in dict.fromkeys(meas.groups):  # preserve first-appearance order
        out[str(g)] = float(sd[:, groups == g].mean())
    return out


def _rmse_vs_high(models, high_sim, meas, pool, rng, n_samples):
    """RMSE of surrogate means against fresh HF runs, per channel group."""
    take = min(n_samples, pool.shape[0])
    idx = rng.choice(pool.shape[0], size=take, replace=False)
    q = pool[idx]
    truth = _evaluate_rows(high_sim, q, meas.n_obs)
    pred = np.empty_like(truth)
    for k, model in enumerate(models):
        mean, _ = model.predict_batch(q)
        pred[:, k] = mean
    err2 = (pred - truth) ** 2
    groups = np.array(meas.groups)
    out = {}
    for g in dict.fromkeys(meas.groups):
        out[str(g)] = float(np.sqrt(err2[:, groups == g].mean()))
    return out, take


def amf_run(pair, space: ParameterSpace, meas: Measurements, cfg: AMFConfig,
            log_prior=None, prior_sampler=None) -> AMFState:
    """Adaptive multi-fidelity posterior sampling.

    Builds prior-sampled initial designs, fits the per-channel two-fidelity
    GPs, samples the surrogate posterior, then for each refinement round
    draws new training points from the current posterior samples
    (deduplicated against all existing inputs), re-evaluates the simulators,
    optionally prunes, refits (warm-started), and re-runs the sampler with
    the previous archive as a prefix. Training-data simulator calls total
    exactly ``n_high_init + max_iterations * batch_high`` high-fidelity and
    ``n_low_init + max_iterations * batch_low`` low-fidelity evaluations.

    ``log_prior``/``prior_sampler`` override the uniform box prior: the
    former adds a density term to the posterior, the latter supplies the
    initial-design draws.
    """
    n_obs = meas.n_obs
    design_rng = substream(cfg.seed, "design")
    diag_rng = substream(cfg.seed, "diag")
    high = CountingSimulator(pair.high)
    low = CountingSimulator(pair.low)
    draw_prior = prior_sampler if prior_sampler is not None else space.sample

    x_low = draw_prior(design_rng, cfg.n_low_init) if cfg.n_low_init else \
        np.empty((0, space.ndim))
    x_high = draw_prior(design_rng, cfg.n_high_init)
    y_low = _evaluate_rows(low, x_low, n_obs)
    y_high = _evaluate_rows(high, x_high, n_obs)

    def build_datasets():
        return [
            FidelityDataset(x_low, y_low[:, k], x_high, y_high[:, k])
            for k in range(n_obs)
        ]

    datasets = build_datasets()
    fit_cfg = replace(cfg.fit, n_threads=cfg.n_threads,
                      seed=substream_seed(cfg.seed, "fit", 0))
    models = fit_multioutput(datasets, fit_cfg)

    history = []
    result = None
    warm = None
    state_args = {}

    def run_sampler(stage, n_iterations):
        sampler_cfg = replace(cfg.sampler, n_iterations=n_iterations,
                              seed=substream_seed(cfg.seed, "mcmc", stage))
        target = make_surrogate_target(models, space, meas, log_prior)
        return run(target, space, sampler_cfg, warm_archive=warm,
                   n_threads=cfg.n_threads)

    def record(stage, res):
        rec = {
            "iteration": stage,
            "n_high": datasets[0].n_high,
            "n_low": datasets[0].n_low,
            "mean_gp_sd": _mean_gp_sd(models, meas, res.samples, diag_rng, cfg.diag_samples),
            "rhat_max": float(np.max(res.report.per_parameter)),
            "accept_rate": res.ensemble.accepted / max(1, res.ensemble.proposed),
        }
        if cfg.diag_rmse_samples > 0:
            rmse, n_eval = _rmse_vs_high(models, pair.high, meas, res.samples,
                                         diag_rng, cfg.diag_rmse_samples)
            rec["rmse"] = rmse
            state_args["diag_eval_count"] = state_args.get("diag_eval_count", 0) + n_eval
        history.append(rec)

    n_iter0 = cfg.sampler.n_iterations \
        if (cfg.inner_iterations is None or cfg.max_iterations == 0) \
        else cfg.inner_iterations
    result = run_sampler(0, n_iter0)
    record(0, result)

    prune_policy = None
    if cfg.prune_max_size is not None:
        prune_policy = PrunePolicy(cfg.prune_max_size,
                                   cfg.prune_min_high or cfg.n_high_init)

    for stage in range(1, cfg.max_iterations + 1):
        pool = result.samples
        existing = np.vstack([x_low, x_high]) if x_low.size else x_high
        new_high = _draw_batch(pool, cfg.batch_high, existing, space, design_rng,
                               draw_prior)
        x_high = np.vstack([x_high, new_high])
        y_high = np.vstack([y_high, _evaluate_rows(high, new_high, n_obs)])
        if cfg.batch_low > 0:
            existing = np.vstack([x_low, x_high])
            new_low = _draw_batch(pool, cfg.batch_low, existing, space, design_rng,
                                  draw_prior)
            x_low = np.vstack([x_low, new_low])
            y_low = np.vstack([y_low, _evaluate_rows(low, new_low, n_obs)])

        datasets = build_datasets()
        if prune_policy is not None:
            datasets = prune_training(datasets, meas, prune_policy)
            x_low = datasets[0].inputs_low
            x_high = datasets[0].inputs_high
            y_low = np.column_stack([ds.outputs_low for ds in datasets]) \
                if datasets[0].n_low else np.empty((0, n_obs))
            y_high = np.column_stack([ds.outputs_high for ds in datasets])

        fit_cfg = replace(cfg.fit, n_starts=cfg.refit_starts, n_threads=cfg.n_threads,
                          seed=substream_seed(cfg.seed, "fit", stage))
        models = fit_multioutput(datasets, fit_cfg,
                                 warm_starts=[m.hyperparams for m in models])

        warm = np.vstack([result.ensemble.archive, result.ensemble.states])
        is_last = stage == cfg.max_iterations
        n_iter = cfg.sampler.n_iterations if (cfg.inner_iterations is None or is_last) \
            else cfg.inner_iterations
        result = run_sampler(stage, n_iter)
        record(stage, result)

    return AMFState(
        datasets=datasets,
        models=models,
        posterior_samples=result.samples,
        archive=result.ensemble.archive,
        eval_counts=(high.count, low.count),
        history=history,
        last_run=result,
        **state_args,
    )


class _NoLowFidelity:
    """Placeholder low-fidelity model for the single-fidelity variant."""

    def __call__(self, m):
        raise SimulatorFailureError("single-fidelity run must not call the low-fidelity model")


@dataclass
class _PairShim:
    high: object
    low: object


def agp_run(high_sim, space: ParameterSpace, meas: Measurements, cfg: AMFConfig,
            log_prior=None, prior_sampler=None) -> AMFState:
    """Single-fidelity variant: the adaptive loop with no low-fidelity design.

    Equivalent to :func:`amf_run` with ``n_low_init = 0`` and
    ``batch_low = 0``; the GP degenerates to a plain single-fidelity GP on
    high-fidelity data.
    """
    cfg = replace(cfg, n_low_init=0, batch_low=0)
    return amf_run(_PairShim(high=high_sim, low=_NoLowFidelity()), space, meas, cfg,
                   log_prior=log_prior, prior_sampler=prior_sampler)
