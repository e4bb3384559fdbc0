"""Archive-based differential-evolution MCMC on a box-constrained space.

Multiple chains evolve against a growing thinned archive of past states.
Proposals are either parallel-direction jumps (scaled sums of archive-row
differences on a random crossover subspace) or snooker jumps (a scaled
projection of an archive difference onto the line through the current state
and an archive anchor, with the usual volume correction). Every random draw
for chain i comes from a dedicated stream keyed by (seed, i), so serial and
thread-parallel execution produce bitwise-identical chains.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientArchiveError, InvalidTargetError
from .seeding import substream
from .space import ParameterSpace

_log = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "ChainEnsemble",
    "RhatReport",
    "RunResult",
    "RHAT_THRESHOLD",
    "init_ensemble",
    "propose_parallel_direction",
    "propose_snooker",
    "step",
    "run",
    "rhat",
    "rhat_series",
]

RHAT_THRESHOLD = 1.2


@dataclass
class SamplerConfig:
    """Sampler settings.

    ``n_pairs`` is the number of archive difference pairs summed per
    parallel-direction jump; the jump scale defaults to
    ``2.38 / sqrt(2 * n_pairs * d')`` with d' the crossover-subspace size,
    replaced by 1 with probability ``unit_jump_prob`` (mode-hopping moves)
    unless ``jump_scale_override`` pins it. ``perturb_scale`` bounds the
    multiplicative jitter e ~ U(-a, a) and ``jitter_sd`` the additive
    N(0, sd^2) noise on a jump.
    """

    n_chains: int = 4
    n_iterations: int = 2000
    thin_every: int = 10
    n_pairs: int = 1
    snooker_prob: float = 0.1
    crossover_probs: tuple = (1.0 / 3.0, 2.0 / 3.0, 1.0)
    jump_scale_override: float | None = None
    unit_jump_prob: float = 0.2
    perturb_scale: float = 0.05
    jitter_sd: float = 1e-6
    snooker_gamma: tuple = (1.2, 2.2)
    burn_in_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1 or self.n_iterations < 0:
            raise ValueError("n_chains must be >= 1 and n_iterations >= 0")
        if self.thin_every < 1 or self.n_pairs < 1:
            raise ValueError("thin_every and n_pairs must be >= 1")
        if not 0.0 <= self.snooker_prob <= 1.0:
            raise ValueError("snooker_prob must lie in [0, 1]")
        if not self.crossover_probs or any(not 0.0 < c <= 1.0 for c in self.crossover_probs):
            raise ValueError("crossover probabilities must lie in (0, 1]")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if self.jump_scale_override is not None and self.jump_scale_override <= 0.0:
            raise ValueError("jump_scale_override must be positive")


@dataclass
class ChainEnsemble:
    """Mutable sampler state: chain positions, their log-posteriors, archive."""

    states: np.ndarray
    log_posts: np.ndarray
    archive: np.ndarray
    iteration: int
    rngs: list
    n_seed_rows: int
    nan_events: int = 0
    accepted: int = 0
    proposed: int = 0

    @property
    def n_chains(self) -> int:
        return self.states.shape[0]

    @property
    def ndim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class RhatReport:
    """Per-parameter potential-scale-reduction diagnostics.

    ``per_parameter`` holds the final-window value; ``degenerate`` marks
    parameters where the within-chain variance vanished (value +inf).
    """

    per_parameter: np.ndarray
    converged: bool
    degenerate: np.ndarray
    threshold: float = RHAT_THRESHOLD


@dataclass
class RunResult:
    """Return bundle of :func:`run`; unpacks as (samples, ensemble, report)."""

    samples: np.ndarray
    ensemble: ChainEnsemble
    report: RhatReport
    history_states: np.ndarray      # (n_iterations, n_chains, ndim)
    history_log_posts: np.ndarray   # (n_iterations, n_chains)
    n_burn: int

    def __iter__(self):
        return iter((self.samples, self.ensemble, self.report))


def _seed_row_count(ndim: int, cfg: SamplerConfig) -> int:
    return max(10 * ndim, 2 * cfg.n_pairs + 1)


def init_ensemble(space: ParameterSpace, target, cfg: SamplerConfig,
                  warm_archive: np.ndarray | None = None) -> ChainEnsemble:
    """Fresh ensemble: prior-seeded archive, prior-drawn (or warm) states.

    The archive starts as [warm rows; fresh prior seed rows] so a previous
    archive is always a prefix of the new one. With a warm archive the chains
    resume from its last ``n_chains`` rows; otherwise states are prior draws.

    Raises
    ------
    InvalidTargetError
        If the target returns NaN at an initial state.
    """
    init_rng = substream(cfg.seed, "init")
    seed_rows = space.sample(init_rng, _seed_row_count(space.ndim, cfg))
    if warm_archive is not None and len(warm_archive):
        warm = np.atleast_2d(np.asarray(warm_archive, dtype=float))
        if warm.shape[1] != space.ndim:
            raise ValueError("warm archive dimension does not match the space")
        archive = np.vstack([warm, seed_rows])
        if warm.shape[0] >= cfg.n_chains:
            states = warm[-cfg.n_chains:].copy()
        else:
            extra = space.sample(init_rng, cfg.n_chains - warm.shape[0])
            states = np.vstack([warm, extra])
    else:
        archive = seed_rows
        states = space.sample(init_rng, cfg.n_chains)

    log_posts = np.empty(cfg.n_chains)
    for i in range(cfg.n_chains):
        lp = float(target(states[i]))
        if np.isnan(lp):
            raise InvalidTargetError(f"target returned NaN at initial state of chain {i}")
        log_posts[i] = lp
    rngs = [substream(cfg.seed, "chain", i) for i in range(cfg.n_chains)]
    return ChainEnsemble(states=states, log_posts=log_posts, archive=archive,
                         iteration=0, rngs=rngs, n_seed_rows=archive.shape[0])


def propose_parallel_direction(state: np.ndarray, archive: np.ndarray,
                               space: ParameterSpace, cfg: SamplerConfig,
                               rng: np.random.Generator) -> np.ndarray:
    """Differential-evolution jump on a random crossover subspace.

    Sums ``n_pairs`` archive-row differences, scales by
    ``2.38/sqrt(2*n_pairs*d')`` (or 1 with probability ``unit_jump_prob``,
    or the configured override), perturbs multiplicatively and additively,
    and reflects the result back into the box.
    """
    n_rows = archive.shape[0]
    if n_rows < 2 * cfg.n_pairs:
        raise InsufficientArchiveError(
            f"parallel-direction jump needs {2 * cfg.n_pairs} archive rows, have {n_rows}"
        )
    ndim = state.size
    cr = cfg.crossover_probs[int(rng.integers(len(cfg.crossover_probs)))]
    selected = rng.random(ndim) < cr
    if not selected.any():
        selected[int(rng.integers(ndim))] = True
    d_sub = int(selected.sum())
    if cfg.jump_scale_override is not None:
        gamma = cfg.jump_scale_override
    elif rng.random() < cfg.unit_jump_prob:
        gamma = 1.0
    else:
        gamma = 2.38 / np.sqrt(2.0 * cfg.n_pairs * d_sub)
    idx = rng.choice(n_rows, size=2 * cfg.n_pairs, replace=False)
    diff = archive[idx[: cfg.n_pairs]].sum(axis=0) - archive[idx[cfg.n_pairs:]].sum(axis=0)
    e = rng.uniform(-cfg.perturb_scale, cfg.perturb_scale, size=ndim)
    eps = rng.normal(0.0, cfg.jitter_sd, size=ndim)
    proposal = state.copy()
    proposal[selected] = state[selected] + (1.0 + e[selected]) * gamma * diff[selected] \
        + eps[selected]
    return space.reflect(proposal)


def propose_snooker(state: np.ndarray, archive: np.ndarray, space: ParameterSpace,
                    cfg: SamplerConfig, rng: np.random.Generator):
    """Snooker jump along the line through the state and an archive anchor.

    Projects an archive-row difference onto the anchor line, scales by
    gamma ~ U(snooker_gamma), reflects into the box, and returns
    (proposal, log_correction) with the correction
    ``(ndim - 1) * log(|proposal - z| / |state - z|)``. A degenerate anchor
    (coincident with the state) falls back to a parallel-direction jump with
    zero correction.
    """
    n_rows = archive.shape[0]
    if n_rows < 3:
        raise InsufficientArchiveError(f"snooker jump needs 3 archive rows, have {n_rows}")
    idx = rng.choice(n_rows, size=3, replace=False)
    z, za, zb = archive[idx[0]], archive[idx[1]], archive[idx[2]]
    line = state - z
    norm = float(np.linalg.norm(line))
    if norm < 1e-12:
        return propose_parallel_direction(state, archive, space, cfg, rng), 0.0
    unit = line / norm
    gamma_s = rng.uniform(cfg.snooker_gamma[0], cfg.snooker_gamma[1])
    proj = float((za - zb) @ unit) * unit
    proposal = space.reflect(state + gamma_s * proj)
    dist_new = float(np.linalg.norm(proposal - z))
    ndim = state.size
    if dist_new == 0.0:
        return proposal, -np.inf
    correction = (ndim - 1) * (np.log(dist_new) - np.log(norm))
    return proposal, float(correction)


def _propose_for_chain(ensemble: ChainEnsemble, i: int, space: ParameterSpace,
                       cfg: SamplerConfig):
    """Draws for chain i in fixed order: move type, proposal internals, accept u."""
    rng = ensemble.rngs[i]
    use_snooker = rng.random() < cfg.snooker_prob
    if use_snooker:
        proposal, corr = propose_snooker(ensemble.states[i], ensemble.archive,
                                         space, cfg, rng)
    else:
        proposal = propose_parallel_direction(ensemble.states[i], ensemble.archive,
                                              space, cfg, rng)
        corr = 0.0
    u = rng.random()
    log_u = np.log(u) if u > 0.0 else -np.inf
    return proposal, corr, log_u


def step(ensemble: ChainEnsemble, target, space: ParameterSpace,
         cfg: SamplerConfig, n_threads: int = 1) -> ChainEnsemble:
    """Advance every chain one iteration (proposal, evaluation, accept/reject).

    Proposal randomness is drawn chain-by-chain from the per-chain streams
    before any evaluation, so target evaluations may run concurrently
    (``n_threads > 1``) without changing the result. The archive gains the
    current states every ``thin_every`` iterations.
    """
    props = [_propose_for_chain(ensemble, i, space, cfg) for i in range(ensemble.n_chains)]

    def eval_target(i: int) -> float:
        return float(target(props[i][0]))

    if n_threads > 1 and ensemble.n_chains > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            lps = list(pool.map(eval_target, range(ensemble.n_chains)))
    else:
        lps = [eval_target(i) for i in range(ensemble.n_chains)]

    for i, (proposal, corr, log_u) in enumerate(props):
        lp_prop = lps[i]
        ensemble.proposed += 1
        if np.isnan(lp_prop):
            ensemble.nan_events += 1
            _log.debug("chain %d: target returned NaN at %s; proposal rejected",
                       i, np.array2string(proposal, precision=4))
            continue
        lp_cur = ensemble.log_posts[i]
        delta = lp_prop - lp_cur + corr
        if np.isneginf(lp_cur) and lp_prop > -np.inf:
            accept = True
        elif np.isnan(delta):
            accept = False
        else:
            accept = log_u < delta
        if accept:
            ensemble.states[i] = proposal
            ensemble.log_posts[i] = lp_prop
            ensemble.accepted += 1

    ensemble.iteration += 1
    if ensemble.iteration % cfg.thin_every == 0:
        ensemble.archive = np.vstack([ensemble.archive, ensemble.states])
    return ensemble


def run(target, space: ParameterSpace, cfg: SamplerConfig,
        warm_archive: np.ndarray | None = None, n_threads: int = 1) -> RunResult:
    """Initialize and advance an ensemble for ``cfg.n_iterations`` iterations.

    Returns a :class:`RunResult` whose ``samples`` are the post-burn-in
    states of every chain at every iteration, ordered (iteration, chain).
    """
    ens = init_ensemble(space, target, cfg, warm_archive=warm_archive)
    n_iter = cfg.n_iterations
    hist = np.empty((n_iter, ens.n_chains, ens.ndim))
    hist_lp = np.empty((n_iter, ens.n_chains))
    for t in range(n_iter):
        step(ens, target, space, cfg, n_threads=n_threads)
        hist[t] = ens.states
        hist_lp[t] = ens.log_posts
    n_burn = int(np.floor(cfg.burn_in_fraction * n_iter))
    samples = hist[n_burn:].reshape(-1, ens.ndim).copy()
    chains_first = hist.transpose(1, 0, 2)
    if n_iter >= 4:
        report = rhat(chains_first)
    else:
        report = RhatReport(per_parameter=np.full(ens.ndim, np.nan), converged=False,
                            degenerate=np.zeros(ens.ndim, dtype=bool))
    return RunResult(samples=samples, ensemble=ens, report=report,
                     history_states=hist, history_log_posts=hist_lp, n_burn=n_burn)


# ---------------------------------------------------------------- diagnostics

def _psrf(seqs: np.ndarray) -> float:
    """Potential scale reduction over sequences of shape (m, n)."""
    m, n = seqs.shape
    means = seqs.mean(axis=1)
    B = n / (m - 1) * np.sum((means - means.mean()) ** 2)
    W = float(np.mean(seqs.var(axis=1, ddof=1)))
    if W == 0.0:
        return np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def rhat(chains) -> RhatReport:
    """Split-half potential scale reduction on the retained second half.

    ``chains`` has shape (n_chains, n_kept, ndim). Each chain's second half
    is split into two sequences; the classic PSRF is computed per parameter
    over the resulting 2*n_chains sequences. A vanished within-chain variance
    yields +inf and a degenerate flag for that parameter.
    """
    c = np.asarray(chains, dtype=float)
    if c.ndim == 2:
        c = c[:, :, None]
    m, n, d = c.shape
    if m < 2 or n < 4:
        raise ValueError("rhat needs at least 2 chains and 4 kept iterations")
    kept = c[:, n // 2:, :]
    half = kept.shape[1] // 2
    seqs = np.concatenate([kept[:, :half, :], kept[:, half : 2 * half, :]], axis=0)
    values = np.array([_psrf(seqs[:, :, j]) for j in range(d)])
    degenerate = ~np.isfinite(values)
    converged = bool(np.all(values < RHAT_THRESHOLD))
    return RhatReport(per_parameter=values, converged=converged, degenerate=degenerate)


def rhat_series(chains, n_windows: int = 20):
    """Diagnostic trace: the rhat statistic over growing chain prefixes.

    Returns (lengths, values) with values of shape (n_windows, ndim).
    """
    c = np.asarray(chains, dtype=float)
    if c.ndim == 2:
        c = c[:, :, None]
    n = c.shape[1]
    lengths = np.unique(np.linspace(max(4, n // n_windows), n, n_windows).astype(int))
    values = np.vstack([rhat(c[:, :k, :]).per_parameter for k in lengths])
    return lengths, values
