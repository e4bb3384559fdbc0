"""Benchmark forward-model pairs for two-fidelity inference.

Each problem bundles a cheap low-fidelity simulator and an expensive
high-fidelity one mapping a parameter vector to a fixed set of scalar
outputs, plus the parameter box, the ground-truth parameters, and the
observation noise used to synthesize measurements.

Available problems (``make_problem``):

* ``toy1d`` — one parameter, sinusoidal response with a biased low fidelity.
* ``diffusion1d`` — heat equation with an interior source; fidelities differ
  in mesh and time step.
* ``plume5`` — contaminant release in uniform groundwater flow; infer the
  source location, strength, and on/off times from breakthrough curves.
* ``plume28`` — release into a heterogeneous log-conductivity field; infers
  source location, six release-rate steps, and twenty field coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError
from .groundwater import (
    GridField,
    SourceSpec,
    bilinear_sample,
    coarsen_field,
    darcy_flow,
    kl_field,
    transport,
)
from .inference import Measurements
from .seeding import substream
from .space import ParameterSpace

__all__ = [
    "ForwardModelPair",
    "Problem",
    "make_problem",
    "problem_names",
    "diffusion1d_solve",
    "fidelity_r2",
]


@dataclass(frozen=True)
class ForwardModelPair:
    """A low/high simulator pair with a shared output layout."""

    high: object   # callable: (ndim,) -> (n_outputs,)
    low: object
    output_labels: tuple
    output_groups: tuple

    @property
    def n_outputs(self) -> int:
        return len(self.output_labels)


@dataclass(frozen=True)
class Problem:
    """A named inference benchmark: model pair, parameter box, ground truth.

    ``extra_log_prior`` adds a density term on top of the uniform box prior
    (None means plain box-uniform); ``prior_sampler`` draws from the full
    prior when it is not box-uniform.
    """

    name: str
    pair: ForwardModelPair
    space: ParameterSpace
    true_params: np.ndarray
    noise_sd: np.ndarray
    extra_log_prior: object = None
    prior_sampler: object = None

    def log_prior(self, m) -> float:
        """Density term beyond the box indicator (0.0 for box-uniform)."""
        if self.extra_log_prior is None:
            return 0.0
        return float(self.extra_log_prior(np.asarray(m, dtype=float).reshape(-1)))

    def sample_prior(self, rng, n: int) -> np.ndarray:
        if self.prior_sampler is None:
            return self.space.sample(rng, n)
        return self.prior_sampler(rng, n)

    def measurements(self, seed: int = 0) -> Measurements:
        """Synthetic data: high-fidelity run at the truth plus seeded noise."""
        clean = np.asarray(self.pair.high(self.true_params), dtype=float)
        rng = substream(seed, "noise")
        values = clean + rng.standard_normal(clean.size) * self.noise_sd
        return Measurements(
            values=values,
            noise_sd=self.noise_sd,
            labels=self.pair.output_labels,
            groups=self.pair.output_groups,
        )


# ------------------------------------------------------------------ toy1d

def _build_toy1d(noise_sd: float = 0.1, true_m: float = 2.0) -> Problem:
    def high(m):
        m = np.asarray(m, dtype=float).reshape(-1)
        return np.array([np.sin(m[0])])

    def low(m):
        m = np.asarray(m, dtype=float).reshape(-1)
        return np.array([np.sin(m[0]) - 0.1 * m[0] - 0.1])

    pair = ForwardModelPair(high=high, low=low,
                            output_labels=("y",), output_groups=("y",))
    space = ParameterSpace(names=("m",), lower=(0.0,), upper=(10.0,))
    return Problem(name="toy1d", pair=pair, space=space,
                   true_params=np.array([true_m]),
                   noise_sd=np.full(1, float(noise_sd)))


# ------------------------------------------------------------- diffusion1d

def diffusion1d_solve(kappa: float, strength: float, n_nodes: int, dt: float,
                      sensors, times, span=(0.4, 0.6), u0: float = 0.0) -> np.ndarray:
    """Heat equation u_t = kappa u_xx + strength * 1_span on (0, 1).

    Zero Dirichlet boundaries, implicit Euler in time, second-order central
    differences in space. The source indicator is cell-averaged around each
    node so the spatial order survives a source edge between nodes. Output
    times must be whole multiples of ``dt``; returns values at the sensor
    locations (linear interpolation), time-major.
    """
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    if n_nodes < 3:
        raise ValueError("need at least 3 nodes")
    x = np.linspace(0.0, 1.0, n_nodes)
    h = x[1] - x[0]
    xi = x[1:-1]
    lo = np.clip(span[0], None, span[1])
    w = (np.minimum(xi + 0.5 * h, span[1]) - np.maximum(xi - 0.5 * h, lo)).clip(0.0) / h

    n = xi.size
    r = kappa * dt / h**2
    ab = np.zeros((3, n))
    ab[0, 1:] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r

    u = np.full(n, float(u0))
    out = []
    t = 0.0
    for t_out in times:
        seg = t_out - t
        n_steps = int(round(seg / dt))
        if n_steps < 1 or abs(n_steps * dt - seg) > 1e-9 * max(1.0, abs(t_out)):
            raise ValueError("output times must be increasing multiples of dt")
        for _ in range(n_steps):
            u = solve_banded((1, 1), ab, u + dt * strength * w)
        t = t_out
        full = np.concatenate([[0.0], u, [0.0]])
        out.append(np.interp(np.asarray(sensors, dtype=float), x, full))
    return np.concatenate(out)


def _build_diffusion1d(
    n_nodes_high: int = 101, dt_high: float = 1e-3,
    n_nodes_low: int = 11, dt_low: float = 1e-2,
    sensors=(0.25, 0.5, 0.75), times=(0.05, 0.10, 0.15),
    noise_sd: float = 0.01,
    true_params=(np.log(0.5), 8.0),
) -> Problem:
    sensors = tuple(float(s) for s in sensors)
    times = tuple(float(t) for t in times)

    def high(m):
        m = np.asarray(m, dtype=float).reshape(-1)
        return diffusion1d_solve(np.exp(m[0]), m[1], n_nodes_high, dt_high,
                                 sensors, times)

    def low(m):
        m = np.asarray(m, dtype=float).reshape(-1)
        return diffusion1d_solve(np.exp(m[0]), m[1], n_nodes_low, dt_low,
                                 sensors, times)

    labels = tuple(f"u(x={s:g},t={t:g})" for t in times for s in sensors)
    pair = ForwardModelPair(high=high, low=low, output_labels=labels,
                            output_groups=("u",) * len(labels))
    space = ParameterSpace(names=("log_kappa", "strength"),
                           lower=(-2.0, 0.0), upper=(1.0, 20.0))
    return Problem(name="diffusion1d", pair=pair, space=space,
                   true_params=np.asarray(true_params, dtype=float),
                   noise_sd=np.full(len(labels), float(noise_sd)))


# ----------------------------------------------------------------- plume5

_PLUME_DOMAIN = (20.0, 10.0)


def _build_plume5(
    grid_high=(80, 40), grid_low=(20, 10),
    conductivity: float = 8.0, porosity: float = 0.25,
    alpha_l: float = 0.3, alpha_t: float = 0.03,
    well=(12.0, 5.0), times=(6.0, 8.0, 10.0, 12.0, 14.0),
    noise_sd: float = 0.01,
    true_params=(3.854, 5.999, 11.044, 4.897, 9.075),
) -> Problem:
    times = tuple(float(t) for t in times)
    well = (float(well[0]), float(well[1]))

    def make_sim(nx, ny):
        grid = GridField(nx, ny, *_PLUME_DOMAIN)
        flow = darcy_flow(np.full((nx, ny), float(conductivity)), grid,
                          porosity=porosity)

        def sim(m):
            m = np.asarray(m, dtype=float).reshape(-1)
            x_s, y_s, s_s, t_on, t_off = m
            if t_off <= t_on:
                raise ValueError("source must switch off after it switches on")
            src = SourceSpec(x=x_s, y=y_s, schedule=((t_on, t_off, s_s),))
            res = transport(grid, flow.qx, flow.qy, src, times,
                            porosity=porosity, alpha_l=alpha_l, alpha_t=alpha_t)
            return np.array([bilinear_sample(f, grid, [well])[0]
                             for f in res.fields])

        return sim

    labels = tuple(f"c(x={well[0]:g},y={well[1]:g},t={t:g})" for t in times)
    pair = ForwardModelPair(high=make_sim(*grid_high), low=make_sim(*grid_low),
                            output_labels=labels,
                            output_groups=("conc",) * len(labels))
    space = ParameterSpace(
        names=("x_s", "y_s", "s_s", "t_on", "t_off"),
        lower=(3.0, 3.0, 10.0, 3.0, 9.0),
        upper=(5.0, 7.0, 13.0, 5.0, 11.0),
    )
    return Problem(name="plume5", pair=pair, space=space,
                   true_params=np.asarray(true_params, dtype=float),
                   noise_sd=np.full(len(labels), float(noise_sd)))


# ---------------------------------------------------------------- plume28

_PLUME28_XI_SEED = 8128  # fixed draw defining the synthetic true field


def _plume28_true_xi(n_terms: int) -> np.ndarray:
    rng = substream(_PLUME28_XI_SEED, "plume28-true-xi")
    return np.clip(rng.standard_normal(n_terms), -4.0, 4.0)


def _build_plume28(
    grid_high=(40, 20), grid_low=(20, 10),
    porosity: float = 0.25, alpha_l: float = 0.3, alpha_t: float = 0.03,
    field_variance: float = 0.4, corr_x: float = 10.0, corr_y: float = 5.0,
    field_mean: float = 2.0, n_terms: int = 20,
    wells=((8.0, 3.0), (8.0, 7.0), (12.0, 3.0), (12.0, 7.0), (16.0, 3.0), (16.0, 7.0)),
    times=(4.0, 6.0, 8.0, 10.0, 12.0),
    noise_conc: float = 0.005, noise_head: float = 0.005,
    true_source=(4.033, 5.405, 1.229, 7.628, 4.327, 5.438, 0.293, 6.474),
) -> Problem:
    times = tuple(float(t) for t in times)
    wells = tuple((float(a), float(b)) for (a, b) in wells)
    nxh, nyh = grid_high
    nxl, nyl = grid_low
    if nxh % nxl or nyh % nyl or nxh // nxl != nyh // nyl:
        raise ConfigError("plume28 low grid must divide the high grid evenly")
    factor = nxh // nxl
    g_high = GridField(nxh, nyh, *_PLUME_DOMAIN)
    g_low = GridField(nxl, nyl, *_PLUME_DOMAIN)
    expansion = kl_field(g_high, variance=field_variance, corr_x=corr_x,
                         corr_y=corr_y, mean=field_mean, n_terms=n_terms)

    def make_sim(grid, coarse):
        def sim(m):
            m = np.asarray(m, dtype=float).reshape(-1)
            x_s, y_s = m[0], m[1]
            rates = m[2:8]
            xi = m[8:8 + n_terms]
            log_k = expansion.realize(xi)
            if coarse:
                log_k = coarsen_field(log_k, factor)
            flow = darcy_flow(np.exp(log_k), grid, porosity=porosity)
            schedule = tuple((float(i + 1), float(i + 2), float(r))
                             for i, r in enumerate(rates))
            src = SourceSpec(x=x_s, y=y_s, schedule=schedule)
            res = transport(grid, flow.qx, flow.qy, src, times,
                            porosity=porosity, alpha_l=alpha_l, alpha_t=alpha_t)
            conc = np.concatenate([bilinear_sample(f, grid, wells)
                                   for f in res.fields])
            head = bilinear_sample(flow.head, grid, wells)
            return np.concatenate([conc, head])

        return sim

    conc_labels = tuple(f"c(x={w[0]:g},y={w[1]:g},t={t:g})"
                        for t in times for w in wells)
    head_labels = tuple(f"h(x={w[0]:g},y={w[1]:g})" for w in wells)
    labels = conc_labels + head_labels
    groups = ("conc",) * len(conc_labels) + ("head",) * len(head_labels)
    pair = ForwardModelPair(high=make_sim(g_high, False),
                            low=make_sim(g_low, True),
                            output_labels=labels, output_groups=groups)

    names = (("x_s", "y_s")
             + tuple(f"s{i}" for i in range(1, 7))
             + tuple(f"xi{i:02d}" for i in range(1, n_terms + 1)))
    lower = (3.0, 4.0) + (0.0,) * 6 + (-4.0,) * n_terms
    upper = (5.0, 6.0) + (8.0,) * 6 + (4.0,) * n_terms
    space = ParameterSpace(names=names, lower=lower, upper=upper)
    true_params = np.concatenate([np.asarray(true_source, dtype=float),
                                  _plume28_true_xi(n_terms)])
    noise = np.concatenate([np.full(len(conc_labels), float(noise_conc)),
                            np.full(len(head_labels), float(noise_head))])

    # field coefficients carry a standard-normal prior truncated to the box;
    # the source parameters stay box-uniform
    def xi_log_prior(m):
        xi = np.asarray(m, dtype=float).reshape(-1)[8:8 + n_terms]
        return float(-0.5 * np.sum(xi * xi))

    def xi_prior_sampler(rng, n):
        draws = space.sample(rng, n)
        xi = rng.standard_normal((n, n_terms))
        while True:  # redraw the rare |xi| > 4 tail hits
            bad = np.abs(xi) > 4.0
            if not bad.any():
                break
            xi[bad] = rng.standard_normal(int(bad.sum()))
        draws[:, 8:8 + n_terms] = xi
        return draws

    return Problem(name="plume28", pair=pair, space=space,
                   true_params=true_params, noise_sd=noise,
                   extra_log_prior=xi_log_prior, prior_sampler=xi_prior_sampler)


# ----------------------------------------------------------------- registry

_REGISTRY = {
    "toy1d": _build_toy1d,
    "diffusion1d": _build_diffusion1d,
    "plume5": _build_plume5,
    "plume28": _build_plume28,
}


def problem_names() -> tuple:
    return tuple(sorted(_REGISTRY))


def make_problem(name: str, **overrides) -> Problem:
    """Build a benchmark problem by name; keyword overrides reach the builder."""
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown problem {name!r}; available: {', '.join(problem_names())}"
        ) from None
    try:
        return builder(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad override for problem {name!r}: {exc}") from None


def fidelity_r2(pair: ForwardModelPair, space: ParameterSpace,
                n_draws: int = 50, seed: int = 0) -> float:
    """Pooled R^2 of the low-fidelity outputs against high fidelity.

    Evaluates both models at ``n_draws`` box-uniform parameter draws and
    pools all outputs: 1 - SS_res / SS_tot around the high-fidelity mean.
    """
    rng = substream(seed, "fidelity-r2")
    draws = space.sample(rng, n_draws)
    hi = np.array([pair.high(m) for m in draws]).ravel()
    lo = np.array([pair.low(m) for m in draws]).ravel()
    ss_res = float(np.sum((hi - lo) ** 2))
    ss_tot = float(np.sum((hi - hi.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot
