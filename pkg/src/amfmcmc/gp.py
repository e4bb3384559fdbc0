"""Two-fidelity auto-regressive Gaussian-process regression.

The high-fidelity response is modeled as ``rho * u_low + delta`` where
``u_low`` and ``delta`` are independent zero-mean GPs with squared-exponential
kernels. Training couples low- and high-fidelity observations through the
joint covariance of that construction; hyperparameters (two kernels, the
scale factor rho and per-fidelity noise levels) are fitted by multi-start
quasi-Newton minimization of the negative log marginal likelihood with
analytic gradients. Setting ``n_low = 0`` degenerates to a plain
single-fidelity GP on the high-fidelity data alone.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import InvalidDataError, NumericalDegeneracyError
from .seeding import substream_seed

_log = logging.getLogger(__name__)

__all__ = [
    "KernelParams",
    "MFHyperparams",
    "FidelityDataset",
    "GPPrediction",
    "FitConfig",
    "MultiFidelityGP",
    "kernel_se",
    "assemble_joint_covariance",
    "nlml",
    "fit",
    "predict",
    "predict_batch",
    "fit_multioutput",
    "multilevel_covariance",
    "multilevel_nlml",
    "multilevel_predict",
]

_DUP_RTOL = 1e-10


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel ``variance * exp(-0.5 * sum_n (dx_n / l_n)^2)``.

    Parameters
    ----------
    variance : float
        Signal variance, > 0. Equals the kernel value at zero distance.
    length_scales : array_like
        Per-dimension length scales ``l_n``, all > 0.
    """

    variance: float
    length_scales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "length_scales", ls)
        if not np.isfinite(self.variance) or self.variance <= 0.0:
            raise ValueError("kernel variance must be positive and finite")
        if ls.ndim != 1 or not np.isfinite(ls).all() or np.any(ls <= 0.0):
            raise ValueError("length scales must be a 1-d array of positive finite reals")

    @property
    def ndim(self) -> int:
        return self.length_scales.size


@dataclass(frozen=True)
class MFHyperparams:
    """Hyperparameters of the two-fidelity model.

    ``kernel_low`` governs the low-fidelity GP, ``kernel_delta`` the additive
    discrepancy, ``rho`` the linear scale between fidelities, and the noise
    fields are per-fidelity observation-noise standard deviations. With no
    low-fidelity data, ``kernel_low``, ``rho`` and ``noise_low`` are inert.
    """

    kernel_low: KernelParams
    kernel_delta: KernelParams
    rho: float
    noise_low: float
    noise_high: float

    def __post_init__(self):
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "noise_low", float(self.noise_low))
        object.__setattr__(self, "noise_high", float(self.noise_high))
        if not np.isfinite(self.rho):
            raise ValueError("rho must be finite")
        if self.noise_low < 0.0 or self.noise_high < 0.0:
            raise ValueError("noise standard deviations must be nonnegative")
        if self.kernel_low.ndim != self.kernel_delta.ndim:
            raise ValueError("both kernels must share the input dimension")


def _as_input_matrix(x, ndim=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if ndim in (None, 1) else x.reshape(1, -1)
    if x.ndim != 2:
        raise ValueError("inputs must be a 2-d array of shape (n, ndim)")
    return x


def _check_duplicate_rows(x: np.ndarray, label: str) -> None:
    n = x.shape[0]
    if n < 2:
        return
    diff = np.abs(x[:, None, :] - x[None, :, :]).max(axis=2)
    rowmag = np.abs(x).max(axis=1) if x.shape[1] else np.zeros(n)
    scale = np.maximum(1.0, np.maximum(rowmag[:, None], rowmag[None, :]))
    dup = diff <= _DUP_RTOL * scale
    iu = np.triu_indices(n, k=1)
    hits = np.argwhere(dup[iu])
    if hits.size:
        i, j = iu[0][hits[0, 0]], iu[1][hits[0, 0]]
        raise InvalidDataError(
            f"{label} inputs contain duplicated rows {i} and {j} "
            f"(within relative distance {_DUP_RTOL:g})"
        )


@dataclass(frozen=True)
class FidelityDataset:
    """Aligned low/high-fidelity training data for one scalar output channel.

    ``inputs_low`` may be empty (``n_low = 0``); at least one high-fidelity
    row is required. Duplicated input rows within a fidelity are rejected:
    they make the joint covariance numerically singular without adding
    information.
    """

    inputs_low: np.ndarray
    outputs_low: np.ndarray
    inputs_high: np.ndarray
    outputs_high: np.ndarray

    def __post_init__(self):
        xh = _as_input_matrix(self.inputs_high)
        xl = np.asarray(self.inputs_low, dtype=float)
        if xl.size == 0:
            xl = np.empty((0, xh.shape[1]))
        else:
            xl = _as_input_matrix(xl, ndim=xh.shape[1])
        yl = np.asarray(self.outputs_low, dtype=float).reshape(-1)
        yh = np.asarray(self.outputs_high, dtype=float).reshape(-1)
        if xh.shape[0] < 1:
            raise InvalidDataError("at least one high-fidelity row is required")
        if xl.shape[1] != xh.shape[1]:
            raise InvalidDataError("low- and high-fidelity inputs must share the dimension")
        if yl.size != xl.shape[0] or yh.size != xh.shape[0]:
            raise InvalidDataError("outputs must align one-to-one with input rows")
        if not (np.isfinite(xl).all() and np.isfinite(xh).all()):
            raise InvalidDataError("inputs must be finite")
        if not (np.isfinite(yl).all() and np.isfinite(yh).all()):
            raise InvalidDataError("outputs must be finite")
        _check_duplicate_rows(xl, "low-fidelity")
        _check_duplicate_rows(xh, "high-fidelity")
        for arr in (xl, yl, xh, yh):
            arr.setflags(write=False)
        object.__setattr__(self, "inputs_low", xl)
        object.__setattr__(self, "outputs_low", yl)
        object.__setattr__(self, "inputs_high", xh)
        object.__setattr__(self, "outputs_high", yh)

    @classmethod
    def single_fidelity(cls, inputs, outputs) -> "FidelityDataset":
        """Dataset with high-fidelity rows only."""
        x = _as_input_matrix(inputs)
        return cls(np.empty((0, x.shape[1])), np.empty(0), x, outputs)

    @property
    def n_low(self) -> int:
        return self.inputs_low.shape[0]

    @property
    def n_high(self) -> int:
        return self.inputs_high.shape[0]

    @property
    def ndim(self) -> int:
        return self.inputs_high.shape[1]

    @property
    def outputs_joint(self) -> np.ndarray:
        return np.concatenate([self.outputs_low, self.outputs_high])


@dataclass(frozen=True)
class GPPrediction:
    """Posterior mean and (noise-free) variance at one query point."""

    mean: float
    variance: float
    extrapolated: bool = False


# ---------------------------------------------------------------- kernels

def kernel_se(x, y, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix of the squared-exponential kernel.

    Parameters
    ----------
    x, y : array_like
        Point sets of shape (n, ndim) and (m, ndim).
    params : KernelParams

    Returns
    -------
    ndarray of shape (n, m)
    """
    d = params.ndim
    x = _as_input_matrix(x, ndim=d)
    y = _as_input_matrix(y, ndim=d)
    if x.shape[1] != d or y.shape[1] != d:
        raise ValueError("input dimension does not match the kernel length scales")
    z = x[:, None, :] - y[None, :, :]
    q = np.einsum("ijn,n->ij", z * z, 1.0 / params.length_scales**2)
    return params.variance * np.exp(-0.5 * q)


def assemble_joint_covariance(data: FidelityDataset, hyper: MFHyperparams) -> np.ndarray:
    """Joint covariance over [low-fidelity rows; high-fidelity rows].

    Block layout (noise variances on the diagonals)::

        [[ k1(L,L) + s_L^2 I      rho k1(L,H)                     ]
         [ rho k1(H,L)            rho^2 k1(H,H) + k2(H,H) + s_H^2 I ]]
    """
    if hyper.kernel_low.ndim != data.ndim:
        raise ValueError("hyperparameter dimension does not match the data")
    xh = data.inputs_high
    k_hh = (
        hyper.rho**2 * kernel_se(xh, xh, hyper.kernel_low)
        + kernel_se(xh, xh, hyper.kernel_delta)
        + hyper.noise_high**2 * np.eye(data.n_high)
    )
    if data.n_low == 0:
        return k_hh
    xl = data.inputs_low
    k_ll = kernel_se(xl, xl, hyper.kernel_low) + hyper.noise_low**2 * np.eye(data.n_low)
    k_lh = hyper.rho * kernel_se(xl, xh, hyper.kernel_low)
    return np.block([[k_ll, k_lh], [k_lh.T, k_hh]])


def _cholesky_with_jitter(K: np.ndarray, context: str = "") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter.

    Tries the matrix as-is, then adds jitter starting at 1e-10 x mean
    diagonal, escalating by powers of ten up to 1e-4 x mean diagonal.
    """
    mean_diag = float(np.mean(np.diag(K)))
    eye = np.eye(K.shape[0])
    for expo in [None] + list(range(-10, -3)):
        jit = 0.0 if expo is None else mean_diag * 10.0**expo
        try:
            L = np.linalg.cholesky(K if jit == 0.0 else K + jit * eye)
        except np.linalg.LinAlgError:
            continue
        if jit > 0.0:
            _log.debug("cholesky needed jitter %.3e %s", jit, context)
        return L, jit
    raise NumericalDegeneracyError(
        f"Cholesky factorization failed up to jitter 1e-4 x mean diagonal ({context})"
    )


def nlml(data: FidelityDataset, hyper: MFHyperparams) -> float:
    """Negative log marginal likelihood of the joint two-fidelity model.

    ``0.5 d^T K^{-1} d + 0.5 log|K| + (n/2) log 2pi`` with K the joint
    covariance; evaluated through a (jitter-guarded) Cholesky factorization.
    """
    K = assemble_joint_covariance(data, hyper)
    d = data.outputs_joint
    L, _ = _cholesky_with_jitter(K, f"nlml, n={d.size}, hyper={hyper}")
    alpha = cho_solve((L, True), d, check_finite=False)
    return float(
        0.5 * d @ alpha + np.log(np.diag(L)).sum() + 0.5 * d.size * np.log(2.0 * np.pi)
    )


# ---------------------------------------------------------------- nlml gradient

def _nlml_value_and_grad(data: FidelityDataset, hyper: MFHyperparams):
    """NLML and its gradient in the optimizer parameterization.

    Gradient order matches :func:`_pack_theta`: log-variance and log-length
    scales of each kernel, then rho (linear), then log noise sds. Uses the
    identity dNL/dt = 0.5 * sum((K^{-1} - aa^T) o dK/dt) with a = K^{-1} d.
    """
    two = data.n_low > 0
    xl, xh = data.inputs_low, data.inputs_high
    nl = data.n_low
    rho = hyper.rho
    k1 = hyper.kernel_low
    k2 = hyper.kernel_delta

    k2_hh = kernel_se(xh, xh, k2)
    if two:
        k1_ll = kernel_se(xl, xl, k1)
        k1_lh = kernel_se(xl, xh, k1)
        k1_hh = kernel_se(xh, xh, k1)
        K = np.block(
            [
                [k1_ll + hyper.noise_low**2 * np.eye(nl), rho * k1_lh],
                [rho * k1_lh.T, rho**2 * k1_hh + k2_hh + hyper.noise_high**2 * np.eye(data.n_high)],
            ]
        )
    else:
        k1_hh = None
        K = k2_hh + hyper.noise_high**2 * np.eye(data.n_high)

    d = data.outputs_joint
    L, _ = _cholesky_with_jitter(K, f"nlml grad, n={d.size}")
    alpha = cho_solve((L, True), d, check_finite=False)
    value = float(
        0.5 * d @ alpha + np.log(np.diag(L)).sum() + 0.5 * d.size * np.log(2.0 * np.pi)
    )

    A = cho_solve((L, True), np.eye(d.size), check_finite=False) - np.outer(alpha, alpha)
    A_hh = A[nl:, nl:]

    def sq_scaled(x, y, n, ell):
        dx = x[:, n, None] - y[None, :, n]
        return (dx * dx) / ell[n] ** 2

    grads = []
    if two:
        A_ll = A[:nl, :nl]
        A_lh = A[:nl, nl:]
        p_ll = A_ll * k1_ll
        p_lh = A_lh * k1_lh
        p_hh1 = A_hh * k1_hh
        # log variance of the low kernel
        grads.append(0.5 * (p_ll.sum() + 2.0 * rho * p_lh.sum() + rho**2 * p_hh1.sum()))
        for n in range(data.ndim):
            t = (
                (p_ll * sq_scaled(xl, xl, n, k1.length_scales)).sum()
                + 2.0 * rho * (p_lh * sq_scaled(xl, xh, n, k1.length_scales)).sum()
                + rho**2 * (p_hh1 * sq_scaled(xh, xh, n, k1.length_scales)).sum()
            )
            grads.append(0.5 * t)
    p_hh2 = A_hh * k2_hh
    grads.append(0.5 * p_hh2.sum())
    for n in range(data.ndim):
        grads.append(0.5 * (p_hh2 * sq_scaled(xh, xh, n, k2.length_scales)).sum())
    if two:
        grads.append(0.5 * (2.0 * p_lh.sum() + 2.0 * rho * p_hh1.sum()))
        grads.append(hyper.noise_low**2 * np.trace(A[:nl, :nl]))
    grads.append(hyper.noise_high**2 * np.trace(A_hh))
    return value, np.array(grads)


def _pack_theta(hyper: MFHyperparams, two_level: bool) -> np.ndarray:
    def safe_log(v):
        return np.log(np.maximum(v, 1e-300))

    parts = []
    if two_level:
        parts.append([safe_log(hyper.kernel_low.variance)])
        parts.append(safe_log(hyper.kernel_low.length_scales))
    parts.append([safe_log(hyper.kernel_delta.variance)])
    parts.append(safe_log(hyper.kernel_delta.length_scales))
    if two_level:
        parts.append([hyper.rho, safe_log(hyper.noise_low)])
    parts.append([safe_log(hyper.noise_high)])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _unpack_theta(theta: np.ndarray, ndim: int, two_level: bool) -> MFHyperparams:
    t = np.asarray(theta, dtype=float)
    if two_level:
        k1 = KernelParams(np.exp(t[0]), np.exp(t[1 : 1 + ndim]))
        off = 1 + ndim
        k2 = KernelParams(np.exp(t[off]), np.exp(t[off + 1 : off + 1 + ndim]))
        rho = t[off + 1 + ndim]
        noise_low = np.exp(t[off + 2 + ndim])
        noise_high = np.exp(t[off + 3 + ndim])
        return MFHyperparams(k1, k2, rho, noise_low, noise_high)
    k2 = KernelParams(np.exp(t[0]), np.exp(t[1 : 1 + ndim]))
    k1 = KernelParams(1.0, np.ones(ndim))
    return MFHyperparams(k1, k2, 0.0, 0.0, np.exp(t[1 + ndim]))


# ---------------------------------------------------------------- model

class MultiFidelityGP:
    """Fitted (or directly constructed) two-fidelity GP for one output channel.

    Attributes
    ----------
    data : FidelityDataset
        Training data in original output units.
    hyperparams : MFHyperparams
        Hyperparameters in standardized output units (identity transform when
        built with ``standardize=False``).
    out_mean, out_scale : float
        Affine output transform applied before fitting and undone at
        prediction: ``z = (y - out_mean) / out_scale``.
    fit_info : dict
        Populated by :func:`fit`: start/final NLML values and jitter used.
    """

    def __init__(self, data: FidelityDataset, hyperparams: MFHyperparams,
                 out_mean: float = 0.0, out_scale: float = 1.0):
        if out_scale <= 0.0 or not np.isfinite(out_scale) or not np.isfinite(out_mean):
            raise ValueError("output transform must be finite with positive scale")
        self.data = data
        self.hyperparams = hyperparams
        self.out_mean = float(out_mean)
        self.out_scale = float(out_scale)
        self.fit_info: dict = {}

        z = (data.outputs_joint - self.out_mean) / self.out_scale
        K = assemble_joint_covariance(data, hyperparams)
        self._L, self.jitter = _cholesky_with_jitter(
            K, f"model build, n_low={data.n_low}, n_high={data.n_high}"
        )
        self._alpha = cho_solve((self._L, True), z, check_finite=False)
        self._z = z
        inputs = (
            np.vstack([data.inputs_low, data.inputs_high]) if data.n_low else data.inputs_high
        )
        self._box_lo = inputs.min(axis=0)
        self._box_hi = inputs.max(axis=0)
        self._prior_var = hyperparams.rho**2 * hyperparams.kernel_low.variance \
            + hyperparams.kernel_delta.variance

    @classmethod
    def build(cls, data: FidelityDataset, hyperparams: MFHyperparams,
              standardize: bool = False) -> "MultiFidelityGP":
        """Construct without fitting; optionally standardize outputs first."""
        if not standardize:
            return cls(data, hyperparams)
        mean, scale = _output_transform(data)
        return cls(data, hyperparams, mean, scale)

    @property
    def nlml_value(self) -> float:
        """NLML of the stored (standardized) data under the stored hyperparameters."""
        return float(
            0.5 * self._z @ self._alpha
            + np.log(np.diag(self._L)).sum()
            + 0.5 * self._z.size * np.log(2.0 * np.pi)
        )

    def _cross_vector(self, queries: np.ndarray) -> np.ndarray:
        # marginal HF covariance rho^2 k1 + k2 applies with or without LF rows;
        # a single-fidelity fit sets rho = 0, which silences the k1 term
        h = self.hyperparams
        d = self.data
        a_high = kernel_se(queries, d.inputs_high, h.kernel_delta) \
            + h.rho**2 * kernel_se(queries, d.inputs_high, h.kernel_low)
        if d.n_low == 0:
            return a_high
        a_low = h.rho * kernel_se(queries, d.inputs_low, h.kernel_low)
        return np.hstack([a_low, a_high])

    def _predict_arrays(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = self._cross_vector(queries)
        mean_z = a @ self._alpha
        v = solve_triangular(self._L, a.T, lower=True, check_finite=False)
        var_z = self._prior_var - np.einsum("ij,ij->j", v, v)
        neg = var_z < 0.0
        if np.any(neg):
            _log.debug("clamped %d negative predictive variances (min %.3e)",
                       int(neg.sum()), float(var_z.min()))
            var_z = np.where(neg, 0.0, var_z)
        return self.out_mean + self.out_scale * mean_z, self.out_scale**2 * var_z

    def predict(self, query) -> GPPrediction:
        """Posterior mean/variance of the high-fidelity response at one point."""
        q = np.asarray(query, dtype=float).reshape(1, -1)
        if q.shape[1] != self.data.ndim:
            raise ValueError("query dimension does not match the training data")
        mean, var = self._predict_arrays(q)
        tol = 1e-12 * (1.0 + np.abs(self._box_lo) + np.abs(self._box_hi))
        extrap = bool(np.any(q[0] < self._box_lo - tol) or np.any(q[0] > self._box_hi + tol))
        return GPPrediction(float(mean[0]), float(var[0]), extrapolated=extrap)

    def predict_batch(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`predict`; returns (means, variances) arrays."""
        q = np.asarray(queries, dtype=float)
        if q.ndim == 1:
            q = q.reshape(-1, 1) if self.data.ndim == 1 else q.reshape(1, -1)
        if q.shape[1] != self.data.ndim:
            raise ValueError("query dimension does not match the training data")
        return self._predict_arrays(q)


def predict(model: MultiFidelityGP, query) -> GPPrediction:
    return model.predict(query)


def predict_batch(model: MultiFidelityGP, queries) -> tuple[np.ndarray, np.ndarray]:
    return model.predict_batch(queries)


# ---------------------------------------------------------------- fitting

@dataclass
class FitConfig:
    """Multi-start NLML optimization settings.

    ``n_starts`` counts every start point: a data-driven heuristic, an
    optional warm start (listed first when present), and log-uniform random
    perturbations of the heuristic in [1e-2, 1e2] for the remainder.
    """

    n_starts: int = 8
    seed: int = 0
    max_iter: int = 100
    n_threads: int = 1
    warm_start: MFHyperparams | None = None


def _output_transform(data: FidelityDataset) -> tuple[float, float]:
    y = data.outputs_joint
    mean = float(y.mean())
    scale = float(y.std())
    if not np.isfinite(scale) or scale < 1e-12:
        scale = 1.0
    return mean, scale


def _heuristic_start(data: FidelityDataset, two_level: bool) -> MFHyperparams:
    # standardized outputs: unit variance, unit scale
    inputs = np.vstack([data.inputs_low, data.inputs_high]) if data.n_low else data.inputs_high
    span = inputs.max(axis=0) - inputs.min(axis=0)
    span = np.where(span > 0.0, span, 1.0)
    k = KernelParams(1.0, span)
    if two_level:
        return MFHyperparams(k, KernelParams(1.0, span.copy()), 1.0, 1e-2, 1e-2)
    return MFHyperparams(KernelParams(1.0, np.ones_like(span)), k, 0.0, 0.0, 1e-2)


def _fit_bounds(data: FidelityDataset, two_level: bool) -> list[tuple[float, float]]:
    inputs = np.vstack([data.inputs_low, data.inputs_high]) if data.n_low else data.inputs_high
    span = inputs.max(axis=0) - inputs.min(axis=0)
    span = np.where(span > 0.0, span, 1.0)
    var_b = (np.log(1e-8), np.log(1e4))
    noise_b = (np.log(1e-6), np.log(10.0))
    ls_b = [(np.log(1e-3 * s), np.log(1e3 * s)) for s in span]
    bounds: list[tuple[float, float]] = []
    if two_level:
        bounds += [var_b] + ls_b
    bounds += [var_b] + ls_b
    if two_level:
        bounds += [(-5.0, 5.0), noise_b]
    bounds += [noise_b]
    return bounds


def _random_start(theta0: np.ndarray, rng: np.random.Generator,
                  bounds, rho_index: int | None) -> np.ndarray:
    t = theta0 + rng.uniform(np.log(1e-2), np.log(1e2), size=theta0.size)
    if rho_index is not None:
        t[rho_index] = rng.uniform(-2.0, 2.0)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(t, lo, hi)


def fit(data: FidelityDataset, cfg: FitConfig | None = None) -> MultiFidelityGP:
    """Fit hyperparameters by multi-start L-BFGS-B on the NLML.

    Outputs are standardized (shared per-channel mean/scale over both
    fidelities) before optimization and the transform is undone at
    prediction. The returned model's NLML is no worse than the NLML at any
    tested start point.

    Raises
    ------
    NumericalDegeneracyError
        If the joint covariance cannot be factorized at any start point.
    """
    cfg = cfg or FitConfig()
    if cfg.n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    two = data.n_low > 0
    mean, scale = _output_transform(data)
    std_data = FidelityDataset(
        data.inputs_low, (data.outputs_low - mean) / scale,
        data.inputs_high, (data.outputs_high - mean) / scale,
    )
    bounds = _fit_bounds(data, two)
    rho_index = (2 * (1 + data.ndim)) if two else None

    heur = _pack_theta(_heuristic_start(std_data, two), two)
    starts = []
    if cfg.warm_start is not None:
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        starts.append(np.clip(_pack_theta(cfg.warm_start, two), lo, hi))
    starts.append(heur)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed) & (2**63 - 1), 0x5F17]))
    while len(starts) < cfg.n_starts:
        starts.append(_random_start(heur, rng, bounds, rho_index))
    starts = starts[: cfg.n_starts]

    def objective(theta):
        try:
            h = _unpack_theta(theta, data.ndim, two)
            value, grad = _nlml_value_and_grad(std_data, h)
        except NumericalDegeneracyError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(value):
            return 1e25, np.zeros_like(theta)
        return value, grad

    FAIL = 1e24  # objective values at/above this mark a failed factorization
    best_theta = None
    best_val = np.inf
    start_vals = []
    for x0 in starts:
        v0, _ = objective(x0)
        start_vals.append(v0)
        if v0 < FAIL and v0 < best_val:
            best_val, best_theta = v0, x0
        res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": cfg.max_iter})
        if np.isfinite(res.fun) and res.fun < min(best_val, FAIL):
            v_chk, _ = objective(res.x)  # guard against line-search bookkeeping drift
            if v_chk < best_val:
                best_val, best_theta = v_chk, res.x
    if best_theta is None:
        raise NumericalDegeneracyError(
            f"every NLML start point failed to factorize "
            f"(n_low={data.n_low}, n_high={data.n_high}, starts={cfg.n_starts})"
        )

    hyper = _unpack_theta(best_theta, data.ndim, two)
    model = MultiFidelityGP(data, hyper, mean, scale)
    model.fit_info = {
        "start_nlml": [float(v) for v in start_vals],
        "best_nlml": float(best_val),
        "n_starts": len(starts),
    }
    return model


def fit_multioutput(datasets, cfg: FitConfig | None = None, seeds=None,
                    warm_starts=None) -> list[MultiFidelityGP]:
    """Fit channel-wise independent models over a shared input design.

    Channels are fitted with per-channel seeds derived from ``cfg.seed`` (or
    the explicit ``seeds`` list), so serial and threaded execution produce
    bitwise-identical results.
    """
    cfg = cfg or FitConfig()
    datasets = list(datasets)
    if seeds is None:
        seeds = [substream_seed(cfg.seed, "fit-channel", k) for k in range(len(datasets))]
    if len(seeds) != len(datasets):
        raise ValueError("one seed per channel is required")
    if warm_starts is None:
        warm_starts = [cfg.warm_start] * len(datasets)
    if len(warm_starts) != len(datasets):
        raise ValueError("one warm start per channel is required")

    def fit_one(k: int) -> MultiFidelityGP:
        try:
            return fit(datasets[k], replace(cfg, seed=seeds[k], warm_start=warm_starts[k]))
        except Exception as exc:
            raise type(exc)(f"channel {k}: {exc}") from exc

    if cfg.n_threads > 1 and len(datasets) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_threads) as pool:
            return list(pool.map(fit_one, range(len(datasets))))
    return [fit_one(k) for k in range(len(datasets))]


# ---------------------------------------------------------------- multi-level chain

def _effective_kernel(level: int, x, y, kernels, rhos) -> np.ndarray:
    """Marginal covariance of the level-`level` process (0-indexed).

    Levels chain as u_t = rho_{t-1} u_{t-1} + delta_t, so the marginal kernel
    accumulates as K_t = rho_{t-1}^2 K_{t-1} + k_t.
    """
    k = kernel_se(x, y, kernels[0])
    for j in range(1, level + 1):
        k = rhos[j - 1] ** 2 * k + kernel_se(x, y, kernels[j])
    return k


def multilevel_covariance(inputs, kernels, rhos, noises) -> np.ndarray:
    """Joint covariance over s fidelity levels stacked lowest-first.

    Parameters
    ----------
    inputs : sequence of s input matrices
    kernels : sequence of s KernelParams (per-level discrepancy kernels)
    rhos : sequence of s-1 scale factors between consecutive levels
    noises : sequence of s per-level noise standard deviations
    """
    s = len(inputs)
    if len(kernels) != s or len(noises) != s or len(rhos) != s - 1:
        raise ValueError("need s kernels, s noises and s-1 rhos for s levels")
    inputs = [_as_input_matrix(x, kernels[0].ndim) for x in inputs]
    blocks = [[None] * s for _ in range(s)]
    for t in range(s):
        for u in range(t, s):
            scale = float(np.prod(rhos[t:u])) if u > t else 1.0
            b = scale * _effective_kernel(t, inputs[t], inputs[u], kernels, rhos)
            if u == t:
                b = b + noises[t] ** 2 * np.eye(inputs[t].shape[0])
                blocks[t][t] = b
            else:
                blocks[t][u] = b
                blocks[u][t] = b.T
    return np.block(blocks)


def multilevel_nlml(inputs, outputs, kernels, rhos, noises) -> float:
    K = multilevel_covariance(inputs, kernels, rhos, noises)
    d = np.concatenate([np.asarray(o, dtype=float).reshape(-1) for o in outputs])
    L, _ = _cholesky_with_jitter(K, f"multilevel nlml, n={d.size}")
    alpha = cho_solve((L, True), d, check_finite=False)
    return float(
        0.5 * d @ alpha + np.log(np.diag(L)).sum() + 0.5 * d.size * np.log(2.0 * np.pi)
    )


def multilevel_predict(queries, inputs, outputs, kernels, rhos, noises):
    """Posterior mean/variance of the top level at query points.

    Returns (means, variances) arrays over the query rows.
    """
    s = len(inputs)
    K = multilevel_covariance(inputs, kernels, rhos, noises)
    d = np.concatenate([np.asarray(o, dtype=float).reshape(-1) for o in outputs])
    L, _ = _cholesky_with_jitter(K, "multilevel predict")
    alpha = cho_solve((L, True), d, check_finite=False)
    q = _as_input_matrix(queries, kernels[0].ndim)
    cols = []
    for t in range(s):
        scale = float(np.prod(rhos[t : s - 1])) if t < s - 1 else 1.0
        cols.append(scale * _effective_kernel(t, q, _as_input_matrix(inputs[t], kernels[0].ndim),
                                              kernels, rhos))
    a = np.hstack(cols)
    prior = kernels[0].variance
    for j in range(1, s):
        prior = rhos[j - 1] ** 2 * prior + kernels[j].variance
    mean = a @ alpha
    v = solve_triangular(L, a.T, lower=True, check_finite=False)
    var = np.maximum(prior - np.einsum("ij,ij->j", v, v), 0.0)
    return mean, var
