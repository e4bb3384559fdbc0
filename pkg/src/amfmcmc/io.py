"""Run artifacts on disk: CSV tables, YAML manifests, JSON model files.

Every CSV is written UTF-8 with LF line endings and ``.`` as the decimal
mark; real numbers carry 17 significant digits so a written value parses
back to the identical float. Writers are deterministic: the same inputs
produce byte-identical files regardless of thread count or platform.
"""

from __future__ import annotations

import json
import time

import numpy as np
import yaml

from .errors import ConfigError, EmptySamplesError, PersistenceVersionError
from .gp import FidelityDataset, KernelParams, MFHyperparams, MultiFidelityGP

GP_FORMAT = "amfmcmc-gp"
GP_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# cell formatting and generic CSV plumbing


def format_real(value) -> str:
    """Shortest-faithful decimal text for a float: 17 significant digits."""
    return "%.17g" % float(value)


def _format_cell(value) -> str:
    if isinstance(value, str):
        if any(ch in value for ch in ",\n\r\""):
            raise ValueError(f"CSV cell may not contain delimiters: {value!r}")
        return value
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("boolean cells are ambiguous; write 0/1 or a string")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format_real(value)


def write_csv(path, header, rows) -> None:
    """Write one CSV table: ints verbatim, reals at 17 significant digits."""
    header = list(header)
    lines = [",".join(_format_cell(h) for h in header)]
    for row in rows:
        row = list(row)
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
        lines.append(",".join(_format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Read a CSV written by :func:`write_csv`: (header, rows of strings)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise ConfigError(f"{path}: empty CSV file")
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ConfigError(f"{path}: row {i + 1} has {len(row)} cells, header has {len(header)}")
    return header, rows


# ---------------------------------------------------------------------------
# sample archives


def trace_header(param_names):
    return ["iteration", "chain", *param_names, "log_post"]


def write_trace_csv(path, param_names, states, log_posts, first_iteration: int = 0) -> None:
    """Write per-iteration chain states, sorted by (iteration, chain).

    ``states`` has shape (n_iterations, n_chains, ndim) and ``log_posts``
    (n_iterations, n_chains); iteration numbering starts at
    ``first_iteration`` so a post-burn-in archive can keep its original
    indices.
    """
    states = np.asarray(states, dtype=float)
    log_posts = np.asarray(log_posts, dtype=float)
    if states.ndim != 3 or log_posts.shape != states.shape[:2]:
        raise ValueError("states must be (n_iterations, n_chains, ndim) with matching log_posts")
    if states.shape[2] != len(param_names):
        raise ValueError("param_names length does not match state dimension")
    rows = []
    for t in range(states.shape[0]):
        for c in range(states.shape[1]):
            rows.append([first_iteration + t, c, *states[t, c], log_posts[t, c]])
    write_csv(path, trace_header(param_names), rows)


def read_trace_csv(path):
    """Read a trace table back into arrays.

    Returns (param_names, states, log_posts, first_iteration) with shapes as
    accepted by :func:`write_trace_csv`. Rows may be in any order on disk;
    they are sorted by (iteration, chain) and must form a full grid.
    """
    header, raw = read_csv(path)
    if len(header) < 3 or header[0] != "iteration" or header[1] != "chain" or header[-1] != "log_post":
        raise ConfigError(f"{path}: expected header iteration,chain,<params...>,log_post")
    if not raw:
        raise ConfigError(f"{path}: trace has no sample rows")
    param_names = header[2:-1]
    data = np.array([[float(v) for v in row] for row in raw])
    order = np.lexsort((data[:, 1], data[:, 0]))
    data = data[order]
    iterations = np.unique(data[:, 0].astype(int))
    chains = np.unique(data[:, 1].astype(int))
    n_t, n_c = len(iterations), len(chains)
    if n_t * n_c != data.shape[0]:
        raise ConfigError(f"{path}: rows do not form a full iteration x chain grid")
    if np.any(np.diff(iterations) != 1) or np.any(chains != np.arange(n_c)):
        raise ConfigError(f"{path}: iteration/chain indices must be contiguous")
    states = data[:, 2:-1].reshape(n_t, n_c, len(param_names))
    log_posts = data[:, -1].reshape(n_t, n_c)
    return param_names, states, log_posts, int(iterations[0])


# ---------------------------------------------------------------------------
# diagnostics tables


def write_rhat_csv(path, param_names, lengths, values) -> None:
    """Convergence-diagnostic series: one row per chain-prefix length."""
    values = np.asarray(values, dtype=float)
    lengths = np.asarray(lengths)
    if values.ndim != 2 or values.shape != (len(lengths), len(param_names)):
        raise ValueError("values must be (len(lengths), len(param_names))")
    header = ["iteration", *(f"rhat_{n}" for n in param_names)]
    rows = [[int(lengths[i]), *values[i]] for i in range(len(lengths))]
    write_csv(path, header, rows)


def write_history_csv(path, history) -> None:
    """Refinement-loop history: one row per stage (stage 0 = initial design).

    Columns: iteration, n_high, n_low, one ``mean_gp_sd_<group>`` per output
    group, rhat_max, accept_rate, and — when the records carry RMSE
    diagnostics — one ``rmse_<group>`` per group.
    """
    history = list(history)
    if not history:
        raise ValueError("history must hold at least the initial-design record")
    groups = list(history[0]["mean_gp_sd"])
    with_rmse = "rmse" in history[0]
    header = ["iteration", "n_high", "n_low",
              *(f"mean_gp_sd_{g}" for g in groups),
              "rhat_max", "accept_rate"]
    if with_rmse:
        header += [f"rmse_{g}" for g in groups]
    rows = []
    for rec in history:
        row = [int(rec["iteration"]), int(rec["n_high"]), int(rec["n_low"]),
               *(rec["mean_gp_sd"][g] for g in groups),
               rec["rhat_max"], rec["accept_rate"]]
        if with_rmse:
            row += [rec["rmse"][g] for g in groups]
        rows.append(row)
    write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# posterior summaries


def summarize_posterior(samples):
    """Per-parameter summary statistics of a (n_samples, ndim) array.

    Returns a dict of 1-D arrays: mean, sd, and the 2.5/50/97.5 percentiles
    computed with linear interpolation between order statistics.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise EmptySamplesError("posterior summary requires a non-empty (n_samples, ndim) array")
    q = np.percentile(samples, [2.5, 50.0, 97.5], axis=0, method="linear")
    return {
        "mean": samples.mean(axis=0),
        "sd": samples.std(axis=0, ddof=1) if samples.shape[0] > 1 else np.zeros(samples.shape[1]),
        "p2.5": q[0],
        "p50": q[1],
        "p97.5": q[2],
    }


SUMMARY_HEADER = ["parameter", "mean", "sd", "p2.5", "p50", "p97.5"]


def export_posterior_summary(path, samples, param_names) -> None:
    """Write the per-parameter summary table for a posterior sample array."""
    stats = summarize_posterior(samples)
    if len(param_names) != stats["mean"].shape[0]:
        raise ValueError("param_names length does not match sample dimension")
    rows = [[str(name), stats["mean"][j], stats["sd"][j],
             stats["p2.5"][j], stats["p50"][j], stats["p97.5"][j]]
            for j, name in enumerate(param_names)]
    write_csv(path, SUMMARY_HEADER, rows)


# ---------------------------------------------------------------------------
# manifests and failure snapshots


def write_manifest(path, config, seed, wall_clock_s, outputs, version) -> None:
    """Record what a run was and what it produced.

    The manifest is the one output that varies across reruns (wall-clock
    time), so byte-level determinism checks compare every artifact except
    this file.
    """
    doc = {
        "version": str(version),
        "seed": int(seed),
        "wall_clock_s": float(wall_clock_s),
        "written_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": [str(p) for p in outputs],
        "config": config,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def write_state_snapshot(path, payload) -> None:
    """Dump a JSON snapshot of run state after a numerical failure."""

    def _default(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        return repr(obj)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, default=_default)
        fh.write("\n")


# ---------------------------------------------------------------------------
# GP model persistence


def _kernel_to_dict(k: KernelParams) -> dict:
    return {"variance": float(k.variance),
            "length_scales": [float(v) for v in np.asarray(k.length_scales)]}


def _kernel_from_dict(d) -> KernelParams:
    return KernelParams(variance=d["variance"],
                        length_scales=np.asarray(d["length_scales"], dtype=float))


def _model_to_dict(model: MultiFidelityGP) -> dict:
    h = model.hyperparams
    return {
        "hyperparams": {
            "kernel_low": _kernel_to_dict(h.kernel_low),
            "kernel_delta": _kernel_to_dict(h.kernel_delta),
            "rho": float(h.rho),
            "noise_low": float(h.noise_low),
            "noise_high": float(h.noise_high),
        },
        "out_mean": float(model.out_mean),
        "out_scale": float(model.out_scale),
        "data": {
            "inputs_low": np.asarray(model.data.inputs_low, dtype=float).tolist(),
            "outputs_low": np.asarray(model.data.outputs_low, dtype=float).tolist(),
            "inputs_high": np.asarray(model.data.inputs_high, dtype=float).tolist(),
            "outputs_high": np.asarray(model.data.outputs_high, dtype=float).tolist(),
        },
    }


def _model_from_dict(d, path) -> MultiFidelityGP:
    try:
        data = d["data"]
        ndim = len(data["inputs_high"][0])
        low = np.asarray(data["inputs_low"], dtype=float).reshape(-1, ndim)
        dataset = FidelityDataset(
            inputs_low=low,
            outputs_low=np.asarray(data["outputs_low"], dtype=float),
            inputs_high=np.asarray(data["inputs_high"], dtype=float),
            outputs_high=np.asarray(data["outputs_high"], dtype=float),
        )
        h = d["hyperparams"]
        hyper = MFHyperparams(
            kernel_low=_kernel_from_dict(h["kernel_low"]),
            kernel_delta=_kernel_from_dict(h["kernel_delta"]),
            rho=float(h["rho"]),
            noise_low=float(h["noise_low"]),
            noise_high=float(h["noise_high"]),
        )
        return MultiFidelityGP(data=dataset, hyperparams=hyper,
                               out_mean=float(d["out_mean"]),
                               out_scale=float(d["out_scale"]))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed model record ({exc})") from exc


def persist_gp(models, path) -> None:
    """Serialize one fitted model (or a per-channel list) to a JSON file.

    Floats are written with Python's round-trip ``repr``, so a reloaded
    model reproduces predictions exactly.
    """
    single = isinstance(models, MultiFidelityGP)
    model_list = [models] if single else list(models)
    doc = {
        "format": GP_FORMAT,
        "format_version": GP_FORMAT_VERSION,
        "single": single,
        "channels": [_model_to_dict(m) for m in model_list],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_gp(path):
    """Inverse of :func:`persist_gp`: a model, or a list if one was saved."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a valid model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != GP_FORMAT:
        raise ConfigError(f"{path}: not a {GP_FORMAT} file")
    version = doc.get("format_version")
    if version != GP_FORMAT_VERSION:
        raise PersistenceVersionError(
            f"{path}: format_version {version!r} is not supported (expected {GP_FORMAT_VERSION})")
    channels = doc.get("channels")
    if not isinstance(channels, list) or not channels:
        raise ConfigError(f"{path}: file holds no model channels")
    models = [_model_from_dict(d, path) for d in channels]
    return models[0] if doc.get("single", len(models) == 1) else models
