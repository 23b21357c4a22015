"""End-to-end experiment runner.

``run_experiment`` turns a validated :class:`~lgkdr_abc.config.ExperimentConfig`
into a directory of artifacts:

* ``config.json`` — the configuration as run;
* ``pool.csv`` — the frozen simulation bank (rejection sampling only, and
  only when ``persist_pool`` is set; its digest is always in the metrics);
* ``posterior_<j>.csv`` — accepted parameters per observation;
* ``trace_<j>.csv`` — per-round tolerance schedule (sequential sampler only);
* ``cv_report.csv`` — kernel-selection grid scores (cv mode only);
* ``metrics.json`` — everything needed to compare runs, fully deterministic;
* ``timings.json`` — wall-clock numbers, the one file allowed to differ
  between otherwise identical runs.

Every random draw derives from (master seed, channel, index), and the
``--threads`` option only parallelizes the per-observation sampling loop, so
any thread count produces byte-identical artifacts (timings aside).
"""

from __future__ import annotations

import concurrent.futures
import contextlib
import hashlib
import json
import os
import time

import numpy as np

from .config import ExperimentConfig
from .crossval import CvGrid, CvReport, cv_select, median_heuristic
from .errors import ConfigError, DegeneracyError, NumericalError
from .fileio import atomic_write_text, fmt_float
from .gkdr import GkdrConfig
from .linalg import KernelParams, Standardizer
from .models import Model, make_model
from .samplers import SimulationPool, rejection_abc, smc_abc
from .seeding import derive_seed
from .summaries import (
    TrainingSet,
    fit_identity,
    fit_lgkdr_many,
    fit_linear_posterior_mean,
    fit_separated_many,
)

__all__ = [
    "Observation",
    "build_pool",
    "build_training_set",
    "compare_report",
    "draw_observations",
    "evaluate",
    "fit_constructors",
    "load_metrics",
    "pool_digest",
    "resolve_kernel",
    "run_experiment",
    "write_pool_csv",
]

_METRICS_FORMAT = "lgkdr-abc-metrics"
_METRICS_VERSION = 1


@contextlib.contextmanager
def _stage(name: str):
    """Prefix failures with the pipeline stage they came from."""
    try:
        yield
    except (ConfigError, NumericalError, DegeneracyError, ValueError) as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# deterministic data generation


def build_pool(model: Model, n: int, seed: int, channel: str = "pool") -> SimulationPool:
    """Simulate ``n`` prior draws; row i depends only on (seed, channel, i)."""
    n = int(n)
    if n < 1:
        raise ValueError("pool size must be >= 1")
    seeds = np.empty(n, dtype=np.int64)
    thetas = np.empty((n, len(model.param_names)))
    raws = np.empty((n, model.raw_len))
    summaries = np.empty((n, model.summary_dim))
    for i in range(n):
        seeds[i] = derive_seed(seed, channel, i)
        rng = np.random.default_rng(int(seeds[i]))
        theta = model.prior.sample(rng)
        y = model.simulate(theta, rng)
        thetas[i] = theta
        raws[i] = y
        summaries[i] = model.summaries(y)
    return SimulationPool(seeds=seeds, thetas=thetas, raws=raws, summaries=summaries)


def build_training_set(model: Model, n: int, seed: int, channel: str) -> TrainingSet:
    pool = build_pool(model, n, seed, channel)
    return TrainingSet(summaries=pool.summaries, parameters=pool.thetas)


class Observation:
    """One synthetic observation: true parameters and their simulated data."""

    def __init__(self, index: int, seed: int, theta_true: np.ndarray, raw: np.ndarray, s_obs: np.ndarray):
        self.index = int(index)
        self.seed = int(seed)
        self.theta_true = np.asarray(theta_true, dtype=float)
        self.raw = np.asarray(raw, dtype=float)
        self.s_obs = np.asarray(s_obs, dtype=float)


def draw_observations(model: Model, n_obs: int, seed: int, boundary_margin: float) -> list[Observation]:
    """True parameters come from the margin-shrunk prior so they sit away
    from support boundaries; data are simulated from the full model."""
    interior = model.prior.interior(boundary_margin)
    out = []
    for j in range(int(n_obs)):
        obs_seed = derive_seed(seed, "obs", j)
        rng = np.random.default_rng(obs_seed)
        theta = interior.sample(rng)
        y = model.simulate(theta, rng)
        out.append(Observation(j, obs_seed, theta, y, model.summaries(y)))
    return out


# ---------------------------------------------------------------------------
# kernel resolution and constructor fitting


def resolve_kernel(
    cfg: ExperimentConfig, train: TrainingSet, held_out: TrainingSet | None
) -> tuple[KernelParams, CvReport | None]:
    mode = cfg.kernel.mode
    if mode == "pinned":
        return KernelParams(cfg.kernel.sigma_s, cfg.kernel.sigma_theta, cfg.kernel.eps_n), None
    if mode == "median":
        z = Standardizer.fit(train.summaries).transform(train.summaries)
        sigma_s = median_heuristic(z, seed=derive_seed(cfg.seed, "median-s"))
        sigma_theta = median_heuristic(train.parameters, seed=derive_seed(cfg.seed, "median-theta"))
        return KernelParams(sigma_s, sigma_theta, cfg.kernel.eps_n), None
    template = GkdrConfig(
        kernel=KernelParams(1.0, 1.0, 1e-3),
        target_dim=cfg.target_dim,
        weight_quantile=cfg.weight_quantile,
        mass_fraction=cfg.mass_fraction,
    )
    report = cv_select(
        train,
        held_out,
        template,
        seed=cfg.seed,
        n_pseudo_obs=cfg.cv.n_pseudo_obs,
        grid=CvGrid(cfg.cv.sigma_s_factors, cfg.cv.sigma_theta_factors, cfg.cv.ridges),
        k=cfg.cv.k,
    )
    return report.chosen, report


def fit_constructors(cfg: ExperimentConfig, train: TrainingSet, observations, kernel: KernelParams | None):
    n_obs = len(observations)
    if cfg.strategy == "identity":
        shared = fit_identity(train)
        return [shared] * n_obs
    if cfg.strategy == "linear":
        shared = fit_linear_posterior_mean(train)
        return [shared] * n_obs
    if cfg.strategy == "linear-local":
        return [
            fit_linear_posterior_mean(
                train, local=True, weight_quantile=cfg.weight_quantile, x_obs=obs.s_obs
            )
            for obs in observations
        ]
    gcfg = GkdrConfig(
        kernel=kernel,
        target_dim=cfg.target_dim,
        weight_quantile=cfg.weight_quantile,
        mass_fraction=cfg.mass_fraction,
    )
    s_obs_list = [obs.s_obs for obs in observations]
    if cfg.strategy == "lgkdr":
        return fit_lgkdr_many(train, s_obs_list, gcfg)
    focus = cfg.focus_params
    if focus is None:
        focus = tuple(range(train.parameters.shape[1]))
    return fit_separated_many(train, s_obs_list, gcfg, focus)


# ---------------------------------------------------------------------------
# posterior summaries


def _posterior_stats(thetas: np.ndarray, weights: np.ndarray, theta_true: np.ndarray):
    mean = np.average(thetas, weights=weights, axis=0)
    mse = np.average((thetas - theta_true[None, :]) ** 2, weights=weights, axis=0)
    return mean, mse


# ---------------------------------------------------------------------------
# artifact writers


def _write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for value in row:
            if isinstance(value, (bool, np.bool_)):
                cells.append("1" if value else "0")
            elif isinstance(value, (int, np.integer)):
                cells.append(str(int(value)))
            else:
                cells.append(fmt_float(value))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def pool_digest(pool: SimulationPool) -> str:
    h = hashlib.sha256()
    for name, arr in (("seeds", pool.seeds), ("thetas", pool.thetas), ("raws", pool.raws)):
        h.update(name.encode("ascii"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


def write_pool_csv(path, pool: SimulationPool, param_names) -> None:
    header = ["index", "seed"] + [f"theta_{p}" for p in param_names] + [
        f"y_{i}" for i in range(pool.raws.shape[1])
    ]
    rows = (
        [i, int(pool.seeds[i]), *pool.thetas[i], *pool.raws[i]]
        for i in range(pool.n)
    )
    _write_csv(path, header, rows)


def _write_posterior_csv(path, records, param_names) -> None:
    header = ["rank", "source_index", "seed", "distance", "weight"] + [
        f"theta_{p}" for p in param_names
    ]
    rows = (
        [rank, rec["source_index"], rec["seed"], rec["distance"], rec["weight"], *rec["theta"]]
        for rank, rec in enumerate(records)
    )
    _write_csv(path, header, rows)


def _write_trace_csv(path, trace) -> None:
    header = ["round", "epsilon", "ess", "acceptance_rate", "n_sims", "resampled"]
    rows = ([t.round, t.epsilon, t.ess, t.acceptance_rate, t.n_sims, t.resampled] for t in trace)
    _write_csv(path, header, rows)


def _write_cv_csv(path, report: CvReport) -> None:
    header = ["index", "sigma_s", "sigma_theta", "eps_n", "score", "error", "chosen"]
    rows = (
        [
            row["index"],
            row["sigma_s"],
            row["sigma_theta"],
            row["eps_n"],
            float("nan") if row["score"] is None else row["score"],
            (row["error"] or "").replace(",", ";"),
            row["chosen"],
        ]
        for row in report.as_rows()
    )
    lines = [",".join(header)]
    for row in rows:
        cells = [
            str(row[0]),
            fmt_float(row[1]),
            fmt_float(row[2]),
            fmt_float(row[3]),
            fmt_float(row[4]),
            f'"{row[5]}"',
            "1" if row[6] else "0",
        ]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# the runner


def run_experiment(cfg: ExperimentConfig, log=None) -> dict:
    """Run one configured experiment and write its artifact directory.

    Returns the metrics document (the same object serialized to
    ``metrics.json``).
    """
    say = log if log is not None else (lambda message: None)
    t_start = time.perf_counter()
    stage_seconds: dict[str, float] = {}
    os.makedirs(cfg.out_dir, exist_ok=True)

    with _stage("configure"):
        model = make_model(cfg.model, cfg.model_overrides)
        atomic_write_text(
            os.path.join(cfg.out_dir, "config.json"),
            json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
        )

    needs_kernel = cfg.strategy in ("lgkdr", "separated")
    needs_held_out = needs_kernel and cfg.kernel.mode == "cv"

    t0 = time.perf_counter()
    with _stage("train-set"):
        say(f"simulating training set ({cfg.n_train})")
        train = build_training_set(model, cfg.n_train, cfg.seed, "train")
        held_out = None
        if needs_held_out:
            say(f"simulating held-out set ({cfg.n_test})")
            held_out = build_training_set(model, cfg.n_test, cfg.seed, "test")
    stage_seconds["train-set"] = time.perf_counter() - t0

    pool = None
    digest = None
    if cfg.sampler == "rejection":
        t0 = time.perf_counter()
        with _stage("build-pool"):
            say(f"simulating rejection pool ({cfg.n_pool})")
            pool = build_pool(model, cfg.n_pool, cfg.seed, "pool")
            digest = pool_digest(pool)
            if cfg.persist_pool:
                write_pool_csv(os.path.join(cfg.out_dir, "pool.csv"), pool, model.param_names)
        stage_seconds["build-pool"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _stage("draw-observations"):
        observations = draw_observations(model, cfg.n_obs, cfg.seed, cfg.boundary_margin)
    stage_seconds["draw-observations"] = time.perf_counter() - t0

    kernel = None
    cv_report = None
    if needs_kernel:
        t0 = time.perf_counter()
        with _stage("resolve-kernel"):
            say(f"resolving kernel parameters ({cfg.kernel.mode})")
            kernel, cv_report = resolve_kernel(cfg, train, held_out)
            if cv_report is not None:
                _write_cv_csv(os.path.join(cfg.out_dir, "cv_report.csv"), cv_report)
        stage_seconds["resolve-kernel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _stage("fit-constructors"):
        say(f"fitting {cfg.strategy} summary constructors for {cfg.n_obs} observations")
        constructors = fit_constructors(cfg, train, observations, kernel)
    stage_seconds["fit-constructors"] = time.perf_counter() - t0

    per_obs_seconds = [0.0] * cfg.n_obs

    def _sample_one(j: int) -> dict:
        t_obs = time.perf_counter()
        obs = observations[j]
        constructor = constructors[j]
        if cfg.sampler == "rejection":
            result = rejection_abc(constructor, obs.s_obs, pool, cfg.n_accept)
            records = [
                {
                    "source_index": int(idx),
                    "seed": int(pool.seeds[idx]),
                    "distance": float(dist),
                    "weight": 1.0,
                    "theta": pool.thetas[idx],
                }
                for idx, dist in zip(result.pool_indices, result.distances)
            ]
            thetas = result.thetas
            weights = np.ones(thetas.shape[0])
            extra = {"epsilon": result.epsilon_effective, "n_samples": thetas.shape[0]}
            trace = None
        else:
            z_obs = constructor.transform(obs.s_obs)
            state = smc_abc(
                model,
                constructor,
                z_obs,
                n_particles=cfg.smc.n_particles,
                eps_target=cfg.smc.eps_target,
                seed=derive_seed(cfg.seed, "smc", j),
                ess_fraction=cfg.smc.ess_fraction,
                max_rounds=cfg.smc.max_rounds,
                move_repeats=cfg.smc.move_repeats,
                eps_quantile=cfg.smc.eps_quantile,
                stall_tol=cfg.smc.stall_tol,
            )
            keep = state.weights > 0.0
            records = [
                {
                    "source_index": int(i),
                    "seed": int(state.seeds[i]),
                    "distance": float(state.distances[i]),
                    "weight": float(state.weights[i]),
                    "theta": state.thetas[i],
                }
                for i in range(state.n_particles)
                if keep[i]
            ]
            thetas = state.thetas[keep]
            weights = state.weights[keep]
            extra = {
                "epsilon": state.epsilon,
                "n_samples": int(np.sum(keep)),
                "n_sims": state.n_sims,
                "rounds": len(state.trace),
            }
            trace = state.trace
        mean, mse = _posterior_stats(thetas, weights, obs.theta_true)
        per_obs_seconds[j] = time.perf_counter() - t_obs
        return {
            "index": j,
            "obs_seed": obs.seed,
            "theta_true": obs.theta_true.tolist(),
            "posterior_mean": mean.tolist(),
            "mse": mse.tolist(),
            "records": records,
            "trace": trace,
            **extra,
        }

    t0 = time.perf_counter()
    with _stage("sample"):
        say(f"sampling with {cfg.sampler} ({cfg.threads} thread(s))")
        if cfg.threads > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.threads) as pool_exec:
                results = list(pool_exec.map(_sample_one, range(cfg.n_obs)))
        else:
            results = [_sample_one(j) for j in range(cfg.n_obs)]
    stage_seconds["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _stage("write-outputs"):
        observation_docs = []
        for res in results:
            j = res["index"]
            _write_posterior_csv(
                os.path.join(cfg.out_dir, f"posterior_{j}.csv"), res["records"], model.param_names
            )
            if res["trace"] is not None:
                _write_trace_csv(os.path.join(cfg.out_dir, f"trace_{j}.csv"), res["trace"])
            doc = {k: v for k, v in res.items() if k not in ("records", "trace")}
            observation_docs.append(doc)
        amse = np.mean([doc["mse"] for doc in observation_docs], axis=0)
        metrics = {
            "format": _METRICS_FORMAT,
            "version": _METRICS_VERSION,
            "config_hash": cfg.config_hash(),
            "name": cfg.name,
            "model": model.describe(),
            "sampler": cfg.sampler,
            "strategy": cfg.strategy,
            "target_dim": cfg.target_dim,
            "weight_quantile": cfg.weight_quantile,
            "mass_fraction": cfg.mass_fraction,
            "focus_params": None if cfg.focus_params is None else list(cfg.focus_params),
            "kernel": None if kernel is None else kernel.to_dict(),
            "n_pool": cfg.n_pool if cfg.sampler == "rejection" else None,
            "n_accept": cfg.n_accept if cfg.sampler == "rejection" else None,
            "n_train": cfg.n_train,
            "n_test": cfg.n_test if needs_held_out else None,
            "n_obs": cfg.n_obs,
            "seed": cfg.seed,
            "pool_digest": digest,
            "parameters": list(model.param_names),
            "observations": observation_docs,
            "amse": amse.tolist(),
        }
        atomic_write_text(
            os.path.join(cfg.out_dir, "metrics.json"),
            json.dumps(metrics, indent=2, sort_keys=True) + "\n",
        )
    stage_seconds["write-outputs"] = time.perf_counter() - t0

    timings = {
        "total_seconds": time.perf_counter() - t_start,
        "stage_seconds": stage_seconds,
        "per_observation_seconds": per_obs_seconds,
    }
    atomic_write_text(
        os.path.join(cfg.out_dir, "timings.json"),
        json.dumps(timings, indent=2, sort_keys=True) + "\n",
    )
    say(f"wrote {cfg.out_dir}")
    return metrics


# ---------------------------------------------------------------------------
# verification and comparison


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def load_metrics(out_dir) -> dict:
    path = os.path.join(out_dir, "metrics.json")
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("format") != _METRICS_FORMAT or doc.get("version") != _METRICS_VERSION:
        raise ValueError(f"{path}: not a metrics file of a supported version")
    return doc


def evaluate(out_dir) -> dict:
    """Recompute posterior means and errors from the posterior CSV files and
    check them against ``metrics.json`` exactly.

    The written floats round-trip exactly and the recomputation follows the
    original reduction order, so any discrepancy means the artifacts were
    modified or corrupted; that raises :class:`NumericalError`.
    """
    metrics = load_metrics(out_dir)
    params = metrics["parameters"]
    mismatches = []
    recomputed = []
    for doc in metrics["observations"]:
        j = doc["index"]
        header, rows = _read_csv(os.path.join(out_dir, f"posterior_{j}.csv"))
        expected_header = ["rank", "source_index", "seed", "distance", "weight"] + [
            f"theta_{p}" for p in params
        ]
        if header != expected_header:
            raise ValueError(f"posterior_{j}.csv: unexpected columns {header}")
        thetas = np.array([[float(c) for c in row[5:]] for row in rows])
        weights = np.array([float(row[4]) for row in rows])
        theta_true = np.asarray(doc["theta_true"], dtype=float)
        mean, mse = _posterior_stats(thetas, weights, theta_true)
        recomputed.append({"index": j, "posterior_mean": mean.tolist(), "mse": mse.tolist()})
        if mean.tolist() != doc["posterior_mean"] or mse.tolist() != doc["mse"]:
            mismatches.append(j)
    amse = np.mean([r["mse"] for r in recomputed], axis=0).tolist()
    if amse != metrics["amse"]:
        mismatches.append("amse")
    if mismatches:
        raise NumericalError(
            f"{out_dir}: recomputed posterior statistics disagree with metrics.json for {mismatches}"
        )
    return {
        "out_dir": str(out_dir),
        "n_obs": metrics["n_obs"],
        "amse": amse,
        "parameters": params,
        "verified": True,
    }


def compare_report(out_dirs) -> str:
    """Aligned text table of average posterior errors across runs.

    Refuses to compare runs that did not face the same task: the model
    description, parameter list and true observation parameters must match,
    and rejection runs must share the same pool digest.
    """
    if len(out_dirs) < 2:
        raise ValueError("need at least two run directories to compare")
    runs = [load_metrics(d) for d in out_dirs]
    first = runs[0]
    for doc, d in zip(runs[1:], out_dirs[1:]):
        if doc["model"] != first["model"]:
            raise ValueError(f"{d}: model differs from {out_dirs[0]}")
        if doc["parameters"] != first["parameters"]:
            raise ValueError(f"{d}: parameter list differs from {out_dirs[0]}")
        truths = [o["theta_true"] for o in doc["observations"]]
        first_truths = [o["theta_true"] for o in first["observations"]]
        if truths != first_truths:
            raise ValueError(f"{d}: observations differ from {out_dirs[0]}")
    digests = {doc["pool_digest"] for doc in runs if doc["pool_digest"] is not None}
    if len(digests) > 1:
        raise ValueError(f"pool digests differ across runs: {sorted(digests)}")

    params = first["parameters"]
    header = ["run", "strategy", "sampler", "dim"] + [f"amse[{p}]" for p in params]
    table = [header]
    for doc in runs:
        table.append(
            [
                doc["name"],
                doc["strategy"],
                doc["sampler"],
                str(doc["target_dim"]),
            ]
            + [f"{v:.6g}" for v in doc["amse"]]
        )
    widths = [max(len(row[c]) for row in table) for c in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[c] for c in range(len(header))).rstrip())
    return "\n".join(lines) + "\n"
