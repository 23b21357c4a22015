"""Command-line interface.

Exit codes: 0 success; 2 configuration or input-file problems; 3 numerical
failures (factorization breakdowns, verification mismatches); 4 particle
degeneracy in the sequential sampler.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DegeneracyError, NumericalError
from .harness import (
    build_pool,
    build_training_set,
    compare_report,
    draw_observations,
    evaluate,
    fit_constructors,
    resolve_kernel,
    run_experiment,
    write_pool_csv,
)
from .models import make_model
from .summaries import save_constructor

__all__ = ["main"]


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _target_dim(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"target dimension must be an integer or 'auto', got {text!r}")


def _add_config_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON experiment configuration file")
    sub.add_argument("--model", help="model id (mg1, ricker, gauss-toy) when no config file is given")
    sub.add_argument("--name", help="experiment label used in reports")
    sub.add_argument("--strategy", help="summary strategy (identity, linear, linear-local, lgkdr, separated)")
    sub.add_argument("--target-dim", type=_target_dim, help="projected dimension or 'auto'")
    sub.add_argument("--n-pool", type=int, help="rejection pool size")
    sub.add_argument("--n-train", type=int, help="training-set size for constructor fits")
    sub.add_argument("--n-test", type=int, help="held-out set size for kernel cross-validation")
    sub.add_argument("--n-obs", type=int, help="number of synthetic observations")
    sub.add_argument("--accept-fraction", type=float, help="rejection acceptance fraction")
    sub.add_argument("--particles", type=int, help="sequential sampler particle count")
    sub.add_argument("--eps-target", type=float, help="sequential sampler target tolerance")
    sub.add_argument("--max-rounds", type=int, help="sequential sampler round cap")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--threads", type=int, help="threads for the per-observation sampling loop")
    sub.add_argument("--no-persist-pool", action="store_true", help="record the pool digest only, not pool.csv")
    sub.add_argument("--quiet", action="store_true", help="suppress progress lines")


def _config_from_args(args, force_sampler: str | None = None) -> ExperimentConfig:
    if args.config:
        doc = load_config(args.config).to_dict()
    elif args.model:
        doc = {"model": args.model}
    else:
        raise ConfigError("provide --config or --model")
    simple = {
        "model": args.model,
        "name": args.name,
        "strategy": args.strategy,
        "target_dim": args.target_dim,
        "n_pool": args.n_pool,
        "n_train": args.n_train,
        "n_test": args.n_test,
        "n_obs": args.n_obs,
        "accept_fraction": args.accept_fraction,
        "seed": args.seed,
        "out_dir": args.out,
        "threads": args.threads,
    }
    for key, value in simple.items():
        if value is not None:
            doc[key] = value
    smc_over = {
        "n_particles": args.particles,
        "eps_target": args.eps_target,
        "max_rounds": args.max_rounds,
    }
    if any(v is not None for v in smc_over.values()):
        smc = dict(doc.get("smc", {}))
        smc.update({k: v for k, v in smc_over.items() if v is not None})
        doc["smc"] = smc
    if args.no_persist_pool:
        doc["persist_pool"] = False
    if force_sampler is not None:
        doc["sampler"] = force_sampler
    return ExperimentConfig.from_dict(doc)


def _log_for(args):
    return None if args.quiet else _say


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_simulate(args) -> int:
    overrides = json.loads(args.overrides) if args.overrides else None
    model = make_model(args.model, overrides)
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    pool = build_pool(model, args.n, args.seed)
    write_pool_csv(args.out, pool, model.param_names)
    print(f"wrote {args.n} simulations of {args.model} to {args.out}")
    return 0


def _cmd_run(args, sampler: str) -> int:
    cfg = _config_from_args(args, force_sampler=sampler)
    metrics = run_experiment(cfg, log=_log_for(args))
    pairs = ", ".join(
        f"{p}={v:.6g}" for p, v in zip(metrics["parameters"], metrics["amse"])
    )
    print(f"{cfg.name}: amse {pairs}")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def _cmd_cv(args) -> int:
    doc = _config_from_args(args).to_dict()
    doc["kernel"] = {"mode": "cv"}
    if doc["strategy"] not in ("lgkdr", "separated"):
        doc["strategy"] = "lgkdr"
    cfg = ExperimentConfig.from_dict(doc)
    log = _log_for(args)
    say = log if log is not None else (lambda m: None)
    model = make_model(cfg.model, cfg.model_overrides)
    say(f"simulating training set ({cfg.n_train}) and held-out set ({cfg.n_test})")
    train = build_training_set(model, cfg.n_train, cfg.seed, "train")
    held_out = build_training_set(model, cfg.n_test, cfg.seed, "test")
    say("scoring kernel grid")
    kernel, report = resolve_kernel(cfg, train, held_out)
    print(json.dumps({"chosen_kernel": kernel.to_dict(),
                      "base_sigma_s": report.base_sigma_s,
                      "base_sigma_theta": report.base_sigma_theta}, indent=2, sort_keys=True))
    return 0


def _cmd_fit_summary(args) -> int:
    cfg = _config_from_args(args)
    model = make_model(cfg.model, cfg.model_overrides)
    train = build_training_set(model, cfg.n_train, cfg.seed, "train")
    observations = draw_observations(model, cfg.n_obs, cfg.seed, cfg.boundary_margin)
    if not 0 <= args.obs_index < cfg.n_obs:
        raise ConfigError(f"--obs-index must be in [0, {cfg.n_obs}), got {args.obs_index}")
    kernel = None
    if cfg.strategy in ("lgkdr", "separated"):
        held_out = None
        if cfg.kernel.mode == "cv":
            held_out = build_training_set(model, cfg.n_test, cfg.seed, "test")
        kernel, _ = resolve_kernel(cfg, train, held_out)
    constructor = fit_constructors(cfg, train, observations, kernel)[args.obs_index]
    save_constructor(args.out_file, constructor)
    print(
        f"saved {constructor.kind} constructor ({constructor.input_dim} -> "
        f"{constructor.output_dim}) to {args.out_file}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    summary = evaluate(args.run_dir)
    pairs = ", ".join(f"{p}={v:.6g}" for p, v in zip(summary["parameters"], summary["amse"]))
    print(f"{args.run_dir}: verified {summary['n_obs']} observations; amse {pairs}")
    return 0


def _cmd_compare(args) -> int:
    print(compare_report(args.run_dirs), end="")
    return 0


# ---------------------------------------------------------------------------
# reproduction presets


def _scaled(value: int, scale: float, floor: int) -> int:
    return max(floor, int(round(value * scale)))


def _preset_configs(preset: str, seed: int, out: str, scale: float, threads: int) -> list[ExperimentConfig]:
    base = {"seed": seed, "threads": threads}
    if preset == "toy-rejection":
        return [
            ExperimentConfig.from_dict(
                {
                    **base,
                    "name": "toy-rejection",
                    "model": "gauss-toy",
                    "strategy": "identity",
                    "sampler": "rejection",
                    "n_pool": _scaled(20000, scale, 500),
                    "n_train": _scaled(500, scale, 50),
                    "n_obs": _scaled(5, scale, 2),
                    "accept_fraction": 0.01,
                    "out_dir": out,
                }
            )
        ]
    if preset == "toy-smc":
        return [
            ExperimentConfig.from_dict(
                {
                    **base,
                    "name": "toy-smc",
                    "model": "gauss-toy",
                    "strategy": "identity",
                    "sampler": "smc",
                    "n_train": _scaled(500, scale, 50),
                    "n_obs": _scaled(5, scale, 2),
                    "smc": {"n_particles": _scaled(512, scale, 64), "eps_target": 0.05, "max_rounds": 25},
                    "out_dir": out,
                }
            )
        ]
    if preset == "mg1-rejection":
        return [
            ExperimentConfig.from_dict(
                {
                    **base,
                    "name": "mg1-rejection",
                    "model": "mg1",
                    "strategy": "lgkdr",
                    "sampler": "rejection",
                    "target_dim": 4,
                    "n_pool": _scaled(100000, scale, 2000),
                    "n_train": _scaled(2000, scale, 200),
                    "n_obs": _scaled(10, scale, 2),
                    "accept_fraction": 0.01,
                    "persist_pool": False,
                    "out_dir": out,
                }
            )
        ]
    if preset == "ricker-rejection":
        return [
            ExperimentConfig.from_dict(
                {
                    **base,
                    "name": "ricker-rejection",
                    "model": "ricker",
                    "model_overrides": {"feature_set": "E1"},
                    "strategy": "lgkdr",
                    "sampler": "rejection",
                    "target_dim": 5,
                    "n_pool": _scaled(100000, scale, 2000),
                    "n_train": _scaled(2000, scale, 200),
                    "n_obs": _scaled(5, scale, 2),
                    "accept_fraction": 0.01,
                    "persist_pool": False,
                    "out_dir": out,
                }
            )
        ]
    if preset == "ricker-smc-dims":
        overrides = {"feature_set": "E1", "log_r_range": [3.0, 5.0], "phi_range": [5.0, 15.0]}
        configs = []
        for dim in (3, 6):
            configs.append(
                ExperimentConfig.from_dict(
                    {
                        **base,
                        "name": f"ricker-smc-d{dim}",
                        "model": "ricker",
                        "model_overrides": overrides,
                        "strategy": "lgkdr",
                        "sampler": "smc",
                        "target_dim": dim,
                        "n_train": _scaled(2000, scale, 200),
                        "n_obs": 1,
                        "smc": {
                            "n_particles": _scaled(2000, scale, 64),
                            "eps_target": 0.0,
                            "max_rounds": 60,
                            "eps_quantile": 0.8,
                            "move_repeats": 2,
                        },
                        "out_dir": f"{out.rstrip('/')}-d{dim}",
                    }
                )
            )
        return configs
    raise ConfigError(f"unknown preset {preset!r}")


_PRESETS = ("toy-rejection", "toy-smc", "mg1-rejection", "ricker-rejection", "ricker-smc-dims")


def _cmd_repro(args) -> int:
    configs = _preset_configs(args.preset, args.seed, args.out, args.scale, args.threads)
    log = _log_for(args)
    for cfg in configs:
        metrics = run_experiment(cfg, log=log)
        pairs = ", ".join(f"{p}={v:.6g}" for p, v in zip(metrics["parameters"], metrics["amse"]))
        print(f"{cfg.name}: amse {pairs} (artifacts in {cfg.out_dir})")
    if len(configs) > 1:
        print(compare_report([cfg.out_dir for cfg in configs]), end="")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgkdr-abc",
        description="Likelihood-free inference with locally weighted kernel dimension reduction.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="write a CSV bank of prior simulations")
    sim.add_argument("--model", required=True, help="model id (mg1, ricker, gauss-toy)")
    sim.add_argument("--n", type=int, required=True, help="number of simulations")
    sim.add_argument("--seed", type=int, default=0, help="master seed")
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.add_argument("--overrides", help="JSON dict of model constructor overrides")
    sim.set_defaults(func=_cmd_simulate)

    for name, sampler, help_text in (
        ("reject", "rejection", "run a rejection-sampling experiment"),
        ("smc", "smc", "run a sequential-sampler experiment"),
    ):
        sub = subs.add_parser(name, help=help_text)
        _add_config_options(sub)
        sub.set_defaults(func=lambda a, _s=sampler: _cmd_run(a, _s))

    cv = subs.add_parser("cv", help="select kernel parameters by cross-validation")
    _add_config_options(cv)
    cv.set_defaults(func=_cmd_cv)

    fit = subs.add_parser("fit-summary", help="fit and save one summary constructor")
    _add_config_options(fit)
    fit.add_argument("--obs-index", type=int, default=0, help="which synthetic observation to anchor at")
    fit.add_argument("--out-file", required=True, help="where to save the constructor JSON")
    fit.set_defaults(func=_cmd_fit_summary)

    ev = subs.add_parser("evaluate", help="re-derive metrics from artifacts and verify them")
    ev.add_argument("run_dir", help="experiment output directory")
    ev.set_defaults(func=_cmd_evaluate)

    cmp_ = subs.add_parser("compare", help="tabulate several runs of the same task side by side")
    cmp_.add_argument("run_dirs", nargs="+", help="experiment output directories")
    cmp_.set_defaults(func=_cmd_compare)

    rep = subs.add_parser("repro", help="run a packaged experiment preset")
    rep.add_argument("preset", choices=_PRESETS)
    rep.add_argument("--out", required=True, help="output directory (suffixed for multi-run presets)")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--scale", type=float, default=1.0, help="multiplier on pool/particle counts")
    rep.add_argument("--threads", type=int, default=1)
    rep.add_argument("--quiet", action="store_true")
    rep.set_defaults(func=_cmd_repro)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DegeneracyError as exc:
        print(f"degeneracy: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
