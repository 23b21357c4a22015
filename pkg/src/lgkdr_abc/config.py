"""Experiment configuration: a validated, hashable description of one run.

A configuration fully determines the random draws and numeric outputs of an
experiment; ``config_hash`` digests exactly the result-relevant fields, so
two runs with the same hash must produce identical posterior files. Output
location, thread count and whether the simulation pool is persisted are
deliberately excluded from the hash — they must not change any result.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError

__all__ = [
    "CvSettings",
    "ExperimentConfig",
    "KernelChoice",
    "SmcSettings",
    "load_config",
]

SCHEMA_VERSION = 1

_STRATEGIES = ("identity", "linear", "linear-local", "lgkdr", "separated")
_SAMPLERS = ("rejection", "smc")
_KERNEL_MODES = ("pinned", "median", "cv")


def _check_keys(doc: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")


def _positive_int(value, name: str) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    if out < 1:
        raise ConfigError(f"{name} must be >= 1, got {out}")
    return out


@dataclass(frozen=True)
class KernelChoice:
    """How the kernel bandwidths and ridge are determined.

    * ``pinned`` — all three values given explicitly;
    * ``median`` — bandwidths from the median heuristic, ridge from
      ``eps_n`` (default 1e-3);
    * ``cv`` — full grid selection on a held-out set.
    """

    mode: str = "median"
    sigma_s: float | None = None
    sigma_theta: float | None = None
    eps_n: float | None = None

    def __post_init__(self):
        if self.mode not in _KERNEL_MODES:
            raise ConfigError(f"kernel mode must be one of {_KERNEL_MODES}, got {self.mode!r}")
        if self.mode == "pinned":
            for name in ("sigma_s", "sigma_theta", "eps_n"):
                v = getattr(self, name)
                if v is None or not float(v) > 0.0:
                    raise ConfigError(f"pinned kernel requires positive {name}, got {v!r}")
                object.__setattr__(self, name, float(v))
        else:
            if self.sigma_s is not None or self.sigma_theta is not None:
                raise ConfigError(f"kernel mode {self.mode!r} does not take explicit bandwidths")
            if self.mode == "median":
                eps = 1e-3 if self.eps_n is None else float(self.eps_n)
                if not eps > 0.0:
                    raise ConfigError(f"eps_n must be positive, got {eps}")
                object.__setattr__(self, "eps_n", eps)
            elif self.eps_n is not None:
                raise ConfigError("kernel mode 'cv' selects eps_n itself")

    def to_dict(self) -> dict:
        out = {"mode": self.mode}
        for name in ("sigma_s", "sigma_theta", "eps_n"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelChoice":
        _check_keys(doc, {"mode", "sigma_s", "sigma_theta", "eps_n"}, "kernel")
        return cls(**doc)


@dataclass(frozen=True)
class SmcSettings:
    n_particles: int = 512
    eps_target: float = 0.0
    ess_fraction: float = 0.5
    max_rounds: int = 30
    move_repeats: int = 1
    eps_quantile: float = 0.9
    stall_tol: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "n_particles", _positive_int(self.n_particles, "n_particles"))
        object.__setattr__(self, "max_rounds", _positive_int(self.max_rounds, "max_rounds"))
        object.__setattr__(self, "move_repeats", _positive_int(self.move_repeats, "move_repeats"))
        for name in ("eps_target", "ess_fraction", "eps_quantile", "stall_tol"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.n_particles < 2:
            raise ConfigError("n_particles must be >= 2")
        if not self.eps_target >= 0.0:
            raise ConfigError(f"eps_target must be >= 0, got {self.eps_target}")
        if not self.stall_tol >= 0.0:
            raise ConfigError(f"stall_tol must be >= 0, got {self.stall_tol}")
        if not 0.0 < self.ess_fraction <= 1.0:
            raise ConfigError(f"ess_fraction must be in (0, 1], got {self.ess_fraction}")
        if not 0.0 < self.eps_quantile < 1.0:
            raise ConfigError(f"eps_quantile must be in (0, 1), got {self.eps_quantile}")

    def to_dict(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "eps_target": self.eps_target,
            "ess_fraction": self.ess_fraction,
            "max_rounds": self.max_rounds,
            "move_repeats": self.move_repeats,
            "eps_quantile": self.eps_quantile,
            "stall_tol": self.stall_tol,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SmcSettings":
        _check_keys(doc, set(cls().to_dict()), "smc")
        return cls(**doc)


@dataclass(frozen=True)
class CvSettings:
    n_pseudo_obs: int = 10
    k: int = 5
    sigma_s_factors: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    sigma_theta_factors: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    ridges: tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5)

    def __post_init__(self):
        object.__setattr__(self, "n_pseudo_obs", _positive_int(self.n_pseudo_obs, "n_pseudo_obs"))
        object.__setattr__(self, "k", _positive_int(self.k, "k"))
        for name in ("sigma_s_factors", "sigma_theta_factors", "ridges"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals or any(not v > 0.0 for v in vals):
                raise ConfigError(f"{name} must be non-empty and strictly positive")
            object.__setattr__(self, name, vals)

    def to_dict(self) -> dict:
        return {
            "n_pseudo_obs": self.n_pseudo_obs,
            "k": self.k,
            "sigma_s_factors": list(self.sigma_s_factors),
            "sigma_theta_factors": list(self.sigma_theta_factors),
            "ridges": list(self.ridges),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CvSettings":
        _check_keys(doc, set(cls().to_dict()), "cv")
        return cls(**doc)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    name: str = "experiment"
    model_overrides: dict = field(default_factory=dict)
    sampler: str = "rejection"
    strategy: str = "lgkdr"
    focus_params: tuple[int, ...] | None = None
    target_dim: int | str = "auto"
    weight_quantile: float = 0.10
    mass_fraction: float = 0.70
    accept_fraction: float = 0.01
    n_pool: int = 10000
    n_train: int = 2000
    n_test: int = 1000
    n_obs: int = 10
    boundary_margin: float = 0.10
    kernel: KernelChoice = field(default_factory=KernelChoice)
    smc: SmcSettings = field(default_factory=SmcSettings)
    cv: CvSettings = field(default_factory=CvSettings)
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    persist_pool: bool = True

    def __post_init__(self):
        if not isinstance(self.model, str) or not self.model:
            raise ConfigError(f"model must be a non-empty string, got {self.model!r}")
        if self.strategy not in _STRATEGIES:
            raise ConfigError(f"strategy must be one of {_STRATEGIES}, got {self.strategy!r}")
        if self.sampler not in _SAMPLERS:
            raise ConfigError(f"sampler must be one of {_SAMPLERS}, got {self.sampler!r}")
        if self.focus_params is not None:
            focus = tuple(int(j) for j in self.focus_params)
            if len(set(focus)) != len(focus) or any(j < 0 for j in focus):
                raise ConfigError(f"focus_params must be distinct non-negative indices, got {focus}")
            object.__setattr__(self, "focus_params", focus)
        if isinstance(self.target_dim, str):
            if self.target_dim != "auto":
                raise ConfigError(f"target_dim must be an integer or 'auto', got {self.target_dim!r}")
        else:
            object.__setattr__(self, "target_dim", _positive_int(self.target_dim, "target_dim"))
        for name in ("weight_quantile", "mass_fraction", "accept_fraction"):
            v = float(getattr(self, name))
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
            object.__setattr__(self, name, v)
        margin = float(self.boundary_margin)
        if not 0.0 <= margin < 0.5:
            raise ConfigError(f"boundary_margin must be in [0, 0.5), got {margin}")
        object.__setattr__(self, "boundary_margin", margin)
        for name in ("n_pool", "n_train", "n_test", "n_obs"):
            object.__setattr__(self, name, _positive_int(getattr(self, name), name))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "threads", _positive_int(self.threads, "threads"))
        object.__setattr__(self, "persist_pool", bool(self.persist_pool))
        if not isinstance(self.model_overrides, dict):
            raise ConfigError("model_overrides must be a mapping")

    @property
    def n_accept(self) -> int:
        return max(1, int(round(self.accept_fraction * self.n_pool)))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "model": self.model,
            "model_overrides": dict(self.model_overrides),
            "sampler": self.sampler,
            "strategy": self.strategy,
            "focus_params": None if self.focus_params is None else list(self.focus_params),
            "target_dim": self.target_dim,
            "weight_quantile": self.weight_quantile,
            "mass_fraction": self.mass_fraction,
            "accept_fraction": self.accept_fraction,
            "n_pool": self.n_pool,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_obs": self.n_obs,
            "boundary_margin": self.boundary_margin,
            "kernel": self.kernel.to_dict(),
            "smc": self.smc.to_dict(),
            "cv": self.cv.to_dict(),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "threads": self.threads,
            "persist_pool": self.persist_pool,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        doc = dict(doc)
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        allowed = set(cls(model="x").to_dict()) - {"schema_version"}
        _check_keys(doc, allowed, "configuration")
        if "model" not in doc:
            raise ConfigError("configuration requires a 'model' entry")
        for key, sub in (("kernel", KernelChoice), ("smc", SmcSettings), ("cv", CvSettings)):
            if key in doc:
                if not isinstance(doc[key], dict):
                    raise ConfigError(f"{key} must be a mapping")
                doc[key] = sub.from_dict(doc[key])
        if "focus_params" in doc and doc["focus_params"] is not None:
            doc["focus_params"] = tuple(doc["focus_params"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        doc = self.to_dict()
        for key in ("out_dir", "threads", "persist_pool"):
            doc.pop(key)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)
