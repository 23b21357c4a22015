"""Summary-statistic constructors.

A constructor is a fitted map from a model's initial summary vector to the
(usually lower-dimensional) vector that ABC distances are computed on. Four
kinds exist:

* ``identity`` — standardization only;
* ``linear-posterior-mean`` — per-parameter linear regression on the
  standardized summaries (optionally triweight-localized around the
  observation), so the constructed summary is an estimated posterior mean;
* ``lgkdr`` — standardization followed by the kernel dimension-reduction
  projection fitted around the observation;
* ``separated-composite`` — one single-parameter ``lgkdr`` child per chosen
  parameter, outputs concatenated.

Every constructor persists to a versioned JSON file and reloads to a map
that is bitwise identical on any input.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .fileio import atomic_write_text
from .gkdr import (
    GkdrConfig,
    GkdrSolver,
    ProjectionMatrix,
    compute_weights,
    project,
)
from .linalg import KernelParams, SpdFactor, Standardizer

__all__ = [
    "IdentityConstructor",
    "LgkdrConstructor",
    "LinearPosteriorMeanConstructor",
    "SeparatedConstructor",
    "SummaryConstructor",
    "TrainingSet",
    "fit_identity",
    "fit_lgkdr",
    "fit_lgkdr_many",
    "fit_linear_posterior_mean",
    "fit_separated",
    "fit_separated_many",
    "load_constructor",
    "save_constructor",
]

_FORMAT = "lgkdr-abc-constructor"
_VERSION = 1


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Paired draws (parameters theta_i, raw initial summaries s_i)."""

    summaries: np.ndarray
    parameters: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.summaries, dtype=float)
        p = np.asarray(self.parameters, dtype=float)
        if s.ndim != 2 or p.ndim != 2:
            raise ValueError("summaries and parameters must be 2-d arrays")
        if s.shape[0] != p.shape[0]:
            raise ValueError(f"row counts disagree: {s.shape[0]} vs {p.shape[0]}")
        if s.shape[0] < 1:
            raise ValueError("training set must not be empty")
        object.__setattr__(self, "summaries", s)
        object.__setattr__(self, "parameters", p)

    @property
    def n(self) -> int:
        return self.summaries.shape[0]


class SummaryConstructor:
    """Fitted map from raw initial summaries to constructed summaries."""

    kind: str
    standardizer: Standardizer

    @property
    def input_dim(self) -> int:
        return self.standardizer.dim

    @property
    def output_dim(self) -> int:
        raise NotImplementedError

    def transform(self, s: np.ndarray) -> np.ndarray:
        """Accepts a single vector (m,) or a batch (n, m)."""
        raise NotImplementedError

    def _payload(self) -> dict:
        raise NotImplementedError


class IdentityConstructor(SummaryConstructor):
    kind = "identity"

    def __init__(self, standardizer: Standardizer):
        self.standardizer = standardizer

    @property
    def output_dim(self) -> int:
        return self.standardizer.dim

    def transform(self, s: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(s)

    def _payload(self) -> dict:
        return {}


class LinearPosteriorMeanConstructor(SummaryConstructor):
    kind = "linear-posterior-mean"

    def __init__(self, standardizer: Standardizer, coef: np.ndarray, local: bool, weight_quantile: float | None):
        coef = np.asarray(coef, dtype=float)
        if coef.ndim != 2 or coef.shape[0] != standardizer.dim + 1:
            raise ValueError(f"coefficient matrix must be ({standardizer.dim + 1}, p), got {coef.shape}")
        self.standardizer = standardizer
        self.coef = coef
        self.local = bool(local)
        self.weight_quantile = None if weight_quantile is None else float(weight_quantile)

    @property
    def output_dim(self) -> int:
        return self.coef.shape[1]

    def transform(self, s: np.ndarray) -> np.ndarray:
        z = self.standardizer.transform(s)
        return self.coef[0] + z @ self.coef[1:]

    def _payload(self) -> dict:
        return {
            "coef": self.coef.tolist(),
            "local": self.local,
            "weight_quantile": self.weight_quantile,
        }


class LgkdrConstructor(SummaryConstructor):
    kind = "lgkdr"

    def __init__(
        self,
        standardizer: Standardizer,
        projection: ProjectionMatrix,
        kernel: KernelParams,
        eigenvalues: np.ndarray,
        weight_quantile: float,
    ):
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        if projection.source_dim != standardizer.dim:
            raise ValueError("projection and standardizer dimensions disagree")
        if eigenvalues.shape != (standardizer.dim,):
            raise ValueError("eigenvalue spectrum must cover the full summary dimension")
        self.standardizer = standardizer
        self.projection = projection
        self.kernel = kernel
        self.eigenvalues = eigenvalues
        self.weight_quantile = float(weight_quantile)

    @property
    def output_dim(self) -> int:
        return self.projection.target_dim

    def transform(self, s: np.ndarray) -> np.ndarray:
        return project(self.projection, self.standardizer.transform(s))

    def _payload(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "eigenvalues": self.eigenvalues.tolist(),
            "b": self.projection.b.tolist(),
            "weight_quantile": self.weight_quantile,
        }


class SeparatedConstructor(SummaryConstructor):
    """Concatenation of per-parameter constructors; ``focus`` records which
    parameter each child targets."""

    kind = "separated-composite"

    def __init__(self, children: list[LgkdrConstructor], focus: list[int]):
        if not children or len(children) != len(focus):
            raise ValueError("need one child constructor per focused parameter")
        dims = {c.standardizer.dim for c in children}
        if len(dims) != 1:
            raise ValueError("children must share the input dimension")
        self.children = list(children)
        self.focus = [int(j) for j in focus]
        self.standardizer = children[0].standardizer

    @property
    def output_dim(self) -> int:
        return sum(c.output_dim for c in self.children)

    def transform(self, s: np.ndarray) -> np.ndarray:
        parts = [c.transform(s) for c in self.children]
        return np.concatenate(parts, axis=-1)

    def child(self, param_index: int) -> LgkdrConstructor:
        try:
            return self.children[self.focus.index(int(param_index))]
        except ValueError:
            raise KeyError(f"no child fitted for parameter {param_index}") from None

    def _payload(self) -> dict:
        return {
            "focus": self.focus,
            "children": [
                {"standardizer": c.standardizer.to_dict(), "payload": c._payload()}
                for c in self.children
            ],
        }


def fit_identity(ts: TrainingSet) -> IdentityConstructor:
    return IdentityConstructor(Standardizer.fit(ts.summaries))


def fit_linear_posterior_mean(
    ts: TrainingSet,
    local: bool = False,
    weight_quantile: float = 0.10,
    x_obs: np.ndarray | None = None,
) -> LinearPosteriorMeanConstructor:
    """Regress each parameter on [1, standardized summaries].

    With ``local=True`` the regression is triweight-weighted around the
    observed summary vector ``x_obs`` (required in that case). A
    rank-deficient design is reported via a warning and resolved by adding a
    1e-8 ridge to the normal equations.
    """
    std = Standardizer.fit(ts.summaries)
    z = std.transform(ts.summaries)
    n = ts.n
    if local:
        if x_obs is None:
            raise ValueError("local regression requires the observed summary vector")
        w = compute_weights(z, std.transform(np.asarray(x_obs, dtype=float)), weight_quantile)
        if not np.any(w > 0.0):
            raise ValueError("no training point inside the weighting bandwidth")
    else:
        w = np.ones(n)
    design = np.column_stack([np.ones(n), z])
    xtw = design.T * w[None, :]
    normal = xtw @ design
    rhs = xtw @ ts.parameters
    try:
        coef = SpdFactor(normal).solve(rhs)
    except NumericalError:
        deficient = _deficient_columns(design * np.sqrt(w)[:, None])
        warnings.warn(
            f"rank-deficient regression design (dependent columns {deficient}); "
            "resolved with a 1e-8 ridge",
            RuntimeWarning,
            stacklevel=2,
        )
        normal[np.diag_indices(normal.shape[0])] += 1e-8
        coef = SpdFactor(normal).solve(rhs)
    return LinearPosteriorMeanConstructor(std, coef, local, weight_quantile if local else None)


def _deficient_columns(weighted_design: np.ndarray) -> list[int]:
    """Columns made redundant by the ones before them (pivoted QR)."""
    r, piv = scipy.linalg.qr(weighted_design, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return sorted(int(j) for j in piv)
    tol = diag[0] * max(weighted_design.shape) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    return sorted(int(j) for j in piv[rank:])


def _positive_weight_floor(n: int) -> int:
    return max(10, math.ceil(0.01 * n))


def fit_lgkdr_many(ts: TrainingSet, x_obs_list, cfg: GkdrConfig) -> list[LgkdrConstructor]:
    """Fit one localized projection per observation, sharing the training-set
    factorization across observations.

    Each fit requires at least max(10, 1% of n) training points with
    strictly positive weight around its observation; too sparse a
    neighborhood is an error rather than a silent bad fit.
    """
    std = Standardizer.fit(ts.summaries)
    z = std.transform(ts.summaries)
    solver = GkdrSolver(z, ts.parameters, cfg.kernel)
    if cfg.response_index is not None and not 0 <= cfg.response_index < ts.parameters.shape[1]:
        raise ValueError(
            f"response_index {cfg.response_index} out of range for p={ts.parameters.shape[1]}"
        )
    floor = _positive_weight_floor(ts.n)
    out = []
    for x_obs in x_obs_list:
        z_obs = std.transform(np.asarray(x_obs, dtype=float))
        w = compute_weights(z, z_obs, cfg.weight_quantile)
        n_pos = int(np.sum(w > 0.0))
        if n_pos < floor:
            raise ValueError(
                f"only {n_pos} of {ts.n} training points have positive weight near the "
                f"observation (need at least {floor}); enlarge weight_quantile or the training set"
            )
        projection, eigenvalues = solver.projection(w, cfg)
        out.append(LgkdrConstructor(std, projection, cfg.kernel, eigenvalues, cfg.weight_quantile))
    return out


def fit_lgkdr(ts: TrainingSet, x_obs: np.ndarray, cfg: GkdrConfig) -> LgkdrConstructor:
    return fit_lgkdr_many(ts, [x_obs], cfg)[0]


def fit_separated_many(ts: TrainingSet, x_obs_list, cfg: GkdrConfig, which) -> list[SeparatedConstructor]:
    """Separated composite fits for many observations, sharing one solver."""
    focus = [int(j) for j in which]
    if not focus:
        raise ValueError("need at least one focused parameter")
    if len(set(focus)) != len(focus):
        raise ValueError("focused parameters must be distinct")
    p = ts.parameters.shape[1]
    for j in focus:
        if not 0 <= j < p:
            raise ValueError(f"focused parameter {j} out of range for p={p}")
    std = Standardizer.fit(ts.summaries)
    z = std.transform(ts.summaries)
    solver = GkdrSolver(z, ts.parameters, cfg.kernel)
    floor = _positive_weight_floor(ts.n)
    out = []
    for x_obs in x_obs_list:
        z_obs = std.transform(np.asarray(x_obs, dtype=float))
        w = compute_weights(z, z_obs, cfg.weight_quantile)
        n_pos = int(np.sum(w > 0.0))
        if n_pos < floor:
            raise ValueError(
                f"only {n_pos} of {ts.n} training points have positive weight near the "
                f"observation (need at least {floor}); enlarge weight_quantile or the training set"
            )
        children = []
        for j in focus:
            child_cfg = dataclasses.replace(cfg, response_index=j)
            projection, eigenvalues = solver.projection(w, child_cfg)
            children.append(LgkdrConstructor(std, projection, cfg.kernel, eigenvalues, cfg.weight_quantile))
        out.append(SeparatedConstructor(children, focus))
    return out


def fit_separated(ts: TrainingSet, x_obs: np.ndarray, cfg: GkdrConfig, which) -> SeparatedConstructor:
    return fit_separated_many(ts, [x_obs], cfg, which)[0]


# ---------------------------------------------------------------------------
# persistence


def save_constructor(path, constructor: SummaryConstructor) -> None:
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "kind": constructor.kind,
        "standardizer": constructor.standardizer.to_dict(),
        "payload": constructor._payload(),
    }
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _lgkdr_from_parts(standardizer: Standardizer, payload: dict) -> LgkdrConstructor:
    return LgkdrConstructor(
        standardizer,
        ProjectionMatrix(b=np.asarray(payload["b"], dtype=float)),
        KernelParams.from_dict(payload["kernel"]),
        np.asarray(payload["eigenvalues"], dtype=float),
        payload["weight_quantile"],
    )


def load_constructor(path) -> SummaryConstructor:
    with open(path, "r") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT:
        raise ValueError(f"{path}: not a summary-constructor file")
    if doc.get("version") != _VERSION:
        raise ValueError(f"{path}: unsupported constructor version {doc.get('version')!r}")
    kind = doc.get("kind")
    try:
        std = Standardizer.from_dict(doc["standardizer"])
        payload = doc["payload"]
        if kind == "identity":
            return IdentityConstructor(std)
        if kind == "linear-posterior-mean":
            return LinearPosteriorMeanConstructor(
                std,
                np.asarray(payload["coef"], dtype=float),
                payload["local"],
                payload["weight_quantile"],
            )
        if kind == "lgkdr":
            return _lgkdr_from_parts(std, payload)
        if kind == "separated-composite":
            children = [
                _lgkdr_from_parts(Standardizer.from_dict(entry["standardizer"]), entry["payload"])
                for entry in payload["children"]
            ]
            return SeparatedConstructor(children, payload["focus"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed constructor file: {exc}") from exc
    raise ValueError(f"{path}: unknown constructor kind {kind!r}")
