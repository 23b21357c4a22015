"""Kernel-parameter selection by held-out pseudo-observation scoring.

The two kernel bandwidths start from median-heuristic base values and are
scanned over multiplicative factor grids together with a ridge grid. Each
candidate is scored by a small ABC dry run: a handful of pseudo-observations
are taken out of the held-out set, a localized projection is fitted around
each, and the parameters of each pseudo-observation are predicted by
k-nearest-neighbor regression in the projected space over the remaining
held-out rows. The candidate with the smallest mean squared parameter error
wins; exact ties fall back to the smaller bandwidth/ridge values so the
choice is reproducible.
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import NumericalError
from .gkdr import GkdrConfig, GkdrSolver, compute_weights, project
from .linalg import KernelParams, Standardizer
from .seeding import stream
from .summaries import TrainingSet

__all__ = [
    "CvCandidate",
    "CvGrid",
    "CvReport",
    "cv_select",
    "knn_regress",
    "median_heuristic",
]

_DEFAULT_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)
_DEFAULT_RIDGES = (1e-2, 1e-3, 1e-4, 1e-5)


def median_heuristic(points: np.ndarray, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance, the default kernel bandwidth.

    Above ``max_points`` rows a seeded subsample keeps the cost quadratic in
    ``max_points`` only; the subsample indices are sorted so the result does
    not depend on how the generator orders them. A degenerate cloud (median
    distance zero, or non-finite input) falls back to 1.0 with a warning.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError(f"need at least two points, got shape {pts.shape}")
    if max_points < 2:
        raise ValueError("max_points must be >= 2")
    if pts.shape[0] > max_points:
        rng = np.random.default_rng(int(seed))
        idx = np.sort(rng.permutation(pts.shape[0])[:max_points])
        pts = pts[idx]
    med = float(np.median(pdist(pts)))
    if not np.isfinite(med) or med <= 0.0:
        warnings.warn(
            f"median pairwise distance is {med!r}; falling back to bandwidth 1.0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1.0
    return med


def knn_regress(train_x: np.ndarray, train_y: np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    """Mean of ``train_y`` over the k rows of ``train_x`` nearest to ``query``
    (Euclidean; distance ties go to the smaller row index)."""
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=float)
    query = np.asarray(query, dtype=float)
    if train_x.ndim != 2 or train_y.ndim != 2 or train_x.shape[0] != train_y.shape[0]:
        raise ValueError("train_x and train_y must be 2-d with equal row counts")
    if query.shape != (train_x.shape[1],):
        raise ValueError(f"query must be a vector of dimension {train_x.shape[1]}")
    k = int(k)
    if not 1 <= k <= train_x.shape[0]:
        raise ValueError(f"k must be in [1, {train_x.shape[0]}], got {k}")
    diff = train_x - query
    dsq = np.sum(diff * diff, axis=1)
    nearest = np.argsort(dsq, kind="stable")[:k]
    return train_y[nearest].mean(axis=0)


@dataclass(frozen=True)
class CvGrid:
    """Multiplicative factor grids around the median-heuristic bandwidths
    plus the ridge grid."""

    sigma_s_factors: tuple[float, ...] = _DEFAULT_FACTORS
    sigma_theta_factors: tuple[float, ...] = _DEFAULT_FACTORS
    ridges: tuple[float, ...] = _DEFAULT_RIDGES

    def __post_init__(self):
        for name in ("sigma_s_factors", "sigma_theta_factors", "ridges"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals or any(v <= 0.0 for v in vals):
                raise ValueError(f"{name} must be non-empty and strictly positive")
            object.__setattr__(self, name, vals)


@dataclass
class CvCandidate:
    index: int
    sigma_s_factor: float
    sigma_theta_factor: float
    kernel: KernelParams
    score: float | None = None
    error: str | None = None


@dataclass
class CvReport:
    chosen: KernelParams
    base_sigma_s: float
    base_sigma_theta: float
    candidates: list[CvCandidate] = field(default_factory=list)

    def as_rows(self) -> list[dict]:
        rows = []
        for c in self.candidates:
            rows.append(
                {
                    "index": c.index,
                    "sigma_s": c.kernel.sigma_s,
                    "sigma_theta": c.kernel.sigma_theta,
                    "eps_n": c.kernel.eps_n,
                    "score": c.score,
                    "error": c.error,
                    "chosen": c.kernel == self.chosen,
                }
            )
        return rows


def cv_select(
    train: TrainingSet,
    held_out: TrainingSet,
    cfg_template: GkdrConfig,
    seed: int,
    n_pseudo_obs: int = 10,
    grid: CvGrid | None = None,
    k: int = 5,
) -> CvReport:
    """Pick kernel parameters by pseudo-observation prediction error.

    The pseudo-observations are drawn (seeded, without replacement) from the
    held-out set and removed from the scoring pool, so a candidate cannot
    score a point against itself. A candidate whose factorization or
    weighting fails is recorded with the failure text and skipped; only if
    every candidate fails does the selection raise.
    """
    grid = grid if grid is not None else CvGrid()
    k = int(k)
    n_pseudo_obs = int(n_pseudo_obs)
    if n_pseudo_obs < 1:
        raise ValueError("n_pseudo_obs must be >= 1")
    if held_out.n - n_pseudo_obs < k:
        raise ValueError(
            f"held-out set too small: {held_out.n} rows minus {n_pseudo_obs} pseudo-observations "
            f"leaves fewer than k={k} scoring rows"
        )
    if train.summaries.shape[1] != held_out.summaries.shape[1]:
        raise ValueError("train and held-out summary dimensions disagree")
    if train.parameters.shape[1] != held_out.parameters.shape[1]:
        raise ValueError("train and held-out parameter dimensions disagree")

    std = Standardizer.fit(train.summaries)
    z_train = std.transform(train.summaries)
    z_held = std.transform(held_out.summaries)
    base_s = median_heuristic(z_train, seed=seed)
    base_t = median_heuristic(train.parameters, seed=seed)

    perm = stream(seed, "cv-pseudo").permutation(held_out.n)
    pseudo_idx = perm[:n_pseudo_obs]
    score_idx = np.sort(perm[n_pseudo_obs:])
    z_pseudo = z_held[pseudo_idx]
    theta_pseudo = held_out.parameters[pseudo_idx]
    z_score = z_held[score_idx]
    theta_score = held_out.parameters[score_idx]

    candidates: list[CvCandidate] = []
    for index, (fs, ft, ridge) in enumerate(
        itertools.product(grid.sigma_s_factors, grid.sigma_theta_factors, grid.ridges)
    ):
        kernel = KernelParams(sigma_s=fs * base_s, sigma_theta=ft * base_t, eps_n=ridge)
        cand = CvCandidate(index=index, sigma_s_factor=fs, sigma_theta_factor=ft, kernel=kernel)
        candidates.append(cand)
        try:
            cfg = dataclasses.replace(cfg_template, kernel=kernel)
            solver = GkdrSolver(z_train, train.parameters, kernel)
            errors = []
            for j in range(n_pseudo_obs):
                w = compute_weights(z_train, z_pseudo[j], cfg.weight_quantile)
                projection, _ = solver.projection(w, cfg)
                coords_score = project(projection, z_score)
                coords_obs = project(projection, z_pseudo[j])
                theta_hat = knn_regress(coords_score, theta_score, coords_obs, k)
                errors.append(float(np.sum((theta_hat - theta_pseudo[j]) ** 2)))
            cand.score = float(np.mean(errors))
        except (NumericalError, ValueError) as exc:
            cand.error = str(exc)

    scored = [c for c in candidates if c.score is not None]
    if not scored:
        details = "; ".join(f"[{c.index}] {c.error}" for c in candidates[:5])
        raise NumericalError(f"every cross-validation candidate failed ({details} ...)")
    best = min(
        scored,
        key=lambda c: (c.score, c.kernel.sigma_s, c.kernel.eps_n, c.kernel.sigma_theta, c.index),
    )
    return CvReport(chosen=best.kernel, base_sigma_s=base_s, base_sigma_theta=base_t, candidates=candidates)
