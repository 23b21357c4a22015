"""Gradient-based kernel dimension reduction with local triweight weighting.

The estimation target is an orthonormal matrix B (m x d) whose columns span
the directions in standardized summary space along which the conditional
distribution of the parameters actually varies. For each anchor point, the
kernel-gradient rows F at that anchor are combined with the ridge-inverted
summary Gram matrix A = G_s + n*eps_n*I and the parameter Gram matrix
G_theta into the positive-semidefinite matrix

    M(anchor) = F^T A^{-1} G_theta A^{-1} F .

A triweight-weighted average of M over anchors near the observed summary is
symmetrized and eigendecomposed; the top-d eigenvectors form B. Uniform
weights recover the plain (global) estimator as a special case.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .fileio import atomic_write_text, fmt_float
from .linalg import (
    KernelParams,
    SpdFactor,
    SymmetricMatrix,
    gram_matrix,
    kernel_gradient,
    pairwise_sq_dists,
    sym_eig_top_d,
)

__all__ = [
    "GkdrConfig",
    "GkdrSolver",
    "ProjectionMatrix",
    "WeightedTrainingSet",
    "choose_dimension",
    "compute_weights",
    "estimate_projection",
    "estimate_projection_separated",
    "load_projection",
    "local_gradient_matrix",
    "project",
    "save_projection",
    "triweight",
]

_ORTHO_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Orthonormal basis ``b`` (source_dim x target_dim) of the retained
    summary subspace."""

    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 2:
            raise ValueError(f"projection basis must be 2-d, got shape {b.shape}")
        m, d = b.shape
        if not 1 <= d <= m:
            raise ValueError(f"target dimension must be in [1, {m}], got {d}")
        gram = b.T @ b
        if np.max(np.abs(gram - np.eye(d))) > _ORTHO_TOL:
            raise ValueError("projection columns are not orthonormal")
        object.__setattr__(self, "b", b)

    @property
    def source_dim(self) -> int:
        return self.b.shape[0]

    @property
    def target_dim(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class GkdrConfig:
    """Settings of one dimension-reduction fit.

    target_dim is either a positive integer or "auto", in which case the
    smallest dimension holding at least ``mass_fraction`` of the (clamped)
    eigenvalue mass is chosen. ``response_index`` restricts the parameter
    kernel to a single parameter column (the separated, per-parameter
    variant); None uses the full parameter vector.
    """

    kernel: KernelParams
    target_dim: int | str = "auto"
    weight_quantile: float = 0.10
    mass_fraction: float = 0.70
    response_index: int | None = None

    def __post_init__(self):
        if isinstance(self.target_dim, str):
            if self.target_dim != "auto":
                raise ValueError(f"target_dim must be an integer or 'auto', got {self.target_dim!r}")
        else:
            d = int(self.target_dim)
            if d < 1:
                raise ValueError(f"target_dim must be >= 1, got {d}")
            object.__setattr__(self, "target_dim", d)
        q = float(self.weight_quantile)
        if not 0.0 < q <= 1.0:
            raise ValueError(f"weight_quantile must be in (0, 1], got {q}")
        object.__setattr__(self, "weight_quantile", q)
        f = float(self.mass_fraction)
        if not 0.0 < f <= 1.0:
            raise ValueError(f"mass_fraction must be in (0, 1], got {f}")
        object.__setattr__(self, "mass_fraction", f)
        if self.response_index is not None:
            object.__setattr__(self, "response_index", int(self.response_index))


@dataclass(frozen=True, eq=False)
class WeightedTrainingSet:
    """Standardized training summaries, raw parameters and anchor weights.

    Shape and non-negativity are enforced here; the requirement that at
    least one weight is strictly positive is checked where the weights are
    consumed (``estimate_projection``), so the caller gets the error in
    terms of the weighting bandwidth.
    """

    summaries: np.ndarray
    parameters: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.summaries, dtype=float)
        p = np.asarray(self.parameters, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if s.ndim != 2 or p.ndim != 2 or w.ndim != 1:
            raise ValueError("summaries and parameters must be 2-d, weights 1-d")
        if not (s.shape[0] == p.shape[0] == w.shape[0]):
            raise ValueError(
                f"row counts disagree: summaries {s.shape[0]}, parameters {p.shape[0]}, "
                f"weights {w.shape[0]}"
            )
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "summaries", s)
        object.__setattr__(self, "parameters", p)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.summaries.shape[0]


def triweight(x: np.ndarray, x_obs: np.ndarray, x_th: np.ndarray) -> float:
    """Localization weight of ``x`` relative to the observed point.

    With u the ratio of SQUARED distances ``||x - x_obs||^2 / ||x_th - x_obs||^2``,
    the weight is ``(1 - u^2)^3`` for u < 1 and 0 otherwise.
    """
    x = np.asarray(x, dtype=float)
    x_obs = np.asarray(x_obs, dtype=float)
    x_th = np.asarray(x_th, dtype=float)
    if not (x.shape == x_obs.shape == x_th.shape) or x.ndim != 1:
        raise ValueError("x, x_obs and x_th must be vectors of equal dimension")
    denom = float(np.sum((x_th - x_obs) ** 2))
    if denom == 0.0:
        raise ValueError("threshold point coincides with the observation")
    u = float(np.sum((x - x_obs) ** 2)) / denom
    if u >= 1.0:
        return 0.0
    return (1.0 - u * u) ** 3


def compute_weights(summaries: np.ndarray, x_obs: np.ndarray, weight_quantile: float) -> np.ndarray:
    """Triweight weights around the observation, with the bandwidth set so
    that roughly a ``weight_quantile`` fraction of the points fall inside.

    The threshold distance is the ``weight_quantile`` quantile (linear
    interpolation) of the point-to-observation distances; points at or
    beyond it get weight exactly 0. If the threshold distance is 0 (the
    observation duplicated enough times), the coincident points get weight 1
    and everything else 0.
    """
    pts = np.asarray(summaries, dtype=float)
    x_obs = np.asarray(x_obs, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"expected an (n, m) array, got shape {pts.shape}")
    if x_obs.shape != (pts.shape[1],):
        raise ValueError(f"observation must be a vector of dimension {pts.shape[1]}")
    q = float(weight_quantile)
    if not 0.0 < q <= 1.0:
        raise ValueError(f"weight_quantile must be in (0, 1], got {q}")
    dsq = pairwise_sq_dists(pts, x_obs[None, :])[:, 0]
    th_sq = float(np.quantile(dsq, q))
    if th_sq == 0.0:
        return (dsq == 0.0).astype(float)
    u = dsq / th_sq
    w = np.zeros(pts.shape[0])
    inside = u < 1.0
    t = 1.0 - u[inside] ** 2
    w[inside] = t**3
    return w


def local_gradient_matrix(
    ts: WeightedTrainingSet,
    anchor_index: int,
    kernel: KernelParams,
    solve_cache: SpdFactor,
    response_index: int | None = None,
) -> SymmetricMatrix:
    """Gradient-covariance contribution of one anchor point:
    ``F^T A^{-1} G_theta A^{-1} F`` with F the kernel-gradient rows at the
    anchor and A the ridge-regularized summary Gram matrix held (factorized)
    by ``solve_cache``.
    """
    n = ts.n
    anchor_index = int(anchor_index)
    if not 0 <= anchor_index < n:
        raise ValueError(f"anchor_index {anchor_index} out of range for n={n}")
    if solve_cache.dim != n:
        raise ValueError(f"solve_cache dimension {solve_cache.dim} != n {n}")
    f = kernel_gradient(ts.summaries, anchor_index, kernel.sigma_s)
    resp = ts.parameters if response_index is None else ts.parameters[:, [int(response_index)]]
    g_theta = gram_matrix(resp, kernel.sigma_theta).full()
    a_inv_f = solve_cache.solve(f)
    return SymmetricMatrix.from_full(a_inv_f.T @ g_theta @ a_inv_f)


class GkdrSolver:
    """Anchor-independent work for one (training set, kernel) pair.

    Fits anchored at many different observations share the Gram matrix, its
    Cholesky factorization and the n x n response products, so refitting per
    observation only costs the weighted accumulation. The accumulation runs
    as a fixed sequence of dense BLAS products, identical for every thread
    count.
    """

    def __init__(self, summaries: np.ndarray, parameters: np.ndarray, kernel: KernelParams):
        s = np.asarray(summaries, dtype=float)
        p = np.asarray(parameters, dtype=float)
        if s.ndim != 2 or p.ndim != 2 or s.shape[0] != p.shape[0]:
            raise ValueError("summaries and parameters must be 2-d with equal row counts")
        if s.shape[0] < 2:
            raise ValueError("need at least two training points")
        self.s = s
        self.parameters = p
        self.kernel = kernel
        self.n = s.shape[0]
        self.m = s.shape[1]
        self.g_s = gram_matrix(s, kernel.sigma_s).full()
        a = self.g_s.copy()
        a[np.diag_indices(self.n)] += self.n * kernel.eps_n
        self.factor = SpdFactor(a)
        self._per_response: dict[int | None, tuple[np.ndarray, np.ndarray]] = {}

    def _response_products(self, response_index: int | None) -> tuple[np.ndarray, np.ndarray]:
        """V = G_s o (H G_s) and the column sums u_i = k_i^T H k_i, where
        H = A^{-1} G_theta A^{-1}."""
        key = None if response_index is None else int(response_index)
        cached = self._per_response.get(key)
        if cached is not None:
            return cached
        resp = self.parameters if key is None else self.parameters[:, [key]]
        g_theta = gram_matrix(resp, self.kernel.sigma_theta).full()
        t = self.factor.solve(g_theta)  # A^{-1} G_theta
        h = self.factor.solve(t.T)  # A^{-1} G_theta A^{-1}
        h = 0.5 * (h + h.T)
        hg = h @ self.g_s
        v = self.g_s * hg
        self._per_response[key] = (h, v)
        return h, v

    def accumulate(self, weights: np.ndarray, response_index: int | None = None) -> SymmetricMatrix:
        """Weighted average of the per-anchor gradient-covariance matrices,
        divided by the number of strictly positive weights and symmetrized.

        Expanding F_i = c * diag(k_i) (S - 1 s_i^T) with c = 2 / sigma_s^2
        turns sum_i w_i F_i^T H F_i into four dense products shared by all
        anchors; the per-anchor loop and this closed form agree to float
        accuracy (covered by tests against ``local_gradient_matrix``).
        """
        w = np.asarray(weights, dtype=float)
        if w.shape != (self.n,):
            raise ValueError(f"weights must have shape ({self.n},)")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and non-negative")
        n_pos = int(np.sum(w > 0.0))
        if n_pos == 0:
            raise ValueError("no training point inside the weighting bandwidth")
        h, v = self._response_products(response_index)
        s = self.s
        gw = self.g_s * w[None, :]
        gwg = gw @ self.g_s
        t1 = s.T @ ((h * gwg) @ s)
        vw = v * w[None, :]
        t2 = s.T @ (vw @ s)
        u = v.sum(axis=0)
        t4 = (s * (w * u)[:, None]).T @ s
        c2 = (2.0 / (self.kernel.sigma_s * self.kernel.sigma_s)) ** 2
        m_tilde = (c2 / n_pos) * (t1 - t2 - t2.T + t4)
        return SymmetricMatrix.from_full(m_tilde)

    def projection(self, weights: np.ndarray, cfg: GkdrConfig) -> tuple[ProjectionMatrix, np.ndarray]:
        m_tilde = self.accumulate(weights, cfg.response_index)
        eigvals, eigvecs = sym_eig_top_d(m_tilde, self.m)
        if cfg.target_dim == "auto":
            d = choose_dimension(eigvals, cfg.mass_fraction)
        else:
            d = int(cfg.target_dim)
            if d > self.m:
                raise ValueError(f"target_dim {d} exceeds summary dimension {self.m}")
        return ProjectionMatrix(b=eigvecs[:, :d]), eigvals


def estimate_projection(ts: WeightedTrainingSet, cfg: GkdrConfig) -> tuple[ProjectionMatrix, np.ndarray]:
    """Estimate the projection basis from a weighted training set.

    Returns the basis together with the full descending eigenvalue spectrum
    of the aggregated gradient-covariance matrix (used for dimension
    diagnostics and auto selection).
    """
    if ts.n < 2:
        raise ValueError("need at least two training points")
    if not np.any(ts.weights > 0.0):
        raise ValueError("no training point inside the weighting bandwidth")
    solver = GkdrSolver(ts.summaries, ts.parameters, cfg.kernel)
    if cfg.response_index is not None and not 0 <= cfg.response_index < ts.parameters.shape[1]:
        raise ValueError(
            f"response_index {cfg.response_index} out of range for p={ts.parameters.shape[1]}"
        )
    return solver.projection(ts.weights, cfg)


def estimate_projection_separated(
    ts: WeightedTrainingSet, cfg: GkdrConfig, param_index: int
) -> ProjectionMatrix:
    """Per-parameter variant: the parameter kernel sees only the selected
    column, so the basis targets directions informative about that single
    parameter."""
    param_index = int(param_index)
    if not 0 <= param_index < ts.parameters.shape[1]:
        raise ValueError(f"param_index {param_index} out of range for p={ts.parameters.shape[1]}")
    proj, _ = estimate_projection(ts, dataclasses.replace(cfg, response_index=param_index))
    return proj


def choose_dimension(eigenvalues: np.ndarray, fraction: float = 0.70) -> int:
    """Smallest d whose leading eigenvalues hold at least ``fraction`` of the
    total mass. Tiny negative values (factorization noise) are clamped to 0
    before the cumulative sums."""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or lam.size < 1:
        raise ValueError("eigenvalues must be a non-empty vector")
    if np.any(lam[1:] > lam[:-1]):
        raise ValueError("eigenvalues must be sorted in descending order")
    fraction = float(fraction)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    lam = np.clip(lam, 0.0, None)
    total = float(lam.sum())
    if total <= 0.0:
        raise ValueError("eigenvalue spectrum is identically zero")
    cum = np.cumsum(lam)
    return int(np.searchsorted(cum, fraction * total, side="left")) + 1


def project(b: ProjectionMatrix, s: np.ndarray) -> np.ndarray:
    """Coordinates of (standardized) summary vectors in the retained basis."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != b.source_dim:
        raise ValueError(f"expected vectors of dimension {b.source_dim}, got shape {s.shape}")
    return s @ b.b


_PROJECTION_FORMAT = "lgkdr-projection"
_PROJECTION_VERSION = 1


def save_projection(path, proj: ProjectionMatrix, kernel: KernelParams) -> None:
    """Versioned plain-text persistence; values round-trip exactly."""
    lines = [
        f"{_PROJECTION_FORMAT} {_PROJECTION_VERSION}",
        f"dims {proj.source_dim} {proj.target_dim}",
        f"kernel {fmt_float(kernel.sigma_s)} {fmt_float(kernel.sigma_theta)} {fmt_float(kernel.eps_n)}",
    ]
    lines.extend(" ".join(fmt_float(x) for x in row) for row in proj.b)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_projection(path) -> tuple[ProjectionMatrix, KernelParams]:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != _PROJECTION_FORMAT:
        raise ValueError(f"{path}: not a projection file")
    if head[1] != str(_PROJECTION_VERSION):
        raise ValueError(f"{path}: unsupported projection file version {head[1]}")
    try:
        _, m_str, d_str = lines[1].split()
        m, d = int(m_str), int(d_str)
        _, sig_s, sig_t, eps = lines[2].split()
        kernel = KernelParams(float(sig_s), float(sig_t), float(eps))
        rows = [list(map(float, ln.split())) for ln in lines[3 : 3 + m] if ln]
        b = np.asarray(rows, dtype=float)
        if b.shape != (m, d):
            raise ValueError(f"expected a {m} x {d} matrix, got shape {b.shape}")
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed projection file: {exc}") from exc
    return ProjectionMatrix(b=b), kernel
