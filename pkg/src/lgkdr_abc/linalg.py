"""Gaussian kernel evaluations and the dense linear algebra they feed.

Conventions pinned here and relied on by every other module:

* The Gaussian kernel is ``exp(-||a - b||^2 / sigma^2)``. The bandwidth
  enters squared but WITHOUT the conventional factor of two; bandwidth
  selection (median heuristic, cross-validation grids) absorbs the
  convention.
* Summary vectors are standardized per coordinate (mean 0, sd 1, fit on the
  training set) before any kernel or distance evaluation. ``Standardizer``
  is the single implementation of that rule; coordinates that are constant
  in the training data keep scale 1 so they pass through unchanged.
* Symmetric matrices travel as ``SymmetricMatrix`` (packed lower triangle),
  which makes symmetry exact by construction rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import get_lapack_funcs

from .errors import NumericalError

__all__ = [
    "KernelParams",
    "SymmetricMatrix",
    "Standardizer",
    "SpdFactor",
    "gaussian_kernel",
    "gram_matrix",
    "kernel_gradient",
    "pairwise_sq_dists",
    "regularized_factor",
    "regularized_solve",
    "sym_eig_top_d",
]


def _check_bandwidth(sigma: float) -> float:
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma <= 0.0:
        raise ValueError(f"bandwidth must be a positive finite number, got {sigma!r}")
    return sigma


@dataclass(frozen=True)
class KernelParams:
    """Bandwidths and ridge scale for one dimension-reduction fit.

    sigma_s
        Bandwidth of the kernel on (standardized) summary vectors.
    sigma_theta
        Bandwidth of the kernel on parameter vectors.
    eps_n
        Ridge scale: the regularizer added to the summary Gram matrix is
        ``n * eps_n`` for a training set of size n.
    """

    sigma_s: float
    sigma_theta: float
    eps_n: float

    def __post_init__(self):
        object.__setattr__(self, "sigma_s", _check_bandwidth(self.sigma_s))
        object.__setattr__(self, "sigma_theta", _check_bandwidth(self.sigma_theta))
        eps = float(self.eps_n)
        if not np.isfinite(eps) or eps <= 0.0:
            raise ValueError(f"eps_n must be a positive finite number, got {eps!r}")
        object.__setattr__(self, "eps_n", eps)

    def to_dict(self) -> dict:
        return {"sigma_s": self.sigma_s, "sigma_theta": self.sigma_theta, "eps_n": self.eps_n}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls(sigma_s=d["sigma_s"], sigma_theta=d["sigma_theta"], eps_n=d["eps_n"])


class SymmetricMatrix:
    """An m x m real symmetric matrix stored as its packed lower triangle."""

    __slots__ = ("dim", "_packed")

    def __init__(self, dim: int, packed: np.ndarray):
        dim = int(dim)
        packed = np.asarray(packed, dtype=float)
        if dim < 1:
            raise ValueError("dimension must be at least 1")
        if packed.shape != (dim * (dim + 1) // 2,):
            raise ValueError(
                f"packed storage for dim {dim} must have length {dim * (dim + 1) // 2}, "
                f"got shape {packed.shape}"
            )
        self.dim = dim
        self._packed = packed

    @classmethod
    def from_full(cls, a: np.ndarray) -> "SymmetricMatrix":
        """Pack a dense array, averaging ``a`` and ``a.T`` so floating-point
        asymmetry from upstream matrix products is absorbed here."""
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        sym = 0.5 * (a + a.T)
        return cls(a.shape[0], sym[np.tril_indices(a.shape[0])])

    def full(self) -> np.ndarray:
        out = np.empty((self.dim, self.dim))
        i, j = np.tril_indices(self.dim)
        out[i, j] = self._packed
        out[j, i] = self._packed
        return out

    def is_psd(self, tol: float = 1e-8) -> bool:
        """True when every eigenvalue is >= -tol * max|eigenvalue|."""
        w = np.linalg.eigvalsh(self.full())
        scale = float(np.max(np.abs(w)))
        if scale == 0.0:
            return True
        return bool(w[0] >= -tol * scale)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"SymmetricMatrix(dim={self.dim})"


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq = (
        np.sum(a * a, axis=1)[:, None]
        - 2.0 * (a @ b.T)
        + np.sum(b * b, axis=1)[None, :]
    )
    return np.maximum(sq, 0.0)


def gaussian_kernel(a: np.ndarray, b: np.ndarray, sigma: float) -> float:
    """``exp(-||a - b||^2 / sigma^2)`` (note: no factor 2 in the denominator)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"expected equal-length vectors, got shapes {a.shape} and {b.shape}")
    sigma = _check_bandwidth(sigma)
    diff = a - b
    return float(np.exp(-(diff @ diff) / (sigma * sigma)))


def gram_matrix(points: np.ndarray, sigma: float) -> SymmetricMatrix:
    """Gram matrix of the Gaussian kernel over rows of ``points``.

    The diagonal is exactly 1 and the result is positive semidefinite.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"expected an (n, m) array with n >= 1, got shape {pts.shape}")
    sigma = _check_bandwidth(sigma)
    k = np.exp(-pairwise_sq_dists(pts, pts) / (sigma * sigma))
    np.fill_diagonal(k, 1.0)
    return SymmetricMatrix.from_full(k)


def kernel_gradient(points: np.ndarray, query_index: int, sigma: float) -> np.ndarray:
    """Gradients of the kernel sections at one anchor point.

    Row j holds the gradient of ``s -> k(s_j, s)`` evaluated at the anchor
    ``s_i = points[query_index]``:  ``(2 / sigma^2) (s_j - s_i) k(s_j, s_i)``.
    The anchor's own row is exactly zero.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"expected an (n, m) array, got shape {pts.shape}")
    n = pts.shape[0]
    query_index = int(query_index)
    if not 0 <= query_index < n:
        raise ValueError(f"query_index {query_index} out of range for n={n}")
    sigma = _check_bandwidth(sigma)
    diffs = pts - pts[query_index]
    sq = np.einsum("ij,ij->i", diffs, diffs)
    kvals = np.exp(-sq / (sigma * sigma))
    grad = (2.0 / (sigma * sigma)) * diffs * kvals[:, None]
    grad[query_index, :] = 0.0
    return grad


class SpdFactor:
    """Cholesky factorization of a symmetric positive-definite matrix,
    computed once and reused for every right-hand side."""

    __slots__ = ("dim", "_c")

    def __init__(self, a: np.ndarray):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        (potrf,) = get_lapack_funcs(("potrf",), (a,))
        c, info = potrf(a, lower=1, overwrite_a=0)
        if info > 0:
            raise NumericalError(
                f"matrix is not positive definite (leading minor {int(info)})",
                pivot=int(info),
            )
        if info < 0:  # pragma: no cover - would indicate an internal bug
            raise ValueError(f"invalid argument {-int(info)} passed to potrf")
        self.dim = a.shape[0]
        self._c = c

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.dim:
            raise ValueError(f"right-hand side has {rhs.shape[0]} rows, expected {self.dim}")
        return cho_solve((self._c, True), rhs, check_finite=False)


def regularized_factor(g: SymmetricMatrix, ridge: float) -> SpdFactor:
    """Cholesky factor of ``G + ridge * I``."""
    if not isinstance(g, SymmetricMatrix):
        raise ValueError("g must be a SymmetricMatrix")
    ridge = float(ridge)
    if not np.isfinite(ridge) or ridge < 0.0:
        raise ValueError(f"ridge must be finite and >= 0, got {ridge!r}")
    a = g.full()
    a[np.diag_indices(g.dim)] += ridge
    return SpdFactor(a)


def regularized_solve(g: SymmetricMatrix, ridge: float, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(G + ridge I) X = rhs`` by Cholesky factorization."""
    return regularized_factor(g, ridge).solve(rhs)


def sym_eig_top_d(m: SymmetricMatrix, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-d eigenpairs of a symmetric matrix, eigenvalues descending.

    Sign convention: each eigenvector is flipped so its largest-magnitude
    component is positive (first index wins on exact ties). This removes the
    sign ambiguity of the decomposition, so repeated runs and positive
    rescalings of ``m`` reproduce the same basis.
    """
    if not isinstance(m, SymmetricMatrix):
        raise ValueError("m must be a SymmetricMatrix")
    d = int(d)
    if not 1 <= d <= m.dim:
        raise ValueError(f"d must be in [1, {m.dim}], got {d}")
    w, v = np.linalg.eigh(m.full())
    w = w[::-1][:d].copy()
    v = v[:, ::-1][:, :d].copy()
    for col in range(d):
        lead = int(np.argmax(np.abs(v[:, col])))
        if v[lead, col] < 0.0:
            v[:, col] = -v[:, col]
    return w, v


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-coordinate affine map ``x -> (x - mean) / scale`` fit on training
    data. Constant coordinates get scale 1 (left unchanged, not dropped)."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, points: np.ndarray) -> "Standardizer":
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"expected an (n, m) array with n >= 1, got shape {pts.shape}")
        mean = pts.mean(axis=0)
        sd = pts.std(axis=0)
        scale = np.where(sd > 0.0, sd, 1.0)
        return cls(mean=mean, scale=scale)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected vectors of dimension {self.dim}, got shape {x.shape}")
        return (x - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        mean = np.asarray(d["mean"], dtype=float)
        scale = np.asarray(d["scale"], dtype=float)
        if mean.shape != scale.shape or mean.ndim != 1:
            raise ValueError("malformed standardizer payload")
        return cls(mean=mean, scale=scale)
