import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgkdr_abc.errors import NumericalError
from lgkdr_abc.linalg import (
    KernelParams,
    SpdFactor,
    Standardizer,
    SymmetricMatrix,
    gaussian_kernel,
    gram_matrix,
    kernel_gradient,
    pairwise_sq_dists,
    regularized_factor,
    regularized_solve,
    sym_eig_top_d,
)

# Pinned point cloud shared by the gradient tests (rounded normal draws).
GRAD_PTS = np.array(
    [
        [-1.604, 0.064, 0.741],
        [0.153, 0.864, 2.913],
        [-1.479, 0.945, -1.666],
        [0.344, -0.512, 1.324],
    ]
)


def test_kernel_value_uses_sigma_squared_denominator():
    # exp(-||(0,0)-(1,1)||^2 / 2^2) = exp(-2/4) = exp(-0.5); a convention with
    # an extra factor 2 in the denominator would give exp(-0.25) instead.
    value = gaussian_kernel(np.array([0.0, 0.0]), np.array([1.0, 1.0]), 2.0)
    assert value == pytest.approx(0.6065306597126334, abs=1e-15)
    assert value != pytest.approx(np.exp(-0.25), abs=1e-3)


def test_kernel_is_one_at_zero_distance_and_symmetric():
    a = np.array([0.3, -1.2, 4.0])
    b = np.array([1.0, 0.5, -0.1])
    assert gaussian_kernel(a, a, 0.7) == 1.0
    assert gaussian_kernel(a, b, 0.7) == gaussian_kernel(b, a, 0.7)


@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=6),
    st.lists(st.floats(-50, 50), min_size=1, max_size=6),
    st.floats(0.1, 100),
)
def test_kernel_bounds(xs, ys, sigma):
    m = min(len(xs), len(ys))
    a, b = np.array(xs[:m]), np.array(ys[:m])
    value = gaussian_kernel(a, b, sigma)
    assert 0.0 <= value <= 1.0


def test_kernel_rejects_bad_inputs():
    with pytest.raises(ValueError):
        gaussian_kernel(np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel(np.zeros(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        gaussian_kernel(np.zeros(2), np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        gaussian_kernel(np.zeros(2), np.zeros(2), np.inf)


def test_pairwise_sq_dists_matches_loops():
    rng = np.random.default_rng(42)
    a = rng.normal(size=(5, 3))
    b = rng.normal(size=(4, 3))
    got = pairwise_sq_dists(a, b)
    want = np.array([[np.sum((x - y) ** 2) for y in b] for x in a])
    assert np.allclose(got, want, atol=1e-12)
    assert np.all(got >= 0.0)


def test_gram_matrix_unit_diagonal_and_psd():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(12, 4))
    g = gram_matrix(pts, 1.5)
    full = g.full()
    assert np.all(np.diag(full) == 1.0)
    assert np.allclose(full, full.T)
    assert g.is_psd()


def test_kernel_gradient_matches_finite_differences():
    sigma = 1.3
    anchor = 1
    grad = kernel_gradient(GRAD_PTS, anchor, sigma)

    def k(a, b):
        d = a - b
        return np.exp(-(d @ d) / sigma**2)

    h = 1e-6
    fd = np.zeros_like(grad)
    for j in range(GRAD_PTS.shape[0]):
        for c in range(GRAD_PTS.shape[1]):
            xp = GRAD_PTS[anchor].copy()
            xm = GRAD_PTS[anchor].copy()
            xp[c] += h
            xm[c] -= h
            fd[j, c] = (k(GRAD_PTS[j], xp) - k(GRAD_PTS[j], xm)) / (2 * h)
    fd[anchor, :] = 0.0
    assert np.max(np.abs(grad - fd)) < 1e-8


def test_kernel_gradient_frozen_row():
    # Derivative of k(s_3, .) at the anchor s_1, precomputed independently.
    grad = kernel_gradient(GRAD_PTS, 1, 1.3)
    frozen = np.array([0.016195424532206109, -0.11667489087076234, -0.13473575697212306])
    assert np.allclose(grad[3], frozen, atol=1e-15)


def test_kernel_gradient_anchor_row_exactly_zero():
    grad = kernel_gradient(GRAD_PTS, 2, 0.9)
    assert np.all(grad[2] == 0.0)


def test_spd_factor_solves_against_explicit_inverse():
    # A = [[4,1],[1,3]] has inverse (1/11) [[3,-1],[-1,4]]; with b = (1,2)
    # the solution is exactly (1/11, 7/11).
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    x = SpdFactor(a).solve(np.array([1.0, 2.0]))
    assert np.allclose(x, [1.0 / 11.0, 7.0 / 11.0], atol=1e-14)


def test_spd_factor_multiple_rhs():
    rng = np.random.default_rng(3)
    b = rng.normal(size=(6, 6))
    a = b @ b.T + 6 * np.eye(6)
    rhs = rng.normal(size=(6, 3))
    x = SpdFactor(a).solve(rhs)
    assert np.allclose(a @ x, rhs, atol=1e-10)


def test_spd_factor_reports_indefinite_matrix():
    with pytest.raises(NumericalError) as err:
        SpdFactor(np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalues 3 and -1
    assert err.value.pivot == 2


def test_regularized_factor_and_solve():
    pts = np.random.default_rng(11).normal(size=(8, 2))
    g = gram_matrix(pts, 1.0)
    rhs = np.eye(8)[:, :2]
    x = regularized_solve(g, 0.05, rhs)
    assert np.allclose((g.full() + 0.05 * np.eye(8)) @ x, rhs, atol=1e-10)
    with pytest.raises(ValueError):
        regularized_factor(g, -1e-3)


def test_sym_eig_matches_characteristic_polynomial_roots():
    # Eigenvalues of the pinned matrix below were recomputed from the
    # characteristic polynomial (Faddeev-LeVerrier coefficients, then roots),
    # eigenvectors from the SVD nullspace of (A - lambda I).
    a = SymmetricMatrix.from_full(
        np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
    )
    vals, vecs = sym_eig_top_d(a, 3)
    frozen_vals = [4.721570077747952, 2.3983430193370094, 1.8800869029150435]
    frozen_vecs = np.array(
        [
            [0.8388647614682253, 0.5095210652088142, 0.1915572918876563],
            [-0.4819496604261806, 0.858797174672029, -0.17375827344454675],
            [-0.2530423616352543, 0.05343872082877565, 0.9659781914382112],
        ]
    ).T
    assert np.allclose(vals, frozen_vals, atol=1e-10)
    assert np.allclose(vecs, frozen_vecs, atol=1e-8)

    top_vals, top_vecs = sym_eig_top_d(a, 2)
    assert np.allclose(top_vals, frozen_vals[:2], atol=1e-10)
    assert np.allclose(top_vecs, frozen_vecs[:, :2], atol=1e-8)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_sym_eig_descending_orthonormal_and_sign_fixed(seed, dim):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(dim, dim))
    m = SymmetricMatrix.from_full(b + b.T)
    vals, vecs = sym_eig_top_d(m, dim)
    assert np.all(np.diff(vals) <= 1e-12)
    assert np.allclose(vecs.T @ vecs, np.eye(dim), atol=1e-10)
    # reconstruction
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, m.full(), atol=1e-8)
    for col in range(dim):
        lead = np.argmax(np.abs(vecs[:, col]))
        assert vecs[lead, col] > 0.0


def test_symmetric_matrix_from_full_symmetrizes():
    a = np.array([[1.0, 2.0], [0.0, 3.0]])
    full = SymmetricMatrix.from_full(a).full()
    assert np.allclose(full, [[1.0, 1.0], [1.0, 3.0]])


def test_symmetric_matrix_psd_check():
    assert SymmetricMatrix.from_full(np.eye(3)).is_psd()
    assert not SymmetricMatrix.from_full(np.diag([1.0, -1.0])).is_psd()
    # tiny negative eigenvalues within tolerance still count as psd
    assert SymmetricMatrix.from_full(np.diag([1.0, -1e-12])).is_psd()


def test_standardizer_round_trip_and_constant_column():
    pts = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    std = Standardizer.fit(pts)
    z = std.transform(pts)
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-15)
    # constant column: scale 1, so it only gets centered
    assert np.allclose(z[:, 1], 0.0)
    assert std.scale[1] == 1.0
    # single vectors broadcast
    assert std.transform(pts[0]).shape == (2,)
    again = Standardizer.from_dict(std.to_dict())
    assert np.array_equal(again.mean, std.mean)
    assert np.array_equal(again.scale, std.scale)


def test_kernel_params_validation_and_round_trip():
    params = KernelParams(sigma_s=1.5, sigma_theta=2.0, eps_n=1e-3)
    assert KernelParams.from_dict(params.to_dict()) == params
    for bad in ({"sigma_s": 0.0}, {"sigma_theta": -1.0}, {"eps_n": 0.0}, {"sigma_s": np.nan}):
        kwargs = {"sigma_s": 1.0, "sigma_theta": 1.0, "eps_n": 1e-3, **bad}
        with pytest.raises(ValueError):
            KernelParams(**kwargs)
