import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afrelay.channel import (
    KroneckerErrorModel,
    TwoHopChannel,
    kron_error_sample,
    matrix_from_json,
    matrix_to_json,
    psd_sqrt,
    rayleigh_channel,
    svd_sorted,
    truncate_svd,
)
from afrelay.errors import InvalidInputError


def test_identity_svd():
    svd = svd_sorted(np.eye(2))
    np.testing.assert_allclose(svd.singular_values, [1, 1])
    np.testing.assert_allclose(svd.left, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(svd.right, np.eye(2), atol=1e-15)


def test_svd_sorts_values():
    svd = svd_sorted(np.diag([1.0, 3.0]))
    np.testing.assert_allclose(svd.singular_values, [3, 1])
    np.testing.assert_allclose(np.abs(svd.left), [[0, 1], [1, 0]], atol=1e-15)


def test_svd_reconstruction(rng):
    h = rayleigh_channel(4, 3, rng)
    svd = svd_sorted(h)
    assert np.linalg.norm(svd.reconstruct() - h) <= 1e-9 * np.linalg.norm(h)
    np.testing.assert_allclose(svd.eigenvalues, svd.singular_values ** 2)


def test_svd_deterministic_and_idempotent(rng):
    h = rayleigh_channel(3, 3, rng)
    a, b = svd_sorted(h), svd_sorted(h)
    np.testing.assert_array_equal(a.left, b.left)
    c = svd_sorted(a.reconstruct())
    np.testing.assert_allclose(c.left, a.left, atol=1e-12)
    np.testing.assert_allclose(c.right, a.right, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_singular_values_of_adjoint(rows, cols, seed):
    h = rayleigh_channel(rows, cols, np.random.default_rng(seed))
    np.testing.assert_allclose(svd_sorted(h).singular_values, svd_sorted(h.conj().T).singular_values, rtol=1e-12)


def test_truncate_full_rank_unchanged(rng):
    svd = svd_sorted(rayleigh_channel(3, 3, rng))
    left, vals, right = truncate_svd(svd, 3)
    np.testing.assert_array_equal(vals, svd.singular_values)


def test_truncate_prefix():
    _, vals, _ = truncate_svd(svd_sorted(np.diag([3.0, 2.0, 1.0])), 2)
    np.testing.assert_allclose(vals, [3, 2])


def test_truncation_is_best_low_rank(rng):
    h = rayleigh_channel(4, 4, rng)
    svd = svd_sorted(h)
    left, vals, right = truncate_svd(svd, 2)
    approx = left @ np.diag(vals) @ right.conj().T
    s = svd.singular_values
    assert np.linalg.norm(h - approx) ** 2 == pytest.approx(s[2] ** 2 + s[3] ** 2, rel=1e-10)


def test_rayleigh_determinism_and_shape():
    a = rayleigh_channel(3, 3, np.random.default_rng(5))
    b = rayleigh_channel(3, 3, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    assert rayleigh_channel(1, 1, np.random.default_rng(0)).shape == (1, 1)
    with pytest.raises(InvalidInputError):
        rayleigh_channel(0, 2, np.random.default_rng(0))


def test_rayleigh_unit_power(rng):
    h = rayleigh_channel(1, 1, rng, size=(100000,))
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.01)


def test_kron_zero_model(rng):
    model = KroneckerErrorModel(np.zeros((2, 2)), np.zeros((3, 3)))
    assert model.is_zero()
    np.testing.assert_array_equal(kron_error_sample(model, 2, 3, rng), 0)


def test_kron_identity_covariance(rng):
    model = KroneckerErrorModel(np.eye(3), np.eye(2))
    d = kron_error_sample(model, 3, 2, rng, size=(100000,))
    cov = np.mean(d @ np.swapaxes(d.conj(), -1, -2), axis=0) / 2
    np.testing.assert_allclose(cov, np.eye(3), atol=0.02)


@pytest.mark.parametrize("eps_row,eps_col", [(4.0, 1.0), (0.1, 2.0)])
def test_kron_scaled_identity_variance(rng, eps_row, eps_col):
    model = KroneckerErrorModel.scaled_identity(2, 2, eps_row, eps_col)
    d = kron_error_sample(model, 2, 2, rng, size=(100000,))
    assert np.mean(np.abs(d) ** 2) == pytest.approx(eps_row * eps_col, rel=0.02)


def test_kron_rejects_indefinite():
    with pytest.raises(InvalidInputError):
        KroneckerErrorModel(np.diag([1.0, -1.0]), np.eye(2))


def test_psd_sqrt_clamps_tiny_negative():
    m = np.diag([4.0, -1e-14])
    np.testing.assert_allclose(psd_sqrt(m), np.diag([2.0, 0.0]), atol=1e-12)
    with pytest.raises(InvalidInputError):
        psd_sqrt(np.diag([1.0, -1e-6]))


def test_two_hop_channel_validation(rng):
    with pytest.raises(InvalidInputError):
        TwoHopChannel(rayleigh_channel(3, 2, rng), rayleigh_channel(3, 4, rng))
    with pytest.raises(InvalidInputError):
        TwoHopChannel(rayleigh_channel(3, 2, rng), rayleigh_channel(3, 3, rng), num_streams=3)


def test_matrix_json_roundtrip(rng):
    h = rayleigh_channel(2, 3, rng)
    np.testing.assert_array_equal(matrix_from_json(matrix_to_json(h)), h)
