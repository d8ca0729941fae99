import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afrelay.channel import rayleigh_channel
from afrelay.errors import InvalidInputError, NumericalError
from afrelay.mse import (
    TransceiverDesign,
    chain_noise_covariance,
    chain_stream_mse,
    effective_noise_cov,
    mmse_matrix,
    mse_from_sinr,
    mse_matrix,
    noise_covariance,
    relay_tx_power,
    sinr_from_mse,
    stream_mse,
    wiener_receiver,
)

pos = st.floats(1e-3, 1e3)


def _instance(rng, n=3, k=2):
    h_sr = rayleigh_channel(n, n, rng)
    h_rd = rayleigh_channel(n, n, rng)
    u = rayleigh_channel(n, k, rng)
    f = rayleigh_channel(n, n, rng)
    return h_sr, h_rd, u, f


def test_effective_noise_cov_trivial():
    np.testing.assert_allclose(effective_noise_cov(np.eye(3), np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(effective_noise_cov(np.eye(3), np.eye(3)), 2 * np.eye(3))


def test_effective_noise_cov_random(rng):
    _, h_rd, _, f = _instance(rng)
    c = effective_noise_cov(h_rd, f)
    assert np.max(np.abs(c - c.conj().T)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(c)) >= 1 - 1e-12


def test_noise_covariance_per_link(rng):
    _, h_rd, _, f = _instance(rng)
    t = h_rd @ f
    np.testing.assert_allclose(noise_covariance(h_rd, f, 0.3, 2.0), 0.3 * t @ t.conj().T + 2.0 * np.eye(3), atol=1e-12)


def test_chain_noise_covariance_three_hops(rng):
    h2, h3 = rayleigh_channel(2, 2, rng), rayleigh_channel(2, 2, rng)
    f1, f2 = rayleigh_channel(2, 2, rng), rayleigh_channel(2, 2, rng)
    t1 = h3 @ f2 @ h2 @ f1
    t2 = h3 @ f2
    want = 0.5 * t1 @ t1.conj().T + 0.7 * t2 @ t2.conj().T + 0.9 * np.eye(2)
    np.testing.assert_allclose(chain_noise_covariance([h2, h3], [f1, f2], [0.5, 0.7, 0.9]), want, atol=1e-12)


@pytest.mark.parametrize("p,rho", [(1.0, 1.0), (10.0, 0.1), (0.5, 3.0)])
def test_scalar_chain(p, rho):
    u = np.array([[np.sqrt(p)]])
    one = np.eye(1)
    r_n = effective_noise_cov(one, one)
    g = wiener_receiver(one, u, r_n, rho)
    assert g[0, 0].real == pytest.approx(np.sqrt(p) / (p + 2 * rho), rel=1e-14)
    assert mse_matrix(g, one, u, r_n, rho)[0, 0].real == pytest.approx(2 * rho / (p + 2 * rho), rel=1e-13)
    assert mmse_matrix(one, u, r_n, rho)[0, 0].real == pytest.approx(2 * rho / (p + 2 * rho), rel=1e-13)


def test_zero_precoder(rng):
    h_sr, h_rd, _, f = _instance(rng)
    u = np.zeros((3, 2))
    h = h_rd @ f @ h_sr
    r_n = effective_noise_cov(h_rd, f)
    np.testing.assert_array_equal(wiener_receiver(h, u, r_n, 1.0), 0)
    np.testing.assert_allclose(mmse_matrix(h, u, r_n, 1.0), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(mse_matrix(np.zeros((2, 3)), h, rayleigh_channel(3, 2, rng), r_n, 1.0), np.eye(2))


def test_wiener_is_locally_optimal(rng):
    h_sr, h_rd, u, f = _instance(rng)
    h = h_rd @ f @ h_sr
    r_n = effective_noise_cov(h_rd, f)
    g = wiener_receiver(h, u, r_n, 0.5)
    base = np.real(np.diag(mse_matrix(g, h, u, r_n, 0.5)))
    for i in range(2):
        for j in range(3):
            for step in (1e-3, -1e-3, 1e-3j, -1e-3j):
                dg = np.zeros_like(g)
                dg[i, j] = step
                d = np.real(np.diag(mse_matrix(g + dg, h, u, r_n, 0.5)))
                assert np.all(d >= base - 1e-12)


def test_mse_matrix_matches_mmse_for_wiener(rng):
    h_sr, h_rd, u, f = _instance(rng)
    h = h_rd @ f @ h_sr
    r_n = noise_covariance(h_rd, f, 0.4, 1.3)
    g = wiener_receiver(h, u, r_n, 1.0)
    np.testing.assert_allclose(mse_matrix(g, h, u, r_n, 1.0), mmse_matrix(h, u, r_n, 1.0), atol=1e-10)


def test_mmse_non_increasing_in_source_power(rng):
    h_sr, h_rd, u, f = _instance(rng)
    h = h_rd @ f @ h_sr
    r_n = effective_noise_cov(h_rd, f)
    prev = np.ones(2)
    for scale in np.logspace(-2, 2, 30):
        d = np.real(np.diag(mmse_matrix(h, np.sqrt(scale) * u, r_n, 1.0)))
        assert np.all(d <= prev + 1e-12)
        prev = d


def test_ill_conditioned_solve_raises():
    with pytest.raises(NumericalError):
        mmse_matrix(np.eye(2), np.eye(2), np.diag([1.0, 1e-14]), 1.0)


def test_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        wiener_receiver(np.eye(3), np.eye(2), np.eye(3), 1.0)


def test_sinr_examples():
    assert sinr_from_mse(0.5) == 1.0
    assert sinr_from_mse(1.0) == 0.0
    assert sinr_from_mse(0.25) == 3.0
    with pytest.raises(InvalidInputError):
        sinr_from_mse(0.0)


@given(st.floats(1e-9, 1.0))
def test_sinr_mse_inverse(m):
    assert mse_from_sinr(sinr_from_mse(m)) == pytest.approx(m, rel=1e-12)


def test_relay_power_trivial(rng):
    h_sr, _, u, _ = _instance(rng)
    assert relay_tx_power(np.zeros((3, 3)), h_sr, u, 1.0) == 0.0
    assert relay_tx_power(np.eye(4), rayleigh_channel(4, 3, rng), np.zeros((3, 2)), 0.7) == pytest.approx(2.8)


def test_relay_power_monte_carlo(rng):
    h_sr, _, u, f = _instance(rng)
    rho = 0.6
    n = 100000
    s = (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))) / np.sqrt(2)
    noise = np.sqrt(rho / 2) * (rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3)))
    x = (s @ (h_sr @ u).T + noise) @ f.T
    p = np.sum(np.abs(x) ** 2, axis=1)
    se = p.std() / np.sqrt(n)
    assert abs(p.mean() - relay_tx_power(f, h_sr, u, rho)) <= 3 * se


def test_stream_mse_examples():
    assert stream_mse(0, 0, 1.0, 1.0, 0.5) == 1.0
    assert stream_mse(2.0, 4.0, 0.5, 0.25, 1.0) == pytest.approx(0.75)
    # rho (a lsr + b lrd + rho) / ((a lsr + rho)(b lrd + rho)) evaluated by hand
    assert stream_mse(1.0, 2.0, 2.0, 1.0, 0.1) == pytest.approx(0.09297052154195011, rel=1e-14)


def test_stream_mse_matches_chain_formula():
    a, b, ls, lr, rho = 1.3, 0.7, 2.2, 0.9, 0.4
    assert stream_mse(a, b, ls, lr, rho) == pytest.approx(chain_stream_mse([a * ls / rho, b * lr / rho]), abs=1e-14)
    assert stream_mse(a, b, ls, lr, rho, rho_rd=rho) == stream_mse(a, b, ls, lr, rho)


def test_chain_stream_mse_examples():
    assert chain_stream_mse([3.0]) == pytest.approx(0.25)
    assert chain_stream_mse([5.0, 0.0, 2.0]) == 1.0


@settings(max_examples=200)
@given(pos, pos, pos, pos, pos, st.floats(1.01, 10.0))
def test_stream_mse_monotone(a, b, ls, lr, rho, c):
    base = stream_mse(a, b, ls, lr, rho)
    tol = 1e-12
    assert stream_mse(a * c, b, ls, lr, rho) <= base + tol
    assert stream_mse(a, b * c, ls, lr, rho) <= base + tol
    assert stream_mse(a, b, ls * c, lr, rho) <= base + tol
    assert stream_mse(a, b, ls, lr * c, rho) <= base + tol
    assert stream_mse(a, b, ls, lr, rho * c) >= base - tol


def test_design_validation():
    with pytest.raises(InvalidInputError):
        TransceiverDesign(np.eye(2), np.eye(2), np.eye(2), s_rotation=2 * np.eye(2))
    with pytest.raises(InvalidInputError):
        TransceiverDesign(np.eye(2), np.eye(2), np.eye(2), backward=np.eye(2))
