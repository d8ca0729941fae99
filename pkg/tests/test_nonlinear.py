import numpy as np
import pytest

from afrelay.channel import TwoHopChannel
from afrelay.errors import DispatchError
from afrelay.linear import design_p1, design_p2, solve_p2
from afrelay.mse import gram_matrix, noise_covariance, stream_mse
from afrelay.nonlinear import backward_matrix, design_dfe_p1, design_dfe_p2, solve_dfe_p2


def _equiv(ch, d):
    return ch.h_rd @ d.f @ ch.h_sr, noise_covariance(ch.h_rd, d.f, ch.rho_1, ch.rho_2)


def _dfe_mse_matrix(ch, base):
    """MSE matrix of the DFE output with correct past decisions."""
    h, cov = _equiv(ch, base)
    k = base.u.shape[1]
    d = base.g @ h @ base.u - base.backward - np.eye(k)
    return d @ d.conj().T + base.g @ cov @ base.g.conj().T


def test_backward_trivial_cases(rng):
    h = rng.standard_normal((3, 3))
    b, l, d = backward_matrix(np.ones((3, 1)), h, np.eye(3), 1.0)
    assert b.shape == (1, 1) and b[0, 0] == 0
    b, _, _ = backward_matrix(np.eye(3), np.diag([1.0, 2.0, 3.0]), np.eye(3), 1.0)
    np.testing.assert_array_equal(b, 0)


def test_backward_factorization(channel, rng):
    u = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    f = rng.standard_normal((3, 3))
    h, cov = channel.h_rd @ f @ channel.h_sr, noise_covariance(channel.h_rd, f, 1.0, 1.0)
    b, l, d = backward_matrix(u, h, cov, 1.0)
    np.testing.assert_allclose(l @ l.conj().T, gram_matrix(h, u, cov) + np.eye(2), atol=1e-9)
    np.testing.assert_allclose(np.diag(d[:, None] * l.conj().T), 1.0, atol=1e-15)
    assert np.all(np.tril(b) == 0)


def test_dfe_design_geometric_mean():
    rng = np.random.default_rng(12)
    for _ in range(20):
        ch = TwoHopChannel.random(3, 3, 2, rng)
        dfe = design_dfe_p1(ch, "MaxMSE", 10.0, 10.0)
        a, b = dfe.allocation.a, dfe.allocation.b
        lam = stream_mse(a, b, ch.svd_sr.eigenvalues[:2], ch.svd_rd.eigenvalues[:2], 1.0)
        geo = np.exp(np.mean(np.log(lam)))
        np.testing.assert_allclose(dfe.mse, geo, rtol=1e-9)
        np.testing.assert_allclose(np.real(np.diag(_dfe_mse_matrix(ch, dfe.base))), geo, rtol=1e-9)
        assert np.prod(dfe.mse) == pytest.approx(np.prod(lam), rel=1e-9)
        assert geo <= lam.mean() + 1e-15
        linear = design_p1(ch, "MaxMSE", 10.0, 10.0)
        assert dfe.mse.max() <= np.real(np.diag(linear.mse)).max() + 1e-12


def test_dfe_equal_gains_matches_linear():
    ch = TwoHopChannel(np.eye(2), np.eye(2), num_streams=2)
    dfe = design_dfe_p1(ch, "MaxMSE", 4.0, 4.0)
    lin = design_p1(ch, "MaxMSE", 4.0, 4.0)
    np.testing.assert_allclose(dfe.mse, np.real(np.diag(lin.mse)), atol=1e-12)
    np.testing.assert_allclose(dfe.base.backward, 0, atol=1e-12)


def test_dfe_correct_decision_simulation(channel, rng):
    dfe = design_dfe_p1(channel, "MaxMSE", 10.0, 10.0)
    base = dfe.base
    n = 100000
    s = (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))) / np.sqrt(2)
    n1 = (rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))) / np.sqrt(2)
    n2 = (rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))) / np.sqrt(2)
    r = (s @ (channel.h_sr @ base.u).T + n1) @ (channel.h_rd @ base.f).T + n2
    err = np.abs(r @ base.g.T - s @ base.backward.T - s) ** 2
    se = err.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(err.mean(axis=0) - dfe.mse) <= 3 * se)


def test_dfe_rejects_unclassified_objective(channel):
    with pytest.raises(DispatchError):
        design_dfe_p1(channel, "SumSINR", 1.0, 1.0)
    with pytest.raises(DispatchError):
        design_dfe_p1(channel, "MutualInfo", 1.0, 1.0)


def test_dfe_qos_single_stream():
    ch = TwoHopChannel(np.eye(1) * 0.8, np.eye(1) * 1.2, 0.2, 0.2, 1)
    _, lin = design_p2(ch, (0.3,))
    _, dfe = design_dfe_p2(ch, (0.3,))
    assert dfe == pytest.approx(lin, rel=1e-12)


@pytest.mark.parametrize("eta", [(0.2, 0.2), (0.05, 0.3), (0.1, 0.1, 0.1), (0.02, 0.4, 0.2)])
def test_dfe_qos_power_and_targets(eta):
    rng = np.random.default_rng(13)
    for _ in range(15):
        ch = TwoHopChannel.random(3, 3, len(eta), rng)
        sol = solve_dfe_p2(ch, eta)
        lin = solve_p2(ch, eta)
        assert sol.total_power <= lin.total_power * (1 + 1e-9)
        assert np.all(sol.design.mse <= np.array(eta) + 1e-9)
        np.testing.assert_allclose(np.real(np.diag(_dfe_mse_matrix(ch, sol.design.base))), sol.design.mse, atol=1e-9)


def test_dfe_qos_equal_targets_is_gmd():
    rng = np.random.default_rng(14)
    ch = TwoHopChannel.random(3, 3, 3, rng)
    sol = solve_dfe_p2(ch, (0.1, 0.1, 0.1))
    assert np.ptp(sol.design.mse) <= 1e-9
    assert sol.design.mse[0] == pytest.approx(np.exp(np.mean(np.log(sol.lam))), rel=1e-9)
