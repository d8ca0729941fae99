"""Designs that account for channel estimation errors.

The true channels are ``H = H_hat + Delta`` with Kronecker-structured errors
``Delta = Sigma^{1/2} W Psi^{1/2}``.  Averaging the MSE matrix over the errors
gives ``E_bar = G A G^H - G H_hat U - U^H H_hat^H G^H + I`` where the relay
sees the covariance

    R_r = H_hat_SR U U^H H_hat_SR^H + alpha Sigma_SR + rho_1 I,    alpha = tr(U U^H Psi_SR)

and the destination

    A = H_hat_RD F R_r F^H H_hat_RD^H + beta Sigma_RD + rho_2 I,   beta = tr(F R_r F^H Psi_RD).

With scaled-identity row covariances the error terms act as extra white noise
(``rho_1 + eps_SR alpha`` and ``rho_2 + eps_RD beta``), so the structured
design of :mod:`afrelay.linear` applies to the estimated channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import KroneckerErrorModel, TwoHopChannel, as_matrix, kron_error_sample
from .errors import InvalidInputError, UnsupportedConfigurationError
from .linear import DesignOptions, P1Solution, _branch_for, chain_design
from .mse import PowerAllocation, TransceiverDesign, _guarded_solve, _h, _herm, mse_matrix, noise_covariance
from .objectives import Branch, evaluate, get_objective


@dataclass(frozen=True)
class RobustChannelState:
    """Estimated channels with their error statistics.

    Attributes
    ----------
    h_sr_hat : ndarray, shape (N_R, N_S)
    h_rd_hat : ndarray, shape (N_D, N_R)
    err_sr, err_rd : KroneckerErrorModel
        Error covariances, shaped like the matching channel.
    rho_1, rho_2 : float
        Noise variances at relay and destination.
    num_streams : int
    """

    h_sr_hat: np.ndarray
    h_rd_hat: np.ndarray
    err_sr: KroneckerErrorModel
    err_rd: KroneckerErrorModel
    rho_1: float = 1.0
    rho_2: float = 1.0
    num_streams: int = 1

    def __post_init__(self):
        h_sr = as_matrix(self.h_sr_hat, "h_sr_hat")
        h_rd = as_matrix(self.h_rd_hat, "h_rd_hat")
        if self.err_sr.shape != h_sr.shape or self.err_rd.shape != h_rd.shape:
            raise InvalidInputError("error covariances do not match the channel dimensions")
        object.__setattr__(self, "h_sr_hat", h_sr)
        object.__setattr__(self, "h_rd_hat", h_rd)

    def estimated(self) -> TwoHopChannel:
        """The estimates packaged as a channel (what a non-robust design would use)."""
        return TwoHopChannel(self.h_sr_hat, self.h_rd_hat, self.rho_1, self.rho_2, self.num_streams)

    def sample_true(self, rng, size=None):
        """Draw true channels consistent with the estimates and error model."""
        d_sr = kron_error_sample(self.err_sr, *self.h_sr_hat.shape, rng, size=size)
        d_rd = kron_error_sample(self.err_rd, *self.h_rd_hat.shape, rng, size=size)
        return self.h_sr_hat + d_sr, self.h_rd_hat + d_rd


def _rhos(state, rho):
    return (state.rho_1, state.rho_2) if rho is None else (rho, rho)


def averaged_terms(state: RobustChannelState, u, f, rho=None):
    """Return ``(A, alpha, beta, R_r)`` of the error-averaged MSE."""
    rho_1, rho_2 = _rhos(state, rho)
    u = np.asarray(u, dtype=complex)
    f = np.asarray(f, dtype=complex)
    if u.shape[0] != state.h_sr_hat.shape[1] or f.shape != (state.h_sr_hat.shape[0],) * 2:
        raise InvalidInputError("precoder or relay matrix does not match the channel dimensions")
    uu = u @ _h(u)
    alpha = float(np.real(np.trace(uu @ state.err_sr.psi_col)))
    hu = state.h_sr_hat @ u
    r_r = _herm(hu @ _h(hu) + alpha * state.err_sr.sigma_row + rho_1 * np.eye(f.shape[0]))
    frf = _herm(f @ r_r @ _h(f))
    beta = float(np.real(np.trace(frf @ state.err_rd.psi_col)))
    a = _herm(state.h_rd_hat @ frf @ _h(state.h_rd_hat) + beta * state.err_rd.sigma_row
              + rho_2 * np.eye(state.h_rd_hat.shape[0]))
    return a, alpha, beta, r_r


def averaged_mse(state: RobustChannelState, u, f, g, rho=None):
    """MSE matrix averaged over the channel estimation errors.

    ``rho`` overrides both link noise variances when given.
    """
    a, _, _, _ = averaged_terms(state, u, f, rho)
    g = np.asarray(g, dtype=complex)
    u = np.asarray(u, dtype=complex)
    h_hat = state.h_rd_hat @ np.asarray(f, dtype=complex) @ state.h_sr_hat
    ghu = g @ h_hat @ u
    return _herm(g @ a @ _h(g) - ghu - _h(ghu) + np.eye(u.shape[1]))


def robust_wiener(state: RobustChannelState, u, f, rho=None):
    """Receiver ``U^H H_hat^H A^{-1}`` minimizing every diagonal entry of the averaged MSE."""
    a, _, _, _ = averaged_terms(state, u, f, rho)
    h_hat = state.h_rd_hat @ np.asarray(f, dtype=complex) @ state.h_sr_hat
    hu = h_hat @ np.asarray(u, dtype=complex)
    return _h(_guarded_solve(a, hu, "A"))


def robust_relay_power(state: RobustChannelState, u, f, rho=None):
    """Average relay transmit power ``tr{F R_r F^H}`` including the estimation-error term."""
    _, _, _, r_r = averaged_terms(state, u, f, rho)
    f = np.asarray(f, dtype=complex)
    return float(np.real(np.trace(f @ r_r @ _h(f))))


def monte_carlo_mse(state: RobustChannelState, u, f, g, draws, rng, chunk=2000):
    """Sample mean and standard error of the MSE matrix diagonal over error draws.

    For each draw the MSE is averaged over symbols and noise analytically.
    """
    u = np.asarray(u, dtype=complex)
    f = np.asarray(f, dtype=complex)
    g = np.asarray(g, dtype=complex)
    k = u.shape[1]
    total = np.zeros((k, k), dtype=complex)
    diag_sq = np.zeros(k)
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        h_sr, h_rd = state.sample_true(rng, size=(n,))
        h_eq = h_rd @ f @ h_sr
        cov = noise_covariance(h_rd, f, state.rho_1, state.rho_2)
        e = mse_matrix(g, h_eq, u, cov, 1.0)
        total += e.sum(axis=0)
        diag_sq += np.sum(np.real(np.diagonal(e, axis1=-2, axis2=-1)) ** 2, axis=0)
        done += n
    mean = total / draws
    var = diag_sq / draws - np.real(np.diag(mean)) ** 2
    return mean, np.sqrt(np.maximum(var, 0.0) / draws)


def _scaled_identity_eps(model: KroneckerErrorModel, what):
    s = model.sigma_row
    eps = float(np.real(s[0, 0]))
    if np.max(np.abs(s - eps * np.eye(s.shape[0]))) > 1e-12 * max(1.0, abs(eps)):
        raise UnsupportedConfigurationError(f"{what} row covariance must be a scaled identity for the closed-form design")
    return eps


def robust_design_p1(state: RobustChannelState, spec, p_s, p_r, opts: DesignOptions = None,
                     max_outer=20) -> P1Solution:
    """Structured design on the estimated channels that minimizes the error-averaged objective.

    Estimation errors are folded into effective link noise variances.  With a
    scaled-identity column covariance these are constants; otherwise they
    depend on the allocation and are refined by a fixed-point loop that keeps
    the best averaged objective seen.

    Raises
    ------
    UnsupportedConfigurationError
        A row covariance is not a scaled identity.
    """
    spec = get_objective(spec)
    opts = opts or DesignOptions()
    eps_sr = _scaled_identity_eps(state.err_sr, "source-relay")
    eps_rd = _scaled_identity_eps(state.err_rd, "relay-destination")
    if not (p_s > 0 and p_r > 0):
        raise InvalidInputError("power budgets must be positive")
    branch = _branch_for(spec, opts)
    hops = [state.h_sr_hat, state.h_rd_hat]
    k = state.num_streams
    # first guess: errors spread evenly, i.e. alpha = P_S tr(Psi)/N_S
    alpha = p_s * float(np.real(np.trace(state.err_sr.psi_col))) / state.h_sr_hat.shape[1]
    beta = p_r * float(np.real(np.trace(state.err_rd.psi_col))) / state.h_sr_hat.shape[0]
    best = None
    for it in range(max_outer):
        rhos = [state.rho_1 + eps_sr * alpha, state.rho_2 + eps_rd * beta]
        cd = chain_design(hops, rhos, [p_s, p_r], k, spec, branch, opts)
        u, f = cd.nodes
        spent = robust_relay_power(state, u, f)
        if spent > p_r:
            # the error term was priced with a stale alpha; shrink to stay within budget
            f = f * np.sqrt(p_r / spent)
        g = robust_wiener(state, u, f)
        e_bar = averaged_mse(state, u, f, g)
        mses = np.clip(np.real(np.diag(e_bar)), 1e-300, 1.0)
        value = float(evaluate(spec, mses))
        if best is None or value < best[0]:
            best = (value, cd, f, g, e_bar)
        _, alpha_new, beta_new, _ = averaged_terms(state, u, f)
        if abs(alpha_new - alpha) <= 1e-12 * max(1.0, alpha) and abs(beta_new - beta) <= 1e-12 * max(1.0, beta):
            break
        alpha, beta = alpha_new, beta_new
    value, cd, f, g, e_bar = best
    design = TransceiverDesign(cd.nodes[0], f, g, cd.s_rotation)
    alloc = PowerAllocation(cd.powers[0], cd.powers[1], p_s, p_r, int(cd.iterations), bool(cd.converged))
    return P1Solution(design, alloc, value, bool(cd.converged), int(cd.iterations), e_bar)
