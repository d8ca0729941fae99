"""Two-hop relaying through Q parallel relays.

Stacking the relays turns the system into a two-hop link whose relay matrix
must be block diagonal (relays do not share signals).  The unconstrained
structured relay matrix fixes the target product ``H_RD F``; each relay block
is then the least-squares fit to its column block of that target, and the
joint matrix is rescaled to the total relay power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import alternating_chain_allocation
from .channel import as_matrix, svd_batch
from .errors import DegenerateChannelError, InvalidInputError
from .mse import TransceiverDesign, _h, mmse_matrix, noise_covariance, relay_tx_power, wiener_receiver


@dataclass(frozen=True)
class MultiRelayChannel:
    """Per-relay channels of a parallel-relay link.

    Attributes
    ----------
    h_sr : tuple of ndarray
        Source-to-relay-q matrices, each (N_R, N_S).
    h_rd : tuple of ndarray
        Relay-q-to-destination matrices, each (N_D, N_R).
    rho_1, rho_2 : float
        Noise variance at every relay and at the destination.
    num_streams : int
    """

    h_sr: tuple
    h_rd: tuple
    rho_1: float = 1.0
    rho_2: float = 1.0
    num_streams: int = 1

    def __post_init__(self):
        h_sr = tuple(as_matrix(h, f"h_sr[{i}]") for i, h in enumerate(self.h_sr))
        h_rd = tuple(as_matrix(h, f"h_rd[{i}]") for i, h in enumerate(self.h_rd))
        if len(h_sr) < 1 or len(h_sr) != len(h_rd):
            raise InvalidInputError("need the same positive number of source-relay and relay-destination channels")
        if len({h.shape for h in h_sr}) != 1 or len({h.shape for h in h_rd}) != 1:
            raise InvalidInputError("all relays must share the same dimensions")
        if h_rd[0].shape[1] != h_sr[0].shape[0]:
            raise InvalidInputError("relay antenna counts of the two hops differ")
        if not (self.rho_1 > 0 and self.rho_2 > 0):
            raise InvalidInputError("noise variances must be positive")
        object.__setattr__(self, "h_sr", h_sr)
        object.__setattr__(self, "h_rd", h_rd)

    @property
    def num_relays(self):
        return len(self.h_sr)

    def stacked(self):
        """``(H_SR, H_RD)`` with the relays stacked: (Q N_R, N_S) and (N_D, Q N_R)."""
        return np.vstack(self.h_sr), np.hstack(self.h_rd)


@dataclass
class MultiRelaySolution:
    design: TransceiverDesign
    blocks: list
    fit_residual: float  # relative Frobenius misfit of H_RD F to the target
    sum_mse: float
    a: np.ndarray
    b: np.ndarray


def multirelay_matrices(h_sr_blocks, h_rd_blocks, rho_1, rho_2, k, p_s, p_r_total, check=True):
    """Batched multi-relay design.

    Parameters
    ----------
    h_sr_blocks : ndarray, shape (..., Q, N_R, N_S)
    h_rd_blocks : ndarray, shape (..., Q, N_D, N_R)

    Returns
    -------
    dict with ``u``, ``f`` (block diagonal), ``g``, ``mse``, ``blocks``,
    ``fit_residual``, ``a`` and ``b``.
    """
    h_sr_blocks = np.asarray(h_sr_blocks, dtype=complex)
    h_rd_blocks = np.asarray(h_rd_blocks, dtype=complex)
    batch = h_sr_blocks.shape[:-3]
    q, n_r, n_s = h_sr_blocks.shape[-3:]
    n_d = h_rd_blocks.shape[-2]
    h_sr = h_sr_blocks.reshape(batch + (q * n_r, n_s))
    h_rd = np.concatenate([h_rd_blocks[..., i, :, :] for i in range(q)], axis=-1)
    om_sr, s_sr, v_sr = svd_batch(h_sr)
    om_rd, s_rd, _ = svd_batch(h_rd)
    if s_sr.shape[-1] < k or s_rd.shape[-1] < k:
        raise InvalidInputError(f"the stacked channels support fewer than {k} streams")
    om_sr, lam_sr, v_sr = om_sr[..., :k], s_sr[..., :k] ** 2, v_sr[..., :k]
    om_rd, lam_rd = om_rd[..., :k], s_rd[..., :k] ** 2
    lams = np.stack([lam_sr, lam_rd], axis=-2)
    if np.any(np.all(lams <= 0, axis=-1)):
        raise DegenerateChannelError("a hop carries no energy")
    alloc = alternating_chain_allocation(lams, [rho_1, rho_2], [p_s, p_r_total], "sum_mse")
    a = alloc.powers[..., 0, :]
    b = alloc.powers[..., 1, :]
    u = v_sr * np.sqrt(a)[..., None, :]
    lam_f = b / (lam_sr * a + rho_1)
    target = (om_rd * np.sqrt(lam_rd * lam_f)[..., None, :]) @ _h(om_sr)  # (N_D, Q N_R)
    blocks = []
    fitted = np.zeros_like(target)
    for i in range(q):
        cols = slice(i * n_r, (i + 1) * n_r)
        f_q = np.linalg.pinv(h_rd_blocks[..., i, :, :]) @ target[..., cols]
        blocks.append(f_q)
        fitted[..., cols] = h_rd_blocks[..., i, :, :] @ f_q
    f = np.zeros(batch + (q * n_r, q * n_r), dtype=complex)
    for i, f_q in enumerate(blocks):
        f[..., i * n_r:(i + 1) * n_r, i * n_r:(i + 1) * n_r] = f_q
    spent = relay_tx_power(f, h_sr, u, rho_1)
    scale = np.sqrt(p_r_total / np.asarray(spent))
    f = f * scale[..., None, None]
    blocks = [f_q * scale[..., None, None] for f_q in blocks]
    resid = np.linalg.norm(fitted - target, axis=(-2, -1)) / np.maximum(np.linalg.norm(target, axis=(-2, -1)), 1e-300)
    h_eq = h_rd @ f @ h_sr
    cov = noise_covariance(h_rd, f, rho_1, rho_2)
    g = wiener_receiver(h_eq, u, cov, 1.0, check=check)
    e = mmse_matrix(h_eq, u, cov, 1.0, check=check)
    return {"u": u, "f": f, "g": g, "mse": e, "blocks": blocks, "fit_residual": resid, "a": a, "b": b,
            "h_sr": h_sr, "h_rd": h_rd}


def multirelay_design(channel: MultiRelayChannel, p_s, p_r_total) -> MultiRelaySolution:
    """Sum-MSE design with a block-diagonal relay matrix.

    With a single relay this is exactly the two-hop SumMSE design.
    """
    if not (p_s > 0 and p_r_total > 0):
        raise InvalidInputError("power budgets must be positive")
    k = channel.num_streams
    n_s = channel.h_sr[0].shape[1]
    if not 1 <= k <= min(n_s, channel.h_rd[0].shape[0]):
        raise InvalidInputError("too many streams for the source or destination")
    out = multirelay_matrices(np.stack(channel.h_sr), np.stack(channel.h_rd), channel.rho_1, channel.rho_2, k,
                              p_s, p_r_total)
    design = TransceiverDesign(out["u"], out["f"], out["g"])
    sum_mse = float(np.real(np.trace(out["mse"])))
    return MultiRelaySolution(design, out["blocks"], float(out["fit_residual"]), sum_mse, out["a"], out["b"])
