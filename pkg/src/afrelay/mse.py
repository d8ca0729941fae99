"""MSE and SINR analytics of the two-hop and multi-hop amplify-and-forward link.

Signal model at the destination::

    y = G (H U s + n_eff),    H = H_RD F H_SR,    cov(n_eff) = rho * R_n

With a single noise variance ``R_n = H_RD F F^H H_RD^H + I``.  When the two
links have different variances the full covariance ``C`` is passed as ``r_n``
together with ``rho = 1``; only the product ``rho * r_n`` enters any formula.

Matrix functions accept stacked inputs with leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError, NumericalError

COND_LIMIT = 1e12


def _h(x):
    return np.conj(np.swapaxes(x, -1, -2))


def _herm(m):
    return 0.5 * (m + _h(m))


def _check_conformable(*pairs):
    for a, b, what in pairs:
        if a.shape[-1] != b.shape[-2]:
            raise InvalidInputError(f"dimension mismatch in {what}: {a.shape} vs {b.shape}")


def _guarded_solve(m, rhs, what, check=True):
    if check:
        cond = np.linalg.cond(m)
        if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
            raise NumericalError(f"{what} is ill-conditioned (condition number {np.max(cond):.3e} > {COND_LIMIT:.0e})")
    try:
        return np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is singular") from exc


@dataclass
class TransceiverDesign:
    """Source precoder, relay matrix and receiver of one link.

    Attributes
    ----------
    u : ndarray, shape (N_S, K)
    f : ndarray, shape (N_R, N_R)
    g : ndarray, shape (K, N_D)
    s_rotation : ndarray, shape (K, K), optional
        Unitary applied to the streams (identity when absent).
    backward : ndarray, shape (K, K), optional
        Strictly upper-triangular feedback matrix of a decision-feedback receiver.
    """

    u: np.ndarray
    f: np.ndarray
    g: np.ndarray
    s_rotation: Optional[np.ndarray] = None
    backward: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.s_rotation is not None:
            s = np.asarray(self.s_rotation)
            if np.max(np.abs(s.conj().T @ s - np.eye(s.shape[0]))) > 1e-10:
                raise InvalidInputError("s_rotation is not unitary")
        if self.backward is not None:
            b = np.asarray(self.backward)
            if np.any(np.tril(b) != 0):
                raise InvalidInputError("backward matrix must be strictly upper triangular")

    @property
    def num_streams(self):
        return self.u.shape[1]

    def to_json(self):
        from .channel import matrix_to_json

        out = {"u": matrix_to_json(self.u), "f": matrix_to_json(self.f), "g": matrix_to_json(self.g)}
        if self.s_rotation is not None:
            out["s_rotation"] = matrix_to_json(self.s_rotation)
        if self.backward is not None:
            out["backward"] = matrix_to_json(self.backward)
        return out


@dataclass
class PowerAllocation:
    """Per-stream source powers ``a`` and relay powers ``b`` with their budgets.

    ``iterations`` and ``converged`` describe the allocator run that produced it.
    """

    a: np.ndarray
    b: np.ndarray
    p_s: float
    p_r: float
    iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if np.any(self.a < 0) or np.any(self.b < 0):
            raise InvalidInputError("powers must be non-negative")
        if self.a.sum() > self.p_s + 1e-9 or self.b.sum() > self.p_r + 1e-9:
            raise InvalidInputError("allocation exceeds its budget")

    def to_json(self):
        return {"a": self.a.tolist(), "b": self.b.tolist(), "p_s": self.p_s, "p_r": self.p_r}


def effective_noise_cov(h_rd, f):
    """``H_RD F F^H H_RD^H + I``: relay-forwarded plus destination noise (unit variances)."""
    h_rd = np.asarray(h_rd, dtype=complex)
    f = np.asarray(f, dtype=complex)
    _check_conformable((h_rd, f, "H_RD F"))
    t = h_rd @ f
    return _herm(t @ _h(t)) + np.eye(h_rd.shape[-2])


def noise_covariance(h_rd, f, rho_1, rho_2):
    """Destination noise covariance ``rho_1 H_RD F F^H H_RD^H + rho_2 I`` for distinct link variances."""
    return chain_noise_covariance([np.asarray(h_rd, dtype=complex)], [np.asarray(f, dtype=complex)], [rho_1, rho_2])


def chain_noise_covariance(hops_after, relays, rhos):
    """Noise covariance at the end of a chain of relays.

    Parameters
    ----------
    hops_after : list of ndarray
        Channels ``H_2 .. H_L`` (the hop leaving each relay).
    relays : list of ndarray
        Relay matrices ``F_1 .. F_{L-1}``.
    rhos : list of float
        Noise variances ``rho_1 .. rho_L`` at nodes 1..L.

    Returns
    -------
    ndarray
        ``sum_i rho_i T_i T_i^H + rho_L I`` with ``T_i`` the map from node i's
        noise to the destination.
    """
    if len(relays) != len(hops_after) or len(rhos) != len(relays) + 1:
        raise InvalidInputError("chain lengths are inconsistent")
    n_d = hops_after[-1].shape[-2]
    batch = np.broadcast_shapes(*(m.shape[:-2] for m in list(hops_after) + list(relays)))
    cov = rhos[-1] * np.broadcast_to(np.eye(n_d, dtype=complex), batch + (n_d, n_d))
    t = None
    for i in range(len(relays) - 1, -1, -1):
        _check_conformable((hops_after[i], relays[i], "H F"))
        step = hops_after[i] @ relays[i]
        t = step if t is None else t @ step
        cov = cov + rhos[i] * (t @ _h(t))
    return _herm(cov)


def wiener_receiver(h_equiv, u, r_n, rho, check=True):
    """Linear MMSE receiver ``U^H H^H (H U U^H H^H + rho R_n)^{-1}``.

    Raises
    ------
    NumericalError
        If the system matrix has condition number above 1e12.
    """
    h_equiv = np.asarray(h_equiv, dtype=complex)
    u = np.asarray(u, dtype=complex)
    _check_conformable((h_equiv, u, "H U"))
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    hu = h_equiv @ u
    m = _herm(hu @ _h(hu) + rho * np.asarray(r_n, dtype=complex))
    return _h(_guarded_solve(m, hu, "H U U^H H^H + rho R_n", check))


def mse_matrix(g, h_equiv, u, r_n, rho):
    """``(G H U - I)(G H U - I)^H + rho G R_n G^H`` for an arbitrary receiver G."""
    g = np.asarray(g, dtype=complex)
    h_equiv = np.asarray(h_equiv, dtype=complex)
    u = np.asarray(u, dtype=complex)
    _check_conformable((h_equiv, u, "H U"), (g, h_equiv, "G H"))
    k = u.shape[-1]
    d = g @ h_equiv @ u - np.eye(k)
    return _herm(d @ _h(d) + rho * (g @ np.asarray(r_n, dtype=complex) @ _h(g)))


def gram_matrix(h_equiv, u, r_n, check=True):
    """``U^H H^H R_n^{-1} H U`` (Hermitian)."""
    hu = np.asarray(h_equiv, dtype=complex) @ np.asarray(u, dtype=complex)
    x = _guarded_solve(np.asarray(r_n, dtype=complex), hu, "R_n", check)
    return _herm(_h(hu) @ x)


def mmse_matrix(h_equiv, u, r_n, rho, check=True):
    """MSE matrix under the Wiener receiver, ``rho (U^H H^H R_n^{-1} H U + rho I)^{-1}``."""
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    u = np.asarray(u, dtype=complex)
    k = u.shape[-1]
    m = gram_matrix(h_equiv, u, r_n, check) + rho * np.eye(k)
    return _herm(rho * _guarded_solve(m, np.broadcast_to(np.eye(k, dtype=complex), m.shape), "MSE system", check))


def sinr_from_mse(mse_kk):
    """``1/m - 1``.  Accepts scalars or arrays with entries in (0, 1]."""
    m = np.asarray(mse_kk, dtype=float)
    if np.any(~(m > 0)) or np.any(m > 1 + 1e-12):
        raise InvalidInputError("MSE values must lie in (0, 1]")
    out = np.maximum(1.0 / m - 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def mse_from_sinr(sinr):
    """Inverse of :func:`sinr_from_mse`."""
    s = np.asarray(sinr, dtype=float)
    if np.any(~(s >= 0)):
        raise InvalidInputError("SINR must be non-negative")
    out = 1.0 / (1.0 + s)
    return float(out) if out.ndim == 0 else out


def relay_tx_power(f, h_sr, u, rho):
    """Relay transmit power ``tr{F (H_SR U U^H H_SR^H + rho I) F^H}``."""
    f = np.asarray(f, dtype=complex)
    h_sr = np.asarray(h_sr, dtype=complex)
    u = np.asarray(u, dtype=complex)
    _check_conformable((f, h_sr, "F H_SR"), (h_sr, u, "H_SR U"))
    fhu = f @ h_sr @ u
    out = np.sum(np.abs(fhu) ** 2, axis=(-2, -1)) + rho * np.sum(np.abs(f) ** 2, axis=(-2, -1))
    return float(out) if np.ndim(out) == 0 else out


def stream_mse(a_k, b_k, lam_sr, lam_rd, rho, rho_rd=None):
    """Per-stream MSE of the structured two-hop design.

    ``rho (a lam_sr + b lam_rd + rho) / ((a lam_sr + rho)(b lam_rd + rho))``
    for a common noise variance; with ``rho_rd`` the two links use their own
    variances and the result is ``1 - s1 s2 / ((1 + s1)(1 + s2))``.
    Broadcasts over array arguments.
    """
    args = [np.asarray(x, dtype=float) for x in (a_k, b_k, lam_sr, lam_rd)]
    if any(np.any(x < 0) for x in args) or not rho > 0 or (rho_rd is not None and not rho_rd > 0):
        raise InvalidInputError("powers and gains must be non-negative and noise variances positive")
    a, b, ls, lr = args
    if rho_rd is None or rho_rd == rho:
        x = a * ls
        y = b * lr
        out = rho * (x + y + rho) / ((x + rho) * (y + rho))
    else:
        out = chain_stream_mse(np.stack(np.broadcast_arrays(a * ls / rho, b * lr / rho_rd), axis=-1))
    return float(out) if out.ndim == 0 else out


def chain_stream_mse(per_hop_snrs):
    """``1 - prod_i s_i / (1 + s_i)`` over the last axis."""
    s = np.asarray(per_hop_snrs, dtype=float)
    if np.any(s < 0):
        raise InvalidInputError("per-hop SNRs must be non-negative")
    out = 1.0 - np.prod(s / (1.0 + s), axis=-1)
    return float(out) if out.ndim == 0 else out
