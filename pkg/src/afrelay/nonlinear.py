"""Decision-feedback (DFE) receivers on top of the structured relay design.

With the Cholesky factorization ``L L^H = U^H H^H C^{-1} H U + I`` of the
(normalized) Gram matrix, the backward matrix ``B = D L^H - I`` and the
feedforward filter ``D L^H G_wiener`` with ``D = diag(1/L_kk)`` leave stream
``k`` with MSE ``1 / L_kk^2`` when earlier decisions are correct.  Noise
covariances here already include the link variances, so the ``rho`` of the
single-variance formulas is 1 and ``E = rho (L L^H)^{-1}`` holds verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import TwoHopChannel
from .errors import DispatchError, InfeasibleTargetError, NumericalError
from .linear import (
    DesignOptions,
    QoSTargets,
    _dfe_lambda_search,
    _linear_lambda_search,
    _stream_gains,
    _stream_power,
    _total_power,
    chain_design,
    chain_equivalent,
    slack_target,
    structured_chain_matrices,
)
from .mse import PowerAllocation, TransceiverDesign, _h, gram_matrix, wiener_receiver
from .objectives import SCHUR_CONVEX, Branch, evaluate, get_objective
from .unitary import _log_majorized, gtd_batch


@dataclass
class DfeDesign:
    """A linear design extended with a decision-feedback receiver.

    Attributes
    ----------
    base : TransceiverDesign
        ``g`` is the feedforward filter and ``backward`` the feedback matrix.
    l_factor : ndarray
        Lower-triangular Cholesky factor of the Gram matrix plus identity.
    d_scale : ndarray
        Positive diagonal ``1 / L_kk``.
    mse : ndarray
        Per-stream MSE ``1 / L_kk^2`` under correct past decisions.
    """

    base: TransceiverDesign
    l_factor: np.ndarray
    d_scale: np.ndarray
    mse: np.ndarray
    allocation: Optional[PowerAllocation] = None
    objective_value: Optional[float] = None


def backward_matrix(u, h_equiv, r_n, rho, check=True):
    """Feedback matrix ``B = D L^H - I`` with ``L L^H = U^H H^H R_n^{-1} H U + rho I``.

    Returns
    -------
    b : ndarray
        Strictly upper triangular (zero diagonal exactly).
    l : ndarray
        Lower-triangular factor with positive diagonal.
    d : ndarray
        Diagonal entries of ``D``, ``1 / L_kk``.
    """
    k = np.asarray(u).shape[-1]
    m = gram_matrix(h_equiv, u, r_n, check) + rho * np.eye(k)
    try:
        l = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Gram matrix is not positive definite") from exc
    diag = np.real(np.diagonal(l, axis1=-2, axis2=-1))
    d = 1.0 / diag
    b = np.triu(d[..., :, None] * _h(l), 1)
    return b, l, d


def dfe_filters(u, h_equiv, r_n, check=True):
    """Feedforward filter, backward matrix and per-stream MSEs of the DFE (unit-normalized noise)."""
    b, l, d = backward_matrix(u, h_equiv, r_n, 1.0, check)
    g_w = wiener_receiver(h_equiv, u, r_n, 1.0, check)
    g = d[..., :, None] * (_h(l) @ g_w)
    return g, b, l, d, d * d


def gmd_rotation(stream_mse):
    """Rotation ``S`` making every ``L_kk`` equal for per-stream MSEs ``stream_mse`` (batched).

    With ``diag(m^{-1/2}) = Q R P^T`` and ``S = P^T`` the rotated Gram-plus-identity
    matrix is ``R^T R``, whose Cholesky factor ``R^T`` has the geometric mean on its diagonal.
    """
    sig = 1.0 / np.sqrt(stream_mse)
    geo = np.exp(np.mean(np.log(sig), axis=-1, keepdims=True))
    _, _, p = gtd_batch(sig, np.broadcast_to(geo, sig.shape))
    return np.swapaxes(p, -1, -2).astype(complex)


def _require_convex(spec):
    spec = get_objective(spec)
    if spec.multiplicative_class != SCHUR_CONVEX:
        raise DispatchError(f"{spec.name} is not multiplicatively Schur-convex; the DFE design does not apply")
    return spec


def dfe_p1_batch(h_sr, h_rd, rho_1, rho_2, k, p_s, p_r, opts: DesignOptions = None, check=False):
    """Batched DFE design; returns ``(u, f, g_feedforward, backward, mse)``."""
    cd = chain_design([h_sr, h_rd], [rho_1, rho_2], [p_s, p_r], k, "ProdMSE", Branch.DFE, opts,
                      rotation_fn=gmd_rotation, check=check)
    g, b, _, _, mse = dfe_filters(cd.nodes[0], cd.h_equiv, cd.noise_cov, check)
    return cd.nodes[0], cd.nodes[1], g, b, mse


def design_dfe_p1(channel: TwoHopChannel, spec, p_s, p_r, opts: DesignOptions = None) -> DfeDesign:
    """DFE design for multiplicatively Schur-convex objectives.

    Powers minimize the product of the stream MSEs; the rotation from the
    geometric mean decomposition then gives every stream the geometric mean
    of the unrotated MSEs.

    Raises
    ------
    DispatchError
        ``spec`` is not multiplicatively Schur-convex.
    """
    spec = _require_convex(spec)
    cd = chain_design([channel.h_sr, channel.h_rd], [channel.rho_1, channel.rho_2], [p_s, p_r],
                      channel.num_streams, "ProdMSE", Branch.DFE, opts, rotation_fn=gmd_rotation)
    g, b, l, d, mse = dfe_filters(cd.nodes[0], cd.h_equiv, cd.noise_cov)
    base = TransceiverDesign(cd.nodes[0], cd.nodes[1], g, cd.s_rotation, b)
    alloc = PowerAllocation(cd.powers[0], cd.powers[1], p_s, p_r, int(cd.iterations), bool(cd.converged))
    return DfeDesign(base, l, d, mse, alloc, float(evaluate(spec, np.clip(mse, 1e-300, 1.0))))


@dataclass
class DfeQoSSolution:
    design: DfeDesign
    total_power: float
    lam: np.ndarray
    target: np.ndarray


def solve_dfe_p2(channel: TwoHopChannel, targets) -> DfeQoSSolution:
    """Minimum total power meeting MSE ceilings with a DFE receiver.

    The search over per-stream MSEs starts from the linear-receiver solution
    (always feasible here) under the partial-product constraints, so the
    returned power never exceeds the linear one.
    """
    eta = targets.as_array() if isinstance(targets, QoSTargets) else QoSTargets(tuple(np.ravel(targets))).as_array()
    k = channel.num_streams
    svds, g1, g2 = _stream_gains(channel)
    lam_lin, p_lin = _linear_lambda_search(eta, g1, g2)
    start = lam_lin if p_lin <= _total_power(eta, g1, g2) else np.sort(eta)
    if np.any(np.cumsum(np.log(start)) > np.cumsum(np.log(np.sort(eta))) + 1e-12):
        start = np.sort(eta)
    lam, _ = _dfe_lambda_search(eta, g1, g2, start)
    d = slack_target(eta, lam, log_domain=True)
    if not _log_majorized(np.log(lam), np.log(d)):
        raise InfeasibleTargetError("per-stream MSE ceilings violate the partial-product condition")
    a, b = _stream_power(lam, g1, g2)
    _, _, p = gtd_batch(1.0 / np.sqrt(lam), 1.0 / np.sqrt(d))
    s_rot = p.T.astype(complex)
    rhos = [channel.rho_1, channel.rho_2]
    nodes = structured_chain_matrices(svds, np.stack([a, b]), rhos, s_rot)
    h_eq, cov = chain_equivalent([channel.h_sr, channel.h_rd], nodes, rhos)
    g, bw, l, dd, mse = dfe_filters(nodes[0], h_eq, cov)
    base = TransceiverDesign(nodes[0], nodes[1], g, s_rot, bw)
    alloc = PowerAllocation(a, b, float(a.sum()), float(b.sum()))
    total = float(a.sum() + b.sum())
    return DfeQoSSolution(DfeDesign(base, l, dd, mse, alloc), total, lam, d)


def design_dfe_p2(channel: TwoHopChannel, targets):
    """QoS power minimization with a DFE receiver; returns ``(DfeDesign, total_power)``."""
    sol = solve_dfe_p2(channel, targets)
    return sol.design, sol.total_power
