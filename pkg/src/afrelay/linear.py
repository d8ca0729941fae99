"""Linear transceiver designs for two-hop (and, through the same engine, L-hop) relaying.

Every design here shares one structure.  The source precoder and each relay
matrix are matched to the singular vectors of the hops they feed::

    U   = V_1 diag(sqrt(P_0)) S^H
    F_n = V_{n+1} diag(sqrt(lam_F,n)) Omega_n^H,   lam_F,n = P_n / (lam_n P_{n-1} + rho_n)

so the chain decouples into K scalar streams and the only remaining freedom
is the per-stream power ``P_n`` of every node and the stream rotation ``S``.
The receiver is always the Wiener filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .allocation import alternating_chain_allocation, chain_snrs, p1_value
from .channel import TwoHopChannel, svd_batch
from .errors import DegenerateChannelError, InfeasibleTargetError, InvalidInputError
from .mse import (
    PowerAllocation,
    TransceiverDesign,
    _h,
    chain_noise_covariance,
    mmse_matrix,
    noise_covariance,
    relay_tx_power,
    wiener_receiver,
)
from .objectives import Branch, dispatch_class, evaluate, get_objective
from .unitary import check_majorization, dft_or_hadamard, mean_equalizing_rotation, schur_horn_rotation


@dataclass
class DesignOptions:
    """Knobs of the P1 designs.

    Attributes
    ----------
    rotation : str
        ``"dft"`` (constant-modulus DFT/Hadamard matrix) or ``"givens"``
        (plane-rotation construction) for the equal-diagonal branch.
    sum_mse_convex : bool
        Treat SumMSE as Schur-convex (rotation branch) instead of concave.
    restarts : int
        Random restarts of the alternating allocation.
    seed : int or None
        Seed of the restart generator.
    tol, max_iter : float, int
        Alternating-allocation stopping rule.
    """

    rotation: str = "dft"
    sum_mse_convex: bool = False
    restarts: int = 0
    seed: Optional[int] = None
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if self.rotation not in ("dft", "givens"):
            raise InvalidInputError(f"rotation must be 'dft' or 'givens', got {self.rotation!r}")


@dataclass
class P1Solution:
    """Outcome of a power-constrained design."""

    design: TransceiverDesign
    allocation: PowerAllocation
    objective_value: float
    converged: bool
    iterations: int
    mse: np.ndarray = field(repr=False, default=None)

    def to_json(self):
        return {
            "design": self.design.to_json(),
            "allocation": self.allocation.to_json(),
            "objective_value": self.objective_value,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass
class ChainDesign:
    """Batched structured design of an L-hop chain.

    ``nodes[0]`` is the source precoder U, ``nodes[n]`` the matrix of relay n.
    """

    nodes: list
    g: np.ndarray
    mse: np.ndarray  # full MSE matrix under the Wiener receiver
    stream_mse: np.ndarray  # per-stream MSE before the rotation
    powers: np.ndarray  # (..., L, K)
    s_rotation: np.ndarray
    h_equiv: np.ndarray
    noise_cov: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def _truncated_svds(hops, k):
    out = []
    for i, h in enumerate(hops):
        u, s, v = svd_batch(h)
        if s.shape[-1] < k:
            raise InvalidInputError(f"hop {i + 1} supports at most {s.shape[-1]} streams, {k} requested")
        out.append((u[..., :k], s[..., :k] ** 2, v[..., :k]))
    return out


def _check_degenerate(lams):
    dead_hop = np.all(lams <= 0, axis=-1)  # (..., L)
    if np.any(dead_hop):
        raise DegenerateChannelError("a hop has no energy on the selected streams (all singular values are zero)")


def structured_chain_matrices(svds, powers, rhos, s_rotation=None):
    """Source precoder and relay matrices of the structured design for given powers.

    Parameters
    ----------
    svds : list of (left, lam, right)
        Truncated decompositions of each hop (``lam`` are squared singular values).
    powers : ndarray, shape (..., L, K)
    rhos : sequence of float, length L
    s_rotation : ndarray, shape (..., K, K), optional
    """
    left0, lam0, right0 = svds[0]
    u = right0 * np.sqrt(powers[..., 0, :])[..., None, :]
    if s_rotation is not None:
        u = u @ _h(s_rotation)
    nodes = [u]
    for n in range(1, len(svds)):
        prev_left, prev_lam, _ = svds[n - 1]
        _, _, right = svds[n]
        lam_f = powers[..., n, :] / (prev_lam * powers[..., n - 1, :] + rhos[n - 1])
        nodes.append((right * np.sqrt(lam_f)[..., None, :]) @ _h(prev_left))
    return nodes


def chain_equivalent(hops, nodes, rhos):
    """End-to-end channel ``H_L F_{L-1} ... F_1 H_1`` and destination noise covariance."""
    h_eq = hops[0]
    for n in range(1, len(hops)):
        h_eq = hops[n] @ nodes[n] @ h_eq
    cov = chain_noise_covariance(list(hops[1:]), list(nodes[1:]), list(rhos))
    return h_eq, cov


def chain_design(hops, rhos, budgets, k, spec, branch: Branch, options: DesignOptions = None,
                 rotation_fn: Optional[Callable] = None, check=True) -> ChainDesign:
    """Structured design of an L-hop chain (batched over leading dimensions).

    Parameters
    ----------
    hops : list of ndarray
        Hop channels ``H_1 .. H_L``; ``H_1`` leaves the source.
    rhos : sequence of float
        Noise variance at the receiving end of each hop.
    budgets : sequence of float or ndarray
        Per-node power budgets, source first.
    k : int
        Number of streams.
    spec : ObjectiveSpec or str
        Objective whose allocation criterion drives the power loading.
    branch : Branch
        ``CONCAVE`` keeps ``S = I``; ``CONVEX`` equalizes the MSE diagonal.
    rotation_fn : callable, optional
        Maps per-stream MSEs (..., K) to a rotation (..., K, K); overrides the branch rule.
    """
    options = options or DesignOptions()
    hops = [np.asarray(h, dtype=complex) for h in hops]
    if len(hops) < 1 or len(rhos) != len(hops):
        raise InvalidInputError("one noise variance per hop is required")
    for n in range(1, len(hops)):
        if hops[n].shape[-1] != hops[n - 1].shape[-2]:
            raise InvalidInputError(f"hop {n + 1} does not accept the output of hop {n}")
    svds = _truncated_svds(hops, k)
    lams = np.stack([s[1] for s in svds], axis=-2)
    _check_degenerate(lams)
    rng = np.random.default_rng(options.seed) if options.restarts else None
    alloc = alternating_chain_allocation(lams, rhos, budgets, spec, tol=options.tol, max_iter=options.max_iter,
                                         restarts=options.restarts, rng=rng)
    powers = alloc.powers
    stream = 1.0 - np.prod(chain_snrs(powers, lams, rhos) / (1.0 + chain_snrs(powers, lams, rhos)), axis=-2)
    batch = lams.shape[:-2]
    if rotation_fn is not None:
        s_rot = rotation_fn(stream)
    elif branch is Branch.CONVEX:
        if options.rotation == "dft":
            s_rot = np.broadcast_to(dft_or_hadamard(k), batch + (k, k))
        else:
            flat = stream.reshape(-1, k)
            s_rot = np.stack([mean_equalizing_rotation(m).s for m in flat]).reshape(batch + (k, k))
    else:
        s_rot = np.broadcast_to(np.eye(k, dtype=complex), batch + (k, k))
    nodes = structured_chain_matrices(svds, powers, rhos, s_rot)
    h_eq, cov = chain_equivalent(hops, nodes, rhos)
    g = wiener_receiver(h_eq, nodes[0], cov, 1.0, check=check)
    e = mmse_matrix(h_eq, nodes[0], cov, 1.0, check=check)
    return ChainDesign(nodes, g, e, stream, powers, s_rot, h_eq, cov, alloc.iterations, alloc.converged)


def _branch_for(spec, options):
    return dispatch_class(spec, nonlinear=False, sum_mse_convex=options.sum_mse_convex)


def _to_solution(channel, spec, cd: ChainDesign, p_s, p_r, dfe_mses=None, backward=None):
    branch_mses = np.real(np.diagonal(cd.mse)) if dfe_mses is None else dfe_mses
    design = TransceiverDesign(cd.nodes[0], cd.nodes[1], cd.g, cd.s_rotation, backward)
    alloc = PowerAllocation(cd.powers[0], cd.powers[1], p_s, p_r, int(cd.iterations), bool(cd.converged))
    value = evaluate(spec, np.clip(branch_mses, 1e-300, 1.0))
    return P1Solution(design, alloc, float(value), bool(cd.converged), int(cd.iterations), cd.mse)


def design_p1(channel: TwoHopChannel, spec, p_s, p_r, opts: DesignOptions = None) -> P1Solution:
    """Minimize an MSE objective under source and relay power budgets.

    Schur-concave objectives keep the streams unrotated; Schur-convex ones
    rotate them so that every stream ends with the same MSE.

    Raises
    ------
    DegenerateChannelError
        Either hop is identically zero.
    """
    spec = get_objective(spec)
    opts = opts or DesignOptions()
    if not (p_s > 0 and p_r > 0):
        raise InvalidInputError("power budgets must be positive")
    cd = chain_design([channel.h_sr, channel.h_rd], [channel.rho_1, channel.rho_2], [p_s, p_r],
                      channel.num_streams, spec, _branch_for(spec, opts), opts)
    return _to_solution(channel, spec, cd, p_s, p_r)


def design_p1_batch(h_sr, h_rd, rho_1, rho_2, k, spec, p_s, p_r, opts: DesignOptions = None, check=False):
    """Batched :func:`design_p1`: channels carry leading batch dimensions; returns a :class:`ChainDesign`."""
    spec = get_objective(spec)
    opts = opts or DesignOptions()
    return chain_design([h_sr, h_rd], [rho_1, rho_2], [p_s, p_r], k, spec, _branch_for(spec, opts), opts, check=check)


# ---------------------------------------------------------------------------
# naive amplify-and-forward baseline


def naf_matrices(h_sr, h_rd, rho_1, rho_2, k, p_s, p_r, check=True):
    """Scaled-identity source and relay matrices with the Wiener receiver (batched)."""
    h_sr = np.asarray(h_sr, dtype=complex)
    h_rd = np.asarray(h_rd, dtype=complex)
    n_r, n_s = h_sr.shape[-2:]
    u = np.sqrt(p_s / n_s) * np.eye(n_s, k, dtype=complex)
    received = np.sum(np.abs(h_sr @ u) ** 2, axis=(-2, -1)) + rho_1 * n_r
    c = np.sqrt(p_r / received)
    f = c[..., None, None] * np.eye(n_r)
    h_eq = h_rd @ f @ h_sr
    cov = noise_covariance(h_rd, f, rho_1, rho_2)
    u_b = np.broadcast_to(u, h_eq.shape[:-2] + u.shape)
    g = wiener_receiver(h_eq, u_b, cov, 1.0, check=check)
    return u_b, f, g, h_eq, cov


def naf_design(channel: TwoHopChannel, p_s, p_r) -> TransceiverDesign:
    """Naive AF: ``U = sqrt(P_S/N_S) I[:, :K]``, ``F = c I`` spending exactly ``P_R``, Wiener receiver."""
    if not (p_s > 0 and p_r > 0):
        raise InvalidInputError("power budgets must be positive")
    u, f, g, _, _ = naf_matrices(channel.h_sr, channel.h_rd, channel.rho_1, channel.rho_2, channel.num_streams, p_s, p_r)
    return TransceiverDesign(u, f, g)


def design_mse_matrix(channel: TwoHopChannel, design: TransceiverDesign):
    """MSE matrix of any linear design on a two-hop channel (Wiener or not)."""
    from .mse import mse_matrix

    h_eq = channel.h_rd @ design.f @ channel.h_sr
    cov = noise_covariance(channel.h_rd, design.f, channel.rho_1, channel.rho_2)
    return mse_matrix(design.g, h_eq, design.u, cov, 1.0)


# ---------------------------------------------------------------------------
# QoS power minimization


@dataclass(frozen=True)
class QoSTargets:
    """Per-stream MSE ceilings ``eta`` with ``0 < eta_k < 1``."""

    eta: tuple

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).ravel()
        if eta.size == 0 or np.any(~(eta > 0)) or np.any(~(eta < 1)):
            raise InfeasibleTargetError("QoS targets must satisfy 0 < eta_k < 1")
        object.__setattr__(self, "eta", tuple(float(x) for x in eta))

    def as_array(self):
        return np.asarray(self.eta)


def _stream_power(t, g1, g2):
    """Minimum total power reaching MSE ``t`` on one stream; ``g`` are gains over noise."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (1.0 + np.sqrt(g1 / g2 * (1.0 - t))) / t
        y = (x - 1.0) / (t * x - 1.0)
        a = (x - 1.0) / g1
        b = (y - 1.0) / g2
    off = t >= 1.0
    return np.where(off, 0.0, a), np.where(off, 0.0, b)


def per_stream_min_power(t, lam_sr, lam_rd, rho, rho_rd=None):
    """Cheapest source/relay power pair giving one stream the MSE ``t``.

    Returns
    -------
    (a, b) : floats
        Source and relay power; ``stream_mse(a, b, lam_sr, lam_rd, rho) == t``.
    """
    if not 0 < t < 1:
        raise InvalidInputError("target MSE must lie in (0, 1)")
    if not (lam_sr > 0 and lam_rd > 0):
        raise InvalidInputError("channel gains must be positive")
    rho_rd = rho if rho_rd is None else rho_rd
    a, b = _stream_power(t, lam_sr / rho, lam_rd / rho_rd)
    return float(a), float(b)


@dataclass
class QoSSolution:
    """P2 outcome with the intermediate quantities kept for inspection."""

    design: TransceiverDesign
    total_power: float
    allocation: PowerAllocation
    lam: np.ndarray  # per-stream MSE before the rotation
    achieved: np.ndarray  # per-stream MSE after the rotation
    method: str


def _stream_gains(channel):
    k = channel.num_streams
    svds = _truncated_svds([channel.h_sr, channel.h_rd], k)
    g1 = svds[0][1] / channel.rho_1
    g2 = svds[1][1] / channel.rho_2
    if np.any(g1 <= 0) or np.any(g2 <= 0):
        raise InfeasibleTargetError("a selected stream has zero gain; no finite power meets the targets")
    return svds, g1, g2


def _total_power(lam, g1, g2):
    a, b = _stream_power(lam, g1, g2)
    return float(np.sum(a) + np.sum(b))


_LAM_MAX = 1.0 - 1e-12


def _descend(x, cost, caps, to_lam, lower, upper, max_sweeps=200):
    """Pairwise-transfer and single-coordinate descent under prefix-sum caps.

    ``x`` lives in the search coordinates (MSE or log-MSE); the constraints are
    ``cumsum(x)[j] <= caps[j]`` and ``lower < x <= upper``.
    """
    k = x.size
    best = cost(to_lam(x))

    def slack(v):
        return caps - np.cumsum(v)

    for _ in range(max_sweeps):
        improved = False
        moves = [(i, None) for i in range(k)] + [(i, j) for i in range(k) for j in range(k) if i != j]
        for i, j in moves:
            sl = slack(x)
            if j is None:
                hi = min(np.min(sl[i:]), upper - x[i])
                lo = 0.0
            else:
                # move d from x[j] to x[i]; prefix sums between the two shift by +-d
                if i < j:
                    hi = np.min(sl[i:j]) if j > i else np.inf
                else:
                    hi = np.inf
                hi = min(hi, upper - x[i], x[j] - lower)
                lo = -min(x[i] - lower, upper - x[j], np.min(sl[j:i]) if j < i else np.inf)
            if not hi > lo or hi - lo < 1e-15:
                continue

            def f(d, i=i, j=j):
                v = x.copy()
                v[i] += d
                if j is not None:
                    v[j] -= d
                return cost(to_lam(v))

            res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
            cands = [(res.fun, res.x), (f(hi), hi), (f(lo), lo)]
            val, d = min(cands, key=lambda c: c[0])
            if val < best * (1.0 - 1e-12):
                x = x.copy()
                x[i] += d
                if j is not None:
                    x[j] -= d
                best = val
                improved = True
        if not improved:
            break
    return x, best


def _linear_lambda_search(eta, g1, g2):
    eta_sorted = np.sort(eta)
    caps = np.cumsum(eta_sorted)
    cost = lambda lam: _total_power(lam, g1, g2)  # noqa: E731
    x0 = eta_sorted.copy()
    lam, power = _descend(x0, cost, caps, lambda v: v, 1e-15, _LAM_MAX)
    return np.clip(lam, 1e-15, _LAM_MAX), power


def _dfe_lambda_search(eta, g1, g2, start):
    log_caps = np.cumsum(np.log(np.sort(eta)))
    cost = lambda lam: _total_power(lam, g1, g2)  # noqa: E731
    x0 = np.log(start)
    x, power = _descend(x0, cost, log_caps, np.exp, -745.0, np.log(_LAM_MAX))
    return np.exp(x), power


def capped_target(eta, total):
    """``min(eta, tau)`` with ``tau`` chosen so the entries sum to ``total``.

    When ``lam`` satisfies the ascending partial-sum caps of ``eta`` and sums
    to ``total``, this diagonal is always reachable from ``lam``: its partial
    sums coincide with those of ``eta`` up to the first capped entry and are
    linear afterwards, while those of ``lam`` are convex.
    """
    srt = np.sort(eta)
    k = srt.size
    prefix = np.concatenate([[0.0], np.cumsum(srt)])
    for m in range(k):
        tau = (total - prefix[m]) / (k - m)
        if tau <= srt[m]:
            return np.minimum(eta, tau)
    return eta.copy()


def slack_target(eta, lam, log_domain=False):
    """Diagonal to place with the rotation when ``lam`` does not use the whole budget of ``eta``.

    Tries a uniform shift of ``eta`` (a uniform scaling in the log domain),
    then a proportional rescaling, then :func:`capped_target`, returning the
    first one that is reachable from ``lam``.
    """
    if log_domain:
        x, y = np.log(lam), np.log(eta)
    else:
        x, y = lam, eta
    gap = y.sum() - x.sum()
    if gap <= 1e-15 * max(1.0, abs(y.sum())):
        return eta.copy()
    scale = x.sum() / y.sum()
    candidates = [y - gap / y.size, y * scale, capped_target(y, x.sum())]
    for c in candidates:
        if (log_domain or np.all(c > 0)) and check_majorization(x, c):
            return np.exp(c) if log_domain else c
    return np.exp(candidates[-1]) if log_domain else candidates[-1]


def _structured_design(channel, svds, powers_a, powers_b, s_rot):
    powers = np.stack([powers_a, powers_b])
    nodes = structured_chain_matrices(svds, powers, [channel.rho_1, channel.rho_2], s_rot)
    hops = [channel.h_sr, channel.h_rd]
    h_eq, cov = chain_equivalent(hops, nodes, [channel.rho_1, channel.rho_2])
    g = wiener_receiver(h_eq, nodes[0], cov, 1.0)
    return nodes, g, h_eq, cov


def _qos_solution(channel, svds, g1, g2, lam, s_rot, target, method):
    a, b = _stream_power(lam, g1, g2)
    total = float(np.sum(a) + np.sum(b))
    nodes, g, h_eq, cov = _structured_design(channel, svds, a, b, s_rot)
    design = TransceiverDesign(nodes[0], nodes[1], g, s_rot)
    alloc = PowerAllocation(a, b, float(np.sum(a)), float(np.sum(b)))
    return QoSSolution(design, total, alloc, lam, target, method)


def solve_p2(channel: TwoHopChannel, targets) -> QoSSolution:
    """Minimum total power meeting per-stream MSE ceilings with a linear receiver.

    The per-stream MSEs ``lam`` of the structured design are optimized over
    the majorization polytope of the targets by pairwise-transfer descent; the
    rotation then maps ``lam`` onto the target diagonal.  The better of that
    solution and the unrotated one (``lam = eta``) is returned.
    """
    eta = targets.as_array() if isinstance(targets, QoSTargets) else QoSTargets(tuple(np.ravel(targets))).as_array()
    k = channel.num_streams
    if eta.size != k:
        raise InvalidInputError(f"expected {k} targets, got {eta.size}")
    svds, g1, g2 = _stream_gains(channel)
    lam, power = _linear_lambda_search(eta, g1, g2)
    sa_power = _total_power(eta, g1, g2)
    if sa_power <= power:
        return _qos_solution(channel, svds, g1, g2, eta.copy(), np.eye(k, dtype=complex), eta.copy(), "unrotated")
    d = slack_target(eta, lam)
    rot = schur_horn_rotation(lam, d)
    return _qos_solution(channel, svds, g1, g2, lam, rot.s, rot.achieved_diag, "rotated")


def design_p2(channel: TwoHopChannel, targets):
    """QoS-constrained power minimization; returns ``(design, total_power)``."""
    sol = solve_p2(channel, targets)
    return sol.design, sol.total_power


def solve_sa_p2(channel: TwoHopChannel, targets) -> QoSSolution:
    eta = targets.as_array() if isinstance(targets, QoSTargets) else QoSTargets(tuple(np.ravel(targets))).as_array()
    if eta.size != channel.num_streams:
        raise InvalidInputError(f"expected {channel.num_streams} targets, got {eta.size}")
    svds, g1, g2 = _stream_gains(channel)
    return _qos_solution(channel, svds, g1, g2, eta.copy(), np.eye(eta.size, dtype=complex), eta.copy(), "unrotated")


def sa_design_p2(channel: TwoHopChannel, targets):
    """Baseline without rotation: stream ``k`` is driven straight to ``eta_k``."""
    sol = solve_sa_p2(channel, targets)
    return sol.design, sol.total_power


def p2_grid_oracle(channel: TwoHopChannel, targets, resolution=400):
    """Grid search over feasible ``(lam_1, lam_2)`` for ``K = 2``; returns the minimum total power."""
    eta = np.sort(np.asarray(targets.eta if isinstance(targets, QoSTargets) else targets, dtype=float))
    if eta.size != 2:
        raise InvalidInputError("the P2 grid oracle handles two streams")
    _, g1, g2 = _stream_gains(channel)
    grid = np.linspace(0.0, 1.0, resolution + 1)[1:]
    l1, l2 = np.meshgrid(grid, grid, indexing="ij")
    lam = np.stack([l1.ravel(), l2.ravel()], axis=-1)
    srt = np.sort(lam, axis=-1)
    ok = (srt[:, 0] <= eta[0] + 1e-15) & (srt.sum(axis=-1) <= eta.sum() + 1e-15) & (lam.max(axis=-1) < 1.0)
    a, b = _stream_power(lam[ok], g1, g2)
    return float(np.min(a.sum(axis=-1) + b.sum(axis=-1)))
