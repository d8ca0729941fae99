"""Per-stream power loading for relay chains.

A chain has ``L`` hops; node ``l`` (source for ``l = 0``) puts power
``P[l, k]`` on stream ``k`` and hop ``l`` then delivers the per-stream SNR
``s[l, k] = P[l, k] * lam[l, k] / rho[l]``.  Stream ``k`` ends with MSE
``1 - prod_l s[l, k] / (1 + s[l, k])``.  Two-hop relaying is the case ``L = 2``
with ``P[0] = A`` (source) and ``P[1] = B`` (relay).

Fixing every node but one leaves a separable convex problem in that node's
powers whose stationarity condition has a closed-form per-stream response to
the budget multiplier; the multiplier itself is found by a bracketed search.
All routines broadcast over leading batch dimensions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError
from .mse import PowerAllocation
from .objectives import Branch, dispatch_class, evaluate, get_objective

CRITERIA = ("sum_mse", "log_mse", "sum_sinr", "log_sinr")
PRUNE = 1e-12
MAX_BISECTION = 200


def _criterion(spec_or_name):
    if spec_or_name in CRITERIA:
        return spec_or_name
    return get_objective(spec_or_name).allocation


def _snr_factor(s):
    return s / (1.0 + s)


def _response(mu, g, c, criterion):
    """Optimal per-stream SNR for multiplier ``mu`` (all arrays broadcast)."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if criterion == "log_sinr":
            x = g / mu
            s = 2.0 * x / (1.0 + np.sqrt(1.0 + 4.0 * (1.0 - c) * x))
        else:
            r = g * c / mu
            if criterion == "sum_mse":
                s = np.sqrt(r) - 1.0
            elif criterion == "log_mse":
                s = 2.0 * (r - 1.0) / ((2.0 - c) + np.sqrt(c * c + 4.0 * (1.0 - c) * r))
            else:  # sum_sinr
                s = (np.sqrt(r) - 1.0) / np.maximum(1.0 - c, 1e-15)
    return np.where((g > 0) & (c > 0), np.maximum(s, 0.0), 0.0)


def _waterfill(g, c, budget, criterion):
    """Powers minimizing the conditional criterion under ``sum(p) = budget``.

    Parameters
    ----------
    g : ndarray, shape (..., K)
        Own-hop gain over noise, ``lam / rho``.
    c : ndarray, shape (..., K)
        Product of ``s / (1 + s)`` over the other hops.
    budget : ndarray, shape (...)
    """
    g = np.asarray(g, dtype=float)
    c = np.asarray(c, dtype=float)
    budget = np.broadcast_to(np.asarray(budget, dtype=float), g.shape[:-1])
    live = (g > 0) & (c > 0)
    any_live = live.any(axis=-1)
    safe_g = np.where(live, g, 1.0)

    def power(logmu):
        s = _response(np.exp(logmu)[..., None], g, c, criterion)
        return np.sum(np.where(live, s / safe_g, 0.0), axis=-1)

    # bracket: every stream is off at mu_hi; the best single stream alone
    # already exceeds the budget at mu_lo (its response is >= sqrt(r) - 1).
    gc = np.where(live, g * (1.0 if criterion == "log_sinr" else c), 0.0)
    if criterion == "log_sinr":
        hi = np.log(np.maximum(np.sum(live, axis=-1), 1) / np.where(budget > 0, budget, 1.0))
    else:
        hi = np.log(np.where(any_live, np.max(gc, axis=-1), 1.0))
    lo_mu = np.max(np.where(live, gc / (1.0 + safe_g * budget[..., None]) ** 2, 0.0), axis=-1)
    lo = np.log(np.where(lo_mu > 0, lo_mu, 1.0)) - 1e-9
    a, b = np.minimum(lo, hi), hi
    fa = power(a) - budget
    fb = power(b) - budget
    best = np.where(np.abs(fa) < np.abs(fb), a, b)
    fbest = np.minimum(np.abs(fa), np.abs(fb))
    side = np.zeros(a.shape)
    tol_f = 1e-13 * np.maximum(budget, 1e-300)
    done = ~any_live | (fbest <= tol_f)
    for it in range(MAX_BISECTION):
        if np.all(done):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            x = (a * fb - b * fa) / (fb - fa)
        mid = 0.5 * (a + b)
        x = np.where(~np.isfinite(x) | (x <= a) | (x >= b) | (it % 3 == 2), mid, x)
        fx = power(x) - budget
        right = fx > 0
        fb = np.where(right & (side > 0), 0.5 * fb, fb)
        fa = np.where(~right & (side < 0), 0.5 * fa, fa)
        a = np.where(right, x, a)
        fa = np.where(right, fx, fa)
        b = np.where(right, b, x)
        fb = np.where(right, fb, fx)
        side = np.where(right, 1.0, -1.0)
        improve = np.abs(fx) < fbest
        best = np.where(improve & ~done, x, best)
        fbest = np.where(improve & ~done, np.abs(fx), fbest)
        done |= (fbest <= tol_f) | (b - a <= 1e-14 * (1.0 + np.abs(a)))
    if not np.all(done):
        raise NumericalError(f"multiplier search did not converge in {MAX_BISECTION} iterations (max residual {np.max(fbest):.3e})")
    s = _response(np.exp(best)[..., None], g, c, criterion)
    p = np.where(live, s / safe_g, 0.0)
    total = p.sum(axis=-1, keepdims=True)
    p = np.where(p < PRUNE * np.maximum(budget[..., None], 1e-300), 0.0, p)
    total = p.sum(axis=-1, keepdims=True)
    scale = np.where(total > 0, budget[..., None] / np.where(total > 0, total, 1.0), 0.0)
    return p * scale


def chain_snrs(powers, lams, rhos):
    """Per-hop SNRs ``P * lam / rho``; ``powers`` and ``lams`` have shape (..., L, K)."""
    return powers * lams / np.asarray(rhos, dtype=float)[:, None]


def criterion_value(powers, lams, rhos, criterion):
    """Value of the allocation criterion (minimized) for chain powers."""
    s = chain_snrs(powers, lams, rhos)
    prod = np.prod(_snr_factor(s), axis=-2)
    m = 1.0 - prod
    if criterion == "sum_mse":
        return np.sum(m, axis=-1)
    if criterion == "log_mse":
        return np.sum(np.log(m), axis=-1)
    alive = np.all(lams > 0, axis=-2)
    with np.errstate(divide="ignore"):
        sinr = prod / m
        if criterion == "sum_sinr":
            return -np.sum(sinr, axis=-1)
        return -np.sum(np.where(alive, np.log(np.where(alive, sinr, 1.0)), 0.0), axis=-1)


def conditional_update(powers, lams, rhos, budgets, node, criterion):
    """Return the waterfilled powers of ``node`` with every other node held fixed."""
    s = chain_snrs(powers, lams, rhos)
    f = _snr_factor(s)
    c = np.prod(np.delete(f, node, axis=-2), axis=-2)
    g = lams[..., node, :] / float(rhos[node])
    return _waterfill(g, c, budgets[..., node], criterion)


@dataclass
class ChainAllocation:
    """Batched outcome of the alternating algorithm."""

    powers: np.ndarray  # (..., L, K)
    objective: np.ndarray  # (...)
    iterations: np.ndarray  # (...)
    converged: np.ndarray  # (...)


def _alternate(lams, rhos, budgets, criterion, init, tol, max_iter):
    n = lams.shape[0]
    L = lams.shape[1]
    p = init.copy()
    obj = criterion_value(p, lams, rhos, criterion)
    iters = np.zeros(n, dtype=int)
    conv = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        pa = p[active]
        la = lams[active]
        ba = budgets[active]
        start = obj[active]
        cur = start
        for node in range(L):
            pa[:, node, :] = conditional_update(pa, la, rhos, ba, node, criterion)
            new = criterion_value(pa, la, rhos, criterion)
            slack = 1e-10 * np.maximum(np.abs(cur), 1.0)
            if np.any(new > cur + slack):
                worst = float(np.max(new - cur))
                raise NumericalError(f"alternating update increased the objective by {worst:.3e} at node {node}")
            cur = new
        p[active] = pa
        obj[active] = cur
        iters[active] = it
        change = np.abs(start - cur) <= tol * np.maximum(np.abs(cur), 1e-300)
        change |= ~np.isfinite(cur) & (start == cur)
        conv[active[change]] = True
        active = active[~change]
    return p, obj, iters, conv


def alternating_chain_allocation(lams, rhos, budgets, criterion, init=None, tol=1e-8, max_iter=500,
                                 restarts=0, rng=None):
    """Alternating conditional waterfilling over the nodes of a chain.

    Parameters
    ----------
    lams : ndarray, shape (..., L, K)
        Squared singular values of each hop, matched stream by stream.
    rhos : sequence of float, length L
        Noise variance at the receiving end of each hop.
    budgets : ndarray, shape (..., L) or (L,)
        Per-node power budgets.
    criterion : str or ObjectiveSpec
        Allocation criterion (see :data:`CRITERIA`) or an objective whose
        criterion is used.
    init : ndarray, shape (..., L, K), optional
        Feasible starting point; uniform split by default.
    restarts : int
        Extra runs from random Dirichlet starting points (``rng`` required);
        the best final objective is kept.

    Returns
    -------
    ChainAllocation
    """
    criterion = _criterion(criterion)
    lams = np.asarray(lams, dtype=float)
    if lams.ndim < 2:
        raise InvalidInputError("lams must have shape (..., L, K)")
    if np.any(lams < 0) or not np.all(np.isfinite(lams)):
        raise InvalidInputError("channel gains must be finite and non-negative")
    rhos = np.asarray(rhos, dtype=float)
    batch = lams.shape[:-2]
    L, k = lams.shape[-2:]
    if rhos.shape != (L,) or np.any(rhos <= 0):
        raise InvalidInputError("rhos must hold one positive noise variance per hop")
    budgets = np.broadcast_to(np.asarray(budgets, dtype=float), batch + (L,))
    if np.any(~(budgets > 0)):
        raise InvalidInputError("power budgets must be positive")
    flat_l = lams.reshape(-1, L, k)
    flat_b = budgets.reshape(-1, L)
    if init is None:
        start = np.repeat(flat_b[:, :, None] / k, k, axis=2)
    else:
        start = np.broadcast_to(np.asarray(init, dtype=float), batch + (L, k)).reshape(-1, L, k).copy()
        if np.any(start < 0) or np.any(start.sum(axis=-1) > flat_b * (1 + 1e-9) + 1e-12):
            raise InvalidInputError("initial allocation is infeasible")
    p, obj, iters, conv = _alternate(flat_l, rhos, flat_b, criterion, start, tol, max_iter)
    if restarts:
        if rng is None:
            raise InvalidInputError("random restarts need an rng")
        for _ in range(restarts):
            trial = rng.dirichlet(np.ones(k), size=(flat_l.shape[0], L)) * flat_b[:, :, None]
            p2, obj2, it2, conv2 = _alternate(flat_l, rhos, flat_b, criterion, trial, tol, max_iter)
            better = obj2 < obj
            p[better], obj[better], conv[better] = p2[better], obj2[better], conv2[better]
            iters += it2
    return ChainAllocation(p.reshape(batch + (L, k)), obj.reshape(batch), iters.reshape(batch), conv.reshape(batch))


def conditional_waterfill(fixed_other, lams_own, lams_other, rho, budget, spec, rho_other=None):
    """Optimal powers of one two-hop node with the other node's powers fixed.

    Parameters
    ----------
    fixed_other : array_like, shape (K,)
        Per-stream powers of the other node.
    lams_own, lams_other : array_like, shape (K,)
        Squared singular values of the hop driven by this node and of the other hop.
    rho : float
        Noise variance of this node's hop.
    budget : float
    spec : ObjectiveSpec, str
        Objective (or allocation criterion name).
    rho_other : float, optional
        Noise variance of the other hop (defaults to ``rho``).
    """
    if not budget > 0:
        raise InvalidInputError("budget must be positive")
    rho_other = rho if rho_other is None else rho_other
    own = np.asarray(lams_own, dtype=float)
    other = np.asarray(lams_other, dtype=float)
    fixed = np.asarray(fixed_other, dtype=float)
    s_other = fixed * other / rho_other
    return _waterfill(own / rho, _snr_factor(s_other), budget, _criterion(spec))


def alternating_power_allocation(lams_sr, lams_rd, rho, p_s, p_r, spec, init=None, rho_rd=None, restarts=0,
                                 rng=None, tol=1e-8, max_iter=500) -> PowerAllocation:
    """Two-hop alternating allocation; returns source powers ``a`` and relay powers ``b``.

    ``init`` is an optional ``(a, b)`` pair.  The number of sweeps and the
    convergence flag are attached as ``iterations`` and ``converged``.
    """
    rho_rd = rho if rho_rd is None else rho_rd
    lams = np.stack([np.asarray(lams_sr, dtype=float), np.asarray(lams_rd, dtype=float)])
    start = None if init is None else np.stack([np.asarray(init[0], float), np.asarray(init[1], float)])
    res = alternating_chain_allocation(lams, [rho, rho_rd], [p_s, p_r], spec, start, tol, max_iter, restarts, rng)
    return PowerAllocation(res.powers[0], res.powers[1], p_s, p_r, int(res.iterations), bool(res.converged))


def p1_value(spec, mses, branch=None):
    """P1 objective of per-stream MSEs after the branch's rotation.

    The rotation branches equalize the MSEs to their mean, the concave branch
    keeps them as they are.
    """
    spec = get_objective(spec)
    branch = dispatch_class(spec) if branch is None else branch
    mses = np.asarray(mses, dtype=float)
    if branch is Branch.CONVEX:
        mses = np.broadcast_to(mses.mean(axis=-1, keepdims=True), mses.shape)
    elif branch is Branch.DFE:
        mses = np.broadcast_to(np.exp(np.log(mses).mean(axis=-1, keepdims=True)), mses.shape)
    return evaluate(spec, mses, check=False)


def _simplex_grid(k, resolution):
    if k == 1:
        return np.ones((1, 1))
    pts = [c for c in itertools.product(range(resolution + 1), repeat=k - 1) if sum(c) <= resolution]
    pts = np.array(pts, dtype=float).reshape(-1, k - 1)
    return np.column_stack([pts, resolution - pts.sum(axis=1)]) / resolution


def grid_oracle_chain(lams, rhos, budgets, spec, resolution, branch=None, chunk=200000):
    """Exhaustive search over the product of per-node power simplices.

    Returns the best powers, shape (L, K), and their objective.
    """
    lams = np.asarray(lams, dtype=float)
    L, k = lams.shape
    grid = _simplex_grid(k, resolution)
    n = grid.shape[0]
    total = n ** L
    best_val, best_idx = np.inf, 0
    budgets = np.asarray(budgets, dtype=float)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = np.stack(np.unravel_index(idx, (n,) * L), axis=-1)
        powers = grid[digits] * budgets[None, :, None]
        m = 1.0 - np.prod(_snr_factor(chain_snrs(powers, lams, rhos)), axis=-2)
        vals = p1_value(spec, np.clip(m, 1e-300, 1.0), branch)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_idx = float(vals[j]), int(idx[j])
    digits = np.unravel_index(best_idx, (n,) * L)
    return grid[list(digits)] * budgets[:, None], best_val


def grid_oracle_p1(lams_sr, lams_rd, rho, p_s, p_r, spec, resolution=200, rho_rd=None, branch=None):
    """Grid-search reference for the two-hop allocation (``K <= 3``)."""
    k = len(lams_sr)
    if k > 3:
        raise InvalidInputError("the grid oracle is limited to K <= 3")
    rho_rd = rho if rho_rd is None else rho_rd
    powers, _ = grid_oracle_chain(np.stack([lams_sr, lams_rd]), [rho, rho_rd], [p_s, p_r], spec, resolution, branch)
    return PowerAllocation(powers[0], powers[1], p_s, p_r)
