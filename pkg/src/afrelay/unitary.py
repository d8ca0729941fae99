"""Unitary rotations and triangular factorizations with prescribed diagonals.

* :func:`dft_or_hadamard` - constant-modulus unitary that equalizes any diagonal.
* :func:`mean_equalizing_rotation` / :func:`schur_horn_rotation` - real plane
  rotations placing prescribed values on the diagonal of ``S diag(lam) S^H``.
* :func:`gmd` / :func:`gtd` - ``diag(sigma) = Q R P^H`` with ``R`` upper
  triangular and a prescribed diagonal (all equal for the GMD).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTargetError, InvalidInputError

UNITARY_TOL = 1e-10
DIAG_TOL = 1e-9
_FEAS_TOL = 1e-9


@dataclass
class RotationResult:
    """Unitary ``s`` with the diagonal of ``s diag(lam) s^H`` it achieves.

    ``residual`` is the max deviation from the requested diagonal, recomputed
    from ``s`` rather than tracked during construction.
    """

    s: np.ndarray
    achieved_diag: np.ndarray
    residual: float


def _finalize(s, lam, target):
    achieved = np.real(np.einsum("ij,j,ij->i", s, lam, np.conj(s)))
    return RotationResult(s, achieved, float(np.max(np.abs(achieved - target))))


def hadamard(k):
    """Sylvester Hadamard matrix of order ``k`` (a power of two), unnormalized."""
    h = np.ones((1, 1))
    while h.shape[0] < k:
        h = np.block([[h, h], [h, -h]])
    return h


def dft_or_hadamard(k):
    """Normalized Walsh-Hadamard matrix when ``k`` is a power of two, else the DFT matrix.

    Every entry has magnitude ``1/sqrt(k)``, so ``diag(S diag(lam) S^H)`` is the
    constant vector ``mean(lam)`` for any ``lam``.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidInputError("k must be a positive integer")
    if k & (k - 1) == 0:
        return hadamard(k).astype(complex) / np.sqrt(k)
    n = np.arange(k)
    return np.exp(-2j * np.pi * np.outer(n, n) / k) / np.sqrt(k)


def _place(m, w, i, j, value):
    """Rotate coordinates (i, j) so that ``m[j, j]`` becomes ``value``.

    ``m`` is Hermitian with ``m[i, j] == 0`` and ``value`` lies between the two
    diagonal entries.  ``m`` and the accumulated unitary ``w`` are updated in
    place; ``m[i, i]`` becomes ``m[i, i] + m[j, j] - value``.
    """
    a = m[i, i].real
    b = m[j, j].real
    if abs(a - b) <= 1e-300:
        return
    s2 = min(max((value - b) / (a - b), 0.0), 1.0)
    s = np.sqrt(s2)
    c = np.sqrt(1.0 - s2)
    g = np.array([[c, s], [-s, c]])
    idx = [i, j]
    m[idx, :] = g @ m[idx, :]
    m[:, idx] = m[:, idx] @ g.T
    w[idx, :] = g @ w[idx, :]
    m[j, j] = value
    m[i, i] = a + b - value


def _as_real_vector(x, name):
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} must be a non-empty finite 1-D sequence")
    return v


def mean_equalizing_rotation(lam) -> RotationResult:
    """Rotation making every diagonal entry of ``S diag(lam) S^H`` equal to ``mean(lam)``.

    Uses at most ``K - 1`` plane rotations; each one pairs the current largest
    and smallest unfixed diagonal entries and pins one of them at the mean.
    """
    lam = _as_real_vector(lam, "lambda")
    k = lam.size
    mean = lam.mean()
    m = np.diag(lam).astype(complex)
    w = np.eye(k, dtype=complex)
    free = list(range(k))
    tol = 1e-15 * max(1.0, np.max(np.abs(lam)))
    while len(free) > 1:
        d = np.array([m[i, i].real for i in free])
        hi = free[int(np.argmax(d))]
        lo = free[int(np.argmin(d))]
        if d.max() - d.min() <= tol:
            break
        # pin whichever end is closer to the mean so the other keeps the slack
        if m[hi, hi].real - mean < mean - m[lo, lo].real:
            _place(m, w, lo, hi, mean)
            free.remove(hi)
        else:
            _place(m, w, hi, lo, mean)
            free.remove(lo)
    return _finalize(w, lam, np.full(k, mean))


def check_majorization(lam, target, tol=_FEAS_TOL):
    """True when ``target`` is majorized by ``lam`` (ascending partial sums of lam never exceed target's)."""
    a = np.cumsum(np.sort(lam))
    b = np.cumsum(np.sort(target))
    scale = max(1.0, float(np.max(np.abs(b))))
    return bool(np.all(a[:-1] <= b[:-1] + tol * scale) and abs(a[-1] - b[-1]) <= tol * scale)


def schur_horn_rotation(lam, target_diag) -> RotationResult:
    """Unitary ``S`` with ``diag(S diag(lam) S^H) = target_diag`` in the caller's order.

    Raises
    ------
    InvalidInputError
        Lengths differ or the traces differ by more than 1e-9.
    InfeasibleTargetError
        ``target_diag`` is not majorized by ``lam``.
    """
    lam = _as_real_vector(lam, "lambda")
    target = _as_real_vector(target_diag, "target_diag")
    if lam.size != target.size:
        raise InvalidInputError("lambda and target_diag have different lengths")
    scale = max(1.0, float(np.max(np.abs(target))))
    if abs(lam.sum() - target.sum()) > _FEAS_TOL * scale:
        raise InvalidInputError(f"trace mismatch: sum(lambda)={lam.sum():.12g}, sum(target)={target.sum():.12g}")
    if not check_majorization(lam, target):
        raise InfeasibleTargetError("target diagonal is not majorized by the eigenvalues")
    k = lam.size
    m = np.diag(lam).astype(complex)
    w = np.eye(k, dtype=complex)
    free = list(range(k))
    slot = np.empty(k, dtype=int)  # slot[p] = coordinate holding target p
    for p in range(k - 1):
        t = target[p]
        d = np.array([m[i, i].real for i in free])
        order = np.argsort(-d, kind="stable")
        vals = d[order]
        # adjacent pair (hi >= t >= lo) in the sorted free values
        pos = int(np.searchsorted(-vals, -t, side="right")) - 1
        pos = min(max(pos, 0), len(free) - 2)
        hi = free[order[pos]]
        lo = free[order[pos + 1]]
        if abs(m[hi, hi].real - t) <= abs(m[lo, lo].real - t) and abs(m[hi, hi].real - t) <= 1e-15 * scale:
            fixed = hi
        elif abs(m[lo, lo].real - t) <= 1e-15 * scale:
            fixed = lo
        else:
            _place(m, w, hi, lo, t)
            fixed = lo
        slot[p] = fixed
        free.remove(fixed)
    slot[k - 1] = free[0]
    s = w[slot, :]
    return _finalize(s, lam, target)


# ---------------------------------------------------------------------------
# triangular decompositions


def _log_majorized(log_sigma, log_target, tol=_FEAS_TOL):
    a = np.cumsum(np.sort(log_sigma, axis=-1), axis=-1)
    b = np.cumsum(np.sort(log_target, axis=-1), axis=-1)
    scale = np.maximum(1.0, np.max(np.abs(b), axis=-1))
    inner = np.all(a[..., :-1] <= b[..., :-1] + tol * scale[..., None], axis=-1)
    return inner & (np.abs(a[..., -1] - b[..., -1]) <= tol * scale)


def gtd_batch(sigma, target):
    """Stacked real GTD: ``diag(sigma) = Q R P^T`` with ``diag(R) = target``.

    Parameters
    ----------
    sigma, target : ndarray, shape (..., K)
        Positive values; feasibility (multiplicative majorization) is assumed.

    Returns
    -------
    q, r, p : ndarray, shape (..., K, K)
        Real orthogonal ``q``, ``p`` and upper-triangular ``r``.
    """
    sigma = np.asarray(sigma, dtype=float)
    target = np.broadcast_to(np.asarray(target, dtype=float), sigma.shape)
    batch = sigma.shape[:-1]
    k = sigma.shape[-1]
    sig = sigma.reshape(-1, k)
    tgt = target.reshape(-1, k)
    n = sig.shape[0]
    rows = np.arange(n)
    r = np.zeros((n, k, k))
    r[:, np.arange(k), np.arange(k)] = sig
    q = np.broadcast_to(np.eye(k), (n, k, k)).copy()
    p = q.copy()
    for step in range(k - 1):
        t = tgt[:, step]
        diag = r[:, np.arange(step, k), np.arange(step, k)]
        order = np.argsort(-diag, axis=1, kind="stable")
        vals = np.take_along_axis(diag, order, axis=1)
        pos = np.sum(vals >= t[:, None] * (1 - 1e-14), axis=1) - 1
        pos = np.clip(pos, 0, k - step - 2)
        i = step + order[rows, pos]
        j = step + order[rows, pos + 1]
        perm = np.broadcast_to(np.arange(k), (n, k)).copy()
        # move i to position step, then j (possibly displaced) to step + 1
        perm[rows, i], perm[rows, step] = perm[rows, step], perm[rows, i].copy()
        j = np.where(j == step, i, j)
        perm[rows, j], perm[rows, step + 1] = perm[rows, step + 1], perm[rows, j].copy()
        r = np.take_along_axis(np.take_along_axis(r, perm[:, :, None], axis=1), perm[:, None, :], axis=2)
        q = np.take_along_axis(q, perm[:, None, :], axis=2)
        p = np.take_along_axis(p, perm[:, None, :], axis=2)
        d1 = r[:, step, step]
        d2 = r[:, step + 1, step + 1]
        den = d1 * d1 - d2 * d2
        safe = den > 1e-300
        c2 = np.where(safe, (t * t - d2 * d2) / np.where(safe, den, 1.0), 1.0)
        c = np.sqrt(np.clip(c2, 0.0, 1.0))
        s = np.sqrt(np.clip(1.0 - c2, 0.0, 1.0))
        t_eff = np.sqrt(c * c * d1 * d1 + s * s * d2 * d2)
        g1 = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        g2 = np.stack([np.stack([c * d1, -s * d2], -1), np.stack([s * d2, c * d1], -1)], -2) / t_eff[:, None, None]
        sl = slice(step, step + 2)
        r[:, :, sl] = r[:, :, sl] @ g1
        r[:, sl, :] = np.swapaxes(g2, 1, 2) @ r[:, sl, :]
        r[:, step + 1, step] = 0.0
        q[:, :, sl] = q[:, :, sl] @ g2
        p[:, :, sl] = p[:, :, sl] @ g1
    shape = batch + (k, k)
    return q.reshape(shape), r.reshape(shape), p.reshape(shape)


def _as_positive(x, name):
    v = _as_real_vector(x, name)
    if np.any(v <= 0):
        raise InvalidInputError(f"{name} must be strictly positive")
    return v


def gtd(sigma, target_diag):
    """Generalized triangular decomposition ``diag(sigma) = Q R P^H``.

    ``R`` is upper triangular with ``diag(R) = target_diag`` (caller order),
    and has singular values ``sigma``.

    Raises
    ------
    InfeasibleTargetError
        ``target_diag`` is not multiplicatively majorized by ``sigma``.
    """
    sigma = _as_positive(sigma, "sigma")
    target = _as_positive(target_diag, "target_diag")
    if sigma.size != target.size:
        raise InvalidInputError("sigma and target_diag have different lengths")
    if not _log_majorized(np.log(sigma), np.log(target)):
        raise InfeasibleTargetError("target diagonal violates the partial-product (multiplicative majorization) condition")
    return gtd_batch(sigma, target)


def gmd(sigma):
    """Geometric mean decomposition: :func:`gtd` with every target equal to ``prod(sigma)^(1/K)``."""
    sigma = _as_positive(sigma, "sigma")
    g = np.exp(np.mean(np.log(sigma)))
    return gtd_batch(sigma, np.full(sigma.size, g))
