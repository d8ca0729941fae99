"""Symbol detection at the destination."""

import numpy as np

from .qam import qam_demod, qam_slice


def _apply(g, y):
    return np.einsum("...ij,...j->...i", g, y)


def detect_linear(y, g, m):
    """Slice ``G y`` stream by stream; ``y`` has shape (..., N_D)."""
    return qam_demod(_apply(g, y), m)


def detect_dfe(y, g, b, m):
    """Successive detection from the last stream to the first.

    Each decision is fed back through the strictly upper-triangular ``B``,
    so stream ``k`` is sliced from ``(G y)_k - sum_{j > k} B_kj s_hat_j``.
    Decisions are the detector's own, errors propagate.
    """
    z = _apply(g, y)
    k = z.shape[-1]
    decided = np.zeros_like(z)
    for i in range(k - 1, -1, -1):
        fb = np.einsum("...j,...j->...", b[..., i, i + 1:], decided[..., i + 1:])
        decided[..., i] = qam_slice(z[..., i] - fb, m)
    return qam_demod(decided, m)
