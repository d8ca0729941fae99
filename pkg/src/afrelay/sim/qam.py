"""Gray-mapped square QAM with unit average symbol energy.

The first half of each symbol's bits selects the in-phase level and the
second half the quadrature level.  Along each axis level index ``i`` (Gray
decoded) maps to amplitude ``(L - 1) - 2 i``, so for 4-QAM the bits ``00``
give ``(1 + 1j) / sqrt(2)``.
"""

import numpy as np

from ..errors import InvalidInputError

SUPPORTED_ORDERS = (4, 16, 64)


def bits_per_symbol(m):
    if m not in SUPPORTED_ORDERS:
        raise InvalidInputError(f"QAM order must be one of {SUPPORTED_ORDERS}, got {m}")
    return int(np.log2(m))


def _axis(m):
    nb = bits_per_symbol(m) // 2
    levels = 1 << nb
    scale = 1.0 / np.sqrt(2.0 * (m - 1) / 3.0)
    return nb, levels, scale


def _gray_to_index(bits, nb):
    # bits: (..., nb) MSB first, Gray coded
    out = np.zeros(bits.shape[:-1], dtype=np.int64)
    acc = np.zeros(bits.shape[:-1], dtype=np.int64)
    for j in range(nb):
        acc = acc ^ bits[..., j]
        out = (out << 1) | acc
    return out


def _index_to_gray(idx, nb):
    g = idx ^ (idx >> 1)
    return np.stack([(g >> (nb - 1 - j)) & 1 for j in range(nb)], axis=-1).astype(np.uint8)


def qam_mod(bits, m):
    """Map a bit array (last axis a multiple of ``log2 m``) to symbols.

    Returns an array with the last axis shortened by ``log2 m``.
    """
    bits = np.asarray(bits)
    bps = bits_per_symbol(m)
    if bits.shape[-1] % bps:
        raise InvalidInputError(f"bit count {bits.shape[-1]} is not a multiple of {bps}")
    nb, levels, scale = _axis(m)
    grouped = bits.reshape(bits.shape[:-1] + (bits.shape[-1] // bps, bps)).astype(np.int64)
    i_idx = _gray_to_index(grouped[..., :nb], nb)
    q_idx = _gray_to_index(grouped[..., nb:], nb)
    return scale * ((levels - 1 - 2 * i_idx) + 1j * (levels - 1 - 2 * q_idx))


def _slice_axis(x, levels, scale):
    idx = np.rint(((levels - 1) - x / scale) / 2.0)
    return np.clip(idx, 0, levels - 1).astype(np.int64)


def qam_slice(values, m):
    """Nearest constellation point of every value."""
    nb, levels, scale = _axis(m)
    values = np.asarray(values)
    i_idx = _slice_axis(values.real, levels, scale)
    q_idx = _slice_axis(values.imag, levels, scale)
    return scale * ((levels - 1 - 2 * i_idx) + 1j * (levels - 1 - 2 * q_idx))


def qam_demod(values, m):
    """Nearest-neighbour demapping; the inverse of :func:`qam_mod` on clean symbols."""
    nb, levels, scale = _axis(m)
    values = np.asarray(values)
    i_bits = _index_to_gray(_slice_axis(values.real, levels, scale), nb)
    q_bits = _index_to_gray(_slice_axis(values.imag, levels, scale), nb)
    out = np.concatenate([i_bits, q_bits], axis=-1)
    return out.reshape(values.shape[:-1] + (values.shape[-1] * 2 * nb,))
