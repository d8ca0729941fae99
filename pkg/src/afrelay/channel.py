"""Channel matrices: random generation, sorted SVD, truncation, estimation errors.

All matrices are complex numpy arrays.  Functions that accept a leading batch
dimension say so explicitly; everything else works on a single matrix.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

_HERMITIAN_TOL = 1e-12
_PSD_TOL = 1e-12


def as_matrix(h, name="matrix"):
    """Validate and return ``h`` as a finite 2-D complex array."""
    arr = np.asarray(h)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr.astype(complex)


def _fix_phase(left, right):
    """Rotate singular-vector pairs so the dominant entry of each right vector is real positive.

    The dominant entry is the first index whose magnitude is within a relative
    1e-9 of the column maximum, which makes ties resolve by index.  Works on
    stacked matrices (leading batch dimensions).
    """
    mag = np.abs(right)
    peak = mag.max(axis=-2, keepdims=True)
    idx = np.argmax(mag >= peak * (1.0 - 1e-9), axis=-2)
    pivot = np.take_along_axis(right, idx[..., None, :], axis=-2)
    pmag = np.abs(pivot)
    phase = np.where(pmag > 0, pivot / np.where(pmag > 0, pmag, 1.0), 1.0)
    conj = np.conj(phase)
    return left * conj, right * conj


def svd_batch(h):
    """Thin SVD of a stack of matrices with the package sign convention.

    Parameters
    ----------
    h : ndarray, shape (..., m, n)

    Returns
    -------
    left : ndarray, shape (..., m, r)
    values : ndarray, shape (..., r)
        Singular values in non-increasing order, ``r = min(m, n)``.
    right : ndarray, shape (..., n, r)
        Right singular vectors as columns (``h = left @ diag(values) @ right^H``).
    """
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    v = np.conj(np.swapaxes(vh, -1, -2))
    u, v = _fix_phase(u, v)
    return u, s, v


@dataclass(frozen=True)
class ChannelSVD:
    """Singular triplets of a matrix, sorted by non-increasing singular value.

    Attributes
    ----------
    left : ndarray, shape (m, r)
        Left singular vectors (columns).
    singular_values : ndarray, shape (r,)
        Non-negative singular values, non-increasing.
    right : ndarray, shape (n, r)
        Right singular vectors (columns).
    """

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    @property
    def eigenvalues(self):
        """Squared singular values, i.e. the eigenvalues of ``H^H H``."""
        return self.singular_values ** 2

    def reconstruct(self):
        return (self.left * self.singular_values) @ self.right.conj().T


def svd_sorted(h) -> ChannelSVD:
    """Decompose ``h`` as ``left @ diag(values) @ right^H`` with a fixed phase convention.

    The entry of largest magnitude in each right singular vector is made real
    and positive (first index wins among ties within 1e-9), and the matching
    left vector is rotated by the same phase.

    Raises
    ------
    InvalidInputError
        If ``h`` is not a finite 2-D array.
    """
    arr = as_matrix(h, "h")
    u, s, v = svd_batch(arr)
    return ChannelSVD(u, s, v)


def truncate_svd(svd: ChannelSVD, k: int):
    """Return the leading ``k`` left vectors, singular values and right vectors."""
    r = svd.singular_values.shape[0]
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= r:
        raise InvalidInputError(f"k must be an integer in [1, {r}], got {k!r}")
    return svd.left[:, :k], svd.singular_values[:k], svd.right[:, :k]


def rayleigh_channel(rows: int, cols: int, rng, size=None):
    """I.i.d. unit-variance circularly symmetric complex Gaussian matrix.

    Parameters
    ----------
    rows, cols : int
        Matrix dimensions.
    rng : numpy.random.Generator
    size : tuple of int, optional
        Leading batch shape; the result then has shape ``size + (rows, cols)``.
    """
    if rows < 1 or cols < 1:
        raise InvalidInputError("rows and cols must be >= 1")
    shape = (tuple(size) if size is not None else ()) + (rows, cols)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def psd_sqrt(m, name="covariance"):
    """Hermitian square root of a PSD matrix via eigendecomposition.

    Eigenvalues in ``[-1e-12, 0)`` are treated as numerical drift and clamped;
    anything more negative is rejected.
    """
    m = np.asarray(m, dtype=complex)
    w, v = np.linalg.eigh(m)
    if np.any(w < -_PSD_TOL):
        raise InvalidInputError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


@dataclass(frozen=True)
class KroneckerErrorModel:
    """Separable covariance of a channel estimation error ``Δ = Σ^{1/2} W Ψ^{1/2}``.

    Attributes
    ----------
    sigma_row : ndarray
        Row covariance Σ (rows × rows), Hermitian PSD.
    psi_col : ndarray
        Column covariance Ψ (cols × cols), Hermitian PSD.
    """

    sigma_row: np.ndarray
    psi_col: np.ndarray

    def __post_init__(self):
        for name in ("sigma_row", "psi_col"):
            m = np.asarray(getattr(self, name), dtype=complex)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise InvalidInputError(f"{name} must be square")
            if not np.all(np.isfinite(m)):
                raise InvalidInputError(f"{name} contains non-finite entries")
            if np.max(np.abs(m - m.conj().T)) > _HERMITIAN_TOL * max(1.0, np.max(np.abs(m))):
                raise InvalidInputError(f"{name} is not Hermitian")
            if np.linalg.eigvalsh(m).min() < -_PSD_TOL:
                raise InvalidInputError(f"{name} is not positive semidefinite")
            object.__setattr__(self, name, m)

    @classmethod
    def scaled_identity(cls, rows, cols, eps_row, eps_col=1.0):
        return cls(eps_row * np.eye(rows), eps_col * np.eye(cols))

    @property
    def shape(self):
        return self.sigma_row.shape[0], self.psi_col.shape[0]

    def is_zero(self):
        return not (np.any(self.sigma_row) and np.any(self.psi_col))

    @functools.cached_property
    def _roots(self):
        return psd_sqrt(self.sigma_row, "sigma_row"), psd_sqrt(self.psi_col, "psi_col")


def kron_error_sample(model: KroneckerErrorModel, rows: int, cols: int, rng, size=None):
    """Draw an estimation error with row covariance Σ and column covariance Ψ.

    ``E{Δ Δ^H} = tr(Ψ) Σ`` and ``E{Δ^H Δ} = tr(Σ) Ψ^T`` hold in expectation.
    With ``size`` a batch of independent draws is returned.
    """
    if model.shape != (rows, cols):
        raise InvalidInputError(f"error model has shape {model.shape}, requested ({rows}, {cols})")
    s_half, p_half = model._roots
    w = rayleigh_channel(rows, cols, rng, size=size)
    return s_half @ w @ p_half


@dataclass(frozen=True)
class TwoHopChannel:
    """Source-relay-destination channel pair with per-link noise variances.

    Attributes
    ----------
    h_sr : ndarray, shape (N_R, N_S)
        Source-to-relay matrix.
    h_rd : ndarray, shape (N_D, N_R)
        Relay-to-destination matrix.
    rho_1, rho_2 : float
        Noise variance at the relay and at the destination.
    num_streams : int
        Number of data streams K.
    """

    h_sr: np.ndarray
    h_rd: np.ndarray
    rho_1: float = 1.0
    rho_2: float = 1.0
    num_streams: int = 1
    svd_sr: ChannelSVD = field(init=False, repr=False, compare=False)
    svd_rd: ChannelSVD = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h_sr = as_matrix(self.h_sr, "h_sr")
        h_rd = as_matrix(self.h_rd, "h_rd")
        if h_rd.shape[1] != h_sr.shape[0]:
            raise InvalidInputError(f"h_rd has {h_rd.shape[1]} columns but the relay has {h_sr.shape[0]} antennas")
        if not (self.rho_1 > 0 and self.rho_2 > 0):
            raise InvalidInputError("noise variances must be positive")
        k = self.num_streams
        if not isinstance(k, (int, np.integer)) or not 1 <= k <= min(h_sr.shape[0], h_sr.shape[1], h_rd.shape[0]):
            raise InvalidInputError(f"num_streams={k!r} exceeds the available spatial dimensions")
        object.__setattr__(self, "h_sr", h_sr)
        object.__setattr__(self, "h_rd", h_rd)
        object.__setattr__(self, "svd_sr", svd_sorted(h_sr))
        object.__setattr__(self, "svd_rd", svd_sorted(h_rd))

    @property
    def n_s(self):
        return self.h_sr.shape[1]

    @property
    def n_r(self):
        return self.h_sr.shape[0]

    @property
    def n_d(self):
        return self.h_rd.shape[0]

    @classmethod
    def random(cls, n_s, n_r, k, rng, rho_1=1.0, rho_2=1.0, n_d=None):
        n_d = n_s if n_d is None else n_d
        return cls(rayleigh_channel(n_r, n_s, rng), rayleigh_channel(n_d, n_r, rng), rho_1, rho_2, k)


def matrix_to_json(m):
    """Nested lists of ``[re, im]`` pairs."""
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_json(data):
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise InvalidInputError("expected nested rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]
