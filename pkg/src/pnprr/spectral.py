"""Fourier-domain metric operator and bandlimited velocities.

The metric operator ``L`` has per-frequency symbol ``A(k) = (alpha * l(k) + 1)**c``
where ``l(k) = sum_i 2 (1 - cos(2 pi k_i / N_i))`` is the symbol of the
negative 5-point (7-point in 3D) Laplacian. ``K`` is its inverse. Both act
componentwise on vector fields of shape ``(d, *dims)`` and assume periodic
boundaries.

A velocity with band ``b`` keeps the frequencies ``|k_i| <= b - 1`` on every
axis, so ``b <= N_i / 2`` keeps the Nyquist frequency out and the field real.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DimensionError, ParameterError

DEFAULT_ALPHA = 1.5
DEFAULT_C = 3.0
DEFAULT_BAND = 16


def _axes(dims):
    d = len(dims)
    return tuple(range(-d, 0))


def _freq_index(n, half=False):
    """Integer frequency indices in numpy FFT order."""
    if half:
        return np.arange(n // 2 + 1)
    return np.fft.fftfreq(n, d=1.0 / n).round().astype(int)


def laplacian_symbol(dims, half=True):
    """Symbol of ``-Delta`` on the grid; rfft layout when ``half``."""
    dims = tuple(int(n) for n in dims)
    d = len(dims)
    ell = 0.0
    for i, n in enumerate(dims):
        k = _freq_index(n, half=half and i == d - 1)
        shape = [1] * d
        shape[i] = -1
        ell = ell + (2.0 * (1.0 - np.cos(2.0 * np.pi * k / n))).reshape(shape)
    return np.broadcast_to(ell, tuple(len(_freq_index(n, half and i == d - 1))
                                      for i, n in enumerate(dims))).copy()


@dataclass(frozen=True)
class SpectralOperator:
    """Symbols of ``L`` and ``K = L^-1`` on a fixed grid (rfft layout)."""

    dims: tuple
    alpha: float
    c: float
    symbol_L: np.ndarray = field(repr=False)
    symbol_K: np.ndarray = field(repr=False)

    @property
    def ndim(self):
        return len(self.dims)

    def symbol_at(self, k):
        """``A(k)`` for an integer frequency vector ``k``."""
        ell = sum(2.0 * (1.0 - np.cos(2.0 * np.pi * ki / n)) for ki, n in zip(k, self.dims))
        return (self.alpha * ell + 1.0) ** self.c


def build_operator(dims, alpha=DEFAULT_ALPHA, c=DEFAULT_C):
    if not alpha > 0 or not c > 0:
        raise ParameterError(f"alpha and c must be positive, got alpha={alpha}, c={c}")
    dims = tuple(int(n) for n in dims)
    A = (alpha * laplacian_symbol(dims) + 1.0) ** c
    K = 1.0 / A
    A.setflags(write=False)
    K.setflags(write=False)
    return SpectralOperator(dims, float(alpha), float(c), A, K)


def _check(op, v):
    v = np.asarray(v, dtype=np.float64)
    if tuple(v.shape[-op.ndim:]) != op.dims:
        raise DimensionError(f"field grid {v.shape[-op.ndim:]} does not match operator {op.dims}")
    return v


def apply_symbol(symbol, v, dims):
    axes = _axes(dims)
    return np.fft.irfftn(np.fft.rfftn(v, axes=axes) * symbol, s=dims, axes=axes)


def apply_L(op, v):
    """Momentum ``m = L v``."""
    v = _check(op, v)
    return apply_symbol(op.symbol_L, v, op.dims)


def apply_K(op, m):
    """Velocity ``v = K m``."""
    m = _check(op, m)
    return apply_symbol(op.symbol_K, m, op.dims)


def metric_pairing(op, v):
    """Discrete pairing ``sum_x <(L v)(x), v(x)>``."""
    v = _check(op, v)
    return float(np.dot(apply_L(op, v).ravel(), v.ravel()))


# ---------------------------------------------------------------------------
# bandlimiting
# ---------------------------------------------------------------------------

def normalize_band(band, dims):
    dims = tuple(int(n) for n in dims)
    if np.ndim(band) == 0:
        band = (int(band),) * len(dims)
    band = tuple(int(b) for b in band)
    if len(band) != len(dims):
        raise DimensionError(f"band {band} does not match grid {dims}")
    for b, n in zip(band, dims):
        if b < 1 or 2 * b > n:
            raise ParameterError(f"band {b} outside [1, {n // 2}] for an axis of {n} voxels")
    return band


def default_band(dims):
    return tuple(min(DEFAULT_BAND, int(n) // 2) for n in dims)


def band_mask(dims, band, half=True):
    """Boolean mask of retained frequencies (rfft layout when ``half``)."""
    dims = tuple(int(n) for n in dims)
    band = normalize_band(band, dims)
    d = len(dims)
    mask = True
    for i, (n, b) in enumerate(zip(dims, band)):
        k = _freq_index(n, half=half and i == d - 1)
        shape = [1] * d
        shape[i] = -1
        mask = mask & (np.abs(k) <= b - 1).reshape(shape)
    return mask


@lru_cache(maxsize=32)
def _cached_mask(dims, band):
    mask = band_mask(dims, band)
    mask.flags.writeable = False
    return mask


def bandlimit(v, band):
    """Project a vector field onto the band (zero all other frequencies)."""
    v = np.asarray(v, dtype=np.float64)
    dims = tuple(v.shape[1:])
    return apply_symbol(_cached_mask(dims, normalize_band(band, dims)), v, dims)


_projected = {}


def projected_K(op, band):
    """Symbol of ``P K`` (smoothing followed by band projection), cached."""
    band = normalize_band(band, op.dims)
    key = (op.dims, op.alpha, op.c, band)
    sym = _projected.get(key)
    if sym is None:
        if len(_projected) > 32:
            _projected.clear()
        sym = np.where(_cached_mask(op.dims, band), op.symbol_K, 0.0)
        sym.flags.writeable = False
        _projected[key] = sym
    return sym


@dataclass(frozen=True)
class BandlimitedVelocity:
    """Retained Fourier coefficients of each velocity component.

    ``coefficients`` has shape ``(d, 2*b_1 - 1, ..., 2*b_d - 1)`` with
    frequency ``-(b_i - 1)`` at index 0 of axis ``i`` (centred layout) and
    uses numpy's unnormalised forward-FFT convention.
    """

    band: tuple
    coefficients: np.ndarray


def _band_index(n, b):
    return np.arange(-(b - 1), b) % n


def truncate(v, band):
    v = np.asarray(v, dtype=np.float64)
    dims = v.shape[1:]
    band = normalize_band(band, dims)
    coeffs = np.fft.fftn(v, axes=_axes(dims))
    idx = np.ix_(range(v.shape[0]), *[_band_index(n, b) for n, b in zip(dims, band)])
    return BandlimitedVelocity(band, coeffs[idx])


def pad(w, dims):
    dims = tuple(int(n) for n in dims)
    band = normalize_band(w.band, dims)
    full = np.zeros((w.coefficients.shape[0],) + dims, dtype=complex)
    idx = np.ix_(range(full.shape[0]), *[_band_index(n, b) for n, b in zip(dims, band)])
    full[idx] = w.coefficients
    return np.fft.ifftn(full, axes=_axes(dims)).real
