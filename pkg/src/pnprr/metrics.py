"""Evaluation quantities for registrations and denoised images."""
import numpy as np

from . import grid
from .errors import DimensionError, UndefinedDiceError

PSNR_CAP = 99.0


def as_mask(mask):
    m = np.asarray(mask)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be exactly 0 or 1")
    return m.astype(bool)


def dice(A, B):
    """Dice similarity ``2 |A & B| / (|A| + |B|)``."""
    a = as_mask(A)
    b = as_mask(B)
    grid.check_same(a, b, "masks")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise UndefinedDiceError("Dice is undefined for two empty masks")
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def propagate_mask(mask, phi_inv, threshold=0.5):
    """Warp a binary mask by ``phi_inv`` (linear interpolation, then threshold)."""
    m = as_mask(mask).astype(np.float64)
    return (grid.warp(m, phi_inv) >= threshold).astype(np.uint8)


def jacobian_determinant(phi_inv):
    """Determinant of ``D(x + psi(x))`` per voxel.

    Uses central differences in the interior and second-order one-sided
    differences on the boundary (the displacement of a map is not periodic).
    """
    psi = grid.as_vector(phi_inv)
    d = psi.shape[0]
    if min(psi.shape[1:]) < 3:
        raise DimensionError("Jacobian needs >= 3 voxels per axis")
    J = np.empty((d, d) + psi.shape[1:])
    for a in range(d):
        grads = np.gradient(psi[a], edge_order=2)
        for b in range(d):
            J[a, b] = grads[b] + (1.0 if a == b else 0.0)
    return np.linalg.det(np.moveaxis(J, (0, 1), (-2, -1)))


def jacobian_det_stats(phi_inv):
    det = jacobian_determinant(phi_inv)
    return {
        "min": float(det.min()),
        "max": float(det.max()),
        "fraction_nonpositive": float(np.mean(det <= 0.0)),
    }


def psnr(X, ref):
    """``10 log10(range^2 / MSE)`` with ``range = max(ref) - min(ref)``; capped
    at 99 dB for an exact match."""
    X = np.asarray(X, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    grid.check_same(X, ref)
    rng = float(ref.max() - ref.min())
    if rng == 0.0:
        raise ValueError("PSNR needs a non-constant reference")
    mse = float(np.mean((X - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(rng ** 2 / mse))
