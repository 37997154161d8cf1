"""Dense fields on regular grids: interpolation, warping and finite differences.

Scalar fields are ``ndarray`` of shape ``dims`` and vector fields are
``ndarray`` of shape ``(d, *dims)`` with component ``a`` displacing along
array axis ``a``. Grid spacing is one voxel. Finite differences are periodic;
sampling clamps coordinates to the grid.
"""
import numpy as np

from . import _accel
from .errors import DimensionError


def as_scalar(field):
    f = np.asarray(field, dtype=np.float64)
    if f.ndim not in (1, 2, 3):
        raise DimensionError(f"scalar field must be 1-3 dimensional, got shape {f.shape}")
    return f


def as_vector(field):
    v = np.asarray(field, dtype=np.float64)
    if v.ndim < 2 or v.shape[0] != v.ndim - 1:
        raise DimensionError(f"vector field must have shape (d, *dims), got {v.shape}")
    return v


def check_same(a, b, what="fields"):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what} disagree in shape: {np.shape(a)} vs {np.shape(b)}")


def identity_coords(dims):
    """Voxel coordinates of every grid point, shape ``(d, *dims)``."""
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims],
                                indexing="ij"))


def zeros_vector(dims):
    return np.zeros((len(dims),) + tuple(dims))


def interpolate(field, point):
    """Linearly interpolate ``field`` at one point (clamped to the grid)."""
    f = as_scalar(field)
    p = np.asarray(point, dtype=np.float64).reshape(-1)
    if p.size != f.ndim:
        raise DimensionError(f"point has {p.size} coordinates, field is {f.ndim}-D")
    val, _ = _accel.interp_linear(f, p.reshape(f.ndim, 1))
    return float(val[0])


def sample(field, coords, with_grad=False):
    """Interpolate ``field`` at every point of ``coords`` (shape ``(d, ...)``).

    With ``with_grad`` also returns the derivative of the interpolant with
    respect to the sample coordinates (zero along clamped axes).
    """
    f = as_scalar(field)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != f.ndim:
        raise DimensionError(f"coordinates are {coords.shape[0]}-D, field is {f.ndim}-D")
    vals, grad = _accel.interp_linear(f, coords, with_grad=with_grad)
    return (vals, grad) if with_grad else vals


def sample_transpose(values, coords, dims):
    """Adjoint of :func:`sample` in the field argument."""
    return _accel.scatter_linear(values, coords, dims)


def warp(S, psi):
    """Compose ``S`` with the inverse map ``x -> x + psi(x)``."""
    S = as_scalar(S)
    psi = as_vector(psi)
    if psi.shape[1:] != S.shape:
        raise DimensionError(f"image {S.shape} and deformation {psi.shape[1:]} disagree")
    return sample(S, identity_coords(S.shape) + psi)


def warp_vector(v, psi):
    """Compose every component of a vector field with ``x -> x + psi(x)``."""
    v = as_vector(v)
    coords = identity_coords(v.shape[1:]) + psi
    return np.stack([sample(c, coords) for c in v])


def ssd(A, B):
    """Raw sum of squared differences."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    check_same(A, B)
    r = (A - B).ravel()
    return float(np.dot(r, r))


def central_diff(f, axis):
    """Periodic central difference along ``axis``."""
    f = np.asarray(f)
    n = f.shape[axis]
    if n < 3:
        return 0.5 * (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis))

    def s(a, b):
        return (slice(None),) * (axis % f.ndim) + (slice(a, b),)

    out = np.empty(f.shape, dtype=np.result_type(f, 0.5))
    np.subtract(f[s(2, None)], f[s(None, -2)], out=out[s(1, -1)])
    np.subtract(f[s(1, 2)], f[s(n - 1, None)], out=out[s(0, 1)])
    np.subtract(f[s(0, 1)], f[s(n - 2, n - 1)], out=out[s(n - 1, None)])
    out *= 0.5
    return out


def gradient_central(f):
    """Periodic central-difference gradient of a scalar field, shape ``(d, *dims)``."""
    f = as_scalar(f)
    if min(f.shape) < 3:
        raise DimensionError(f"central differences need >= 3 voxels per axis, got {f.shape}")
    return np.stack([central_diff(f, a) for a in range(f.ndim)])


def jacobian(v):
    """Per-voxel Jacobian, ``J[a, b] = d v_a / d x_b``, shape ``(d, d, *dims)``."""
    v = as_vector(v)
    return np.stack([gradient_central(c) for c in v])


def divergence(v):
    v = as_vector(v)
    return sum(central_diff(v[a], a) for a in range(v.shape[0]))
