"""Forward geodesic shooting: EPDiff for the velocity, semi-Lagrangian update
for the displacement of the inverse map."""
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import DivergenceError, ParameterError
from .spectral import (_check, apply_K, apply_L, apply_symbol, bandlimit, default_band,
                       normalize_band, projected_K)


def _grad(f):
    return [grid.central_diff(f, a) for a in range(f.ndim)]


def _bilinear(v, m):
    """``(Dv)^T m + (Dm) v + m div v`` with periodic central differences."""
    d = v.shape[0]
    dv = [_grad(v[b]) for b in range(d)]  # dv[b][a] = d v_b / d x_a
    dm = [_grad(m[a]) for a in range(d)]  # dm[a][b] = d m_a / d x_b
    div = sum(dv[a][a] for a in range(d))
    out = np.empty_like(v)
    for a in range(d):
        acc = m[a] * div
        for b in range(d):
            acc = acc + dv[b][a] * m[b] + dm[a][b] * v[b]
        out[a] = acc
    return out


def epdiff_rhs(op, v, band=None):
    """Time derivative of the velocity along a geodesic:
    ``-K[(Dv)^T m + (Dm) v + m div v]`` with ``m = L v``.

    With ``band`` the result is also projected onto the band (fused with
    ``K`` in one transform pair).
    """
    v = _check(op, v)
    b = _bilinear(v, apply_L(op, v))
    if band is None:
        return -apply_K(op, b)
    return -apply_symbol(projected_K(op, band), b, op.dims)


def epdiff_rhs_vjp(op, v, w, band=None):
    """Gradient of ``<w, epdiff_rhs(op, v, band)>`` with respect to ``v``."""
    d = v.shape[0]
    m = apply_L(op, v)
    u = -(apply_K(op, w) if band is None else apply_symbol(projected_K(op, band), w, op.dims))
    D = grid.central_diff
    um = sum(u[a] * m[a] for a in range(d))
    div = sum(D(v[a], a) for a in range(d))
    gv = np.empty_like(v)
    gm = np.empty_like(v)
    for b in range(d):
        acc = -D(um, b)
        for a in range(d):
            acc = acc - D(u[a] * m[b], a) + u[a] * D(m[a], b)
        gv[b] = acc
        acc = u[b] * div
        for a in range(d):
            acc = acc + u[a] * D(v[b], a) - D(u[b] * v[a], a)
        gm[b] = acc
    return gv + apply_L(op, gm)


@dataclass
class GeodesicPath:
    """Result of :func:`shoot`.

    ``velocities`` holds ``v_0 ... v_n``; ``phi_inv`` is the displacement
    ``psi`` of the inverse map at ``t = 1``, i.e. ``phi^-1(x) = x + psi(x)``.
    """

    n_steps: int
    velocities: list
    phi_inv: np.ndarray
    step: float
    scheme: str = "rk4"
    band: tuple = None
    displacements: list = field(default_factory=list, repr=False)
    stages: list = field(default_factory=list, repr=False)


def _finite(x, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(step)


def shoot(op, v0, n_steps=10, band=None, scheme="rk4"):
    """Integrate EPDiff from ``v0`` over unit time and co-integrate ``phi^-1``.

    Every slope is projected onto ``band`` (so Runge-Kutta integrates the
    band-projected equation at full order) and so is every new velocity. Intermediate
    displacements and Runge-Kutta stage inputs are kept on the returned path
    for the adjoint pass in :mod:`pnprr.registration`.
    """
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    if scheme not in ("rk4", "euler"):
        raise ParameterError(f"unknown scheme {scheme!r}")
    v = _check(op, v0).copy()
    band = default_band(op.dims) if band is None else normalize_band(band, op.dims)
    dt = 1.0 / n_steps
    ident = grid.identity_coords(op.dims)
    psi = np.zeros_like(v)
    velocities = [v]
    displacements = [psi]
    stages = []
    for i in range(n_steps):
        if scheme == "rk4":
            y1 = v
            k1 = epdiff_rhs(op, y1, band)
            y2 = v + 0.5 * dt * k1
            k2 = epdiff_rhs(op, y2, band)
            y3 = v + 0.5 * dt * k2
            k3 = epdiff_rhs(op, y3, band)
            y4 = v + dt * k3
            k4 = epdiff_rhs(op, y4, band)
            stages.append((y1, y2, y3, y4))
            v_next = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            stages.append((v,))
            v_next = v + dt * epdiff_rhs(op, v, band)
        v_next = bandlimit(v_next, band)
        _finite(v_next, i + 1)

        coords = ident - dt * v
        psi = np.stack([grid.sample(psi[a], coords) for a in range(len(op.dims))]) - dt * v
        _finite(psi, i + 1)
        v = v_next
        velocities.append(v)
        displacements.append(psi)
    return GeodesicPath(n_steps, velocities, psi, dt, scheme, band, displacements, stages)
