"""Geodesic-shooting registration: minimise
``(1/sigma^2) ||S o phi^-1 - T||^2 + (L v0, v0)`` over the initial velocity.

The gradient is the exact derivative of the discrete objective, obtained by
running the forward integration backwards (reverse mode) through the warp,
every semi-Lagrangian displacement update and every Runge-Kutta stage.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import grid
from .epdiff import epdiff_rhs_vjp, shoot
from .errors import DimensionError, DivergenceError, ParameterError, StallError
from .spectral import (DEFAULT_ALPHA, DEFAULT_BAND, DEFAULT_C, apply_K, apply_L, bandlimit,
                       build_operator, metric_pairing)

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
GROW = 1.2
MAX_HALVINGS = 30


@dataclass(frozen=True)
class RegistrationParams:
    sigma: float = 0.015
    alpha: float = DEFAULT_ALPHA
    c: float = DEFAULT_C
    n_steps: int = 10
    band: int = DEFAULT_BAND
    max_iters: int = 300
    step_size: float = 0.5
    grad_tol: float = 1e-6
    energy_tol: float = 1e-5
    scheme: str = "rk4"
    preconditioner: str = "sobolev"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        for name in ("alpha", "c", "step_size"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.n_steps < 1 or self.max_iters < 1 or self.band < 1:
            raise ParameterError("n_steps, max_iters and band must be >= 1")
        if self.grad_tol < 0 or self.energy_tol < 0:
            raise ParameterError("tolerances must be non-negative")
        if self.preconditioner not in ("sobolev", "none"):
            raise ParameterError(f"unknown preconditioner {self.preconditioner!r}")

    @property
    def data_weight(self):
        return 0.0 if math.isinf(self.sigma) else 1.0 / self.sigma ** 2

    def band_for(self, dims):
        """Band clipped to the Nyquist limit of each axis."""
        return tuple(min(self.band, int(n) // 2) for n in dims)

    def operator(self, dims):
        return build_operator(dims, self.alpha, self.c)

    def updated(self, **kw):
        return replace(self, **kw)


@dataclass
class RegistrationResult:
    v0: np.ndarray
    phi_inv: np.ndarray
    energy_trace: list
    converged: bool
    iterations: int
    warped: np.ndarray = field(default=None, repr=False)
    stop_reason: str = ""
    denoised: np.ndarray = field(default=None, repr=False)


@dataclass
class _Evaluation:
    v0: np.ndarray
    path: object
    coords: np.ndarray
    warped: np.ndarray
    dwarped: np.ndarray
    residual: np.ndarray
    data: float
    reg: float

    @property
    def energy(self):
        return self.data + self.reg


def _inputs(v0, S, T):
    S = grid.as_scalar(S)
    T = grid.as_scalar(T)
    grid.check_same(S, T, "source and target")
    v0 = grid.as_vector(v0)
    if v0.shape[1:] != S.shape:
        raise DimensionError(f"velocity grid {v0.shape[1:]} does not match images {S.shape}")
    return v0, S, T


def _evaluate(v0, S, T, params, op):
    path = shoot(op, v0, params.n_steps, params.band_for(S.shape), params.scheme)
    coords = grid.identity_coords(S.shape) + path.phi_inv
    warped, dwarped = grid.sample(S, coords, with_grad=True)
    residual = warped - T
    data = params.data_weight * float(np.dot(residual.ravel(), residual.ravel()))
    reg = metric_pairing(op, v0)
    return _Evaluation(v0, path, coords, warped, dwarped, residual, data, reg)


def _rk4_vjp(op, stages, dt, cot, band):
    """Pull the cotangent of ``v_{i+1}`` (pre-projection) back to ``v_i``."""
    y1, y2, y3, y4 = stages
    vbar = cot.copy()
    k3 = (dt / 3.0) * cot
    k2 = (dt / 3.0) * cot
    k1 = (dt / 6.0) * cot
    y = epdiff_rhs_vjp(op, y4, (dt / 6.0) * cot, band)
    vbar += y
    k3 = k3 + dt * y
    y = epdiff_rhs_vjp(op, y3, k3, band)
    vbar += y
    k2 = k2 + 0.5 * dt * y
    y = epdiff_rhs_vjp(op, y2, k2, band)
    vbar += y
    k1 = k1 + 0.5 * dt * y
    vbar += epdiff_rhs_vjp(op, y1, k1, band)
    return vbar


def _backward(ev, params, op):
    path = ev.path
    dims = ev.warped.shape
    d = len(dims)
    dt = path.step
    ident = grid.identity_coords(dims)
    # d E / d psi_n through the final warp
    g_psi = (2.0 * params.data_weight * ev.residual) * ev.dwarped
    vbar = np.zeros_like(ev.v0)  # cotangent of v_{i+1}
    for i in reversed(range(path.n_steps)):
        v_i = path.velocities[i]
        psi_i = path.displacements[i]
        coords = ident - dt * v_i
        # psi_{i+1} = psi_i(x - dt v_i(x)) - dt v_i(x)
        c_v = -dt * g_psi
        g_prev = np.empty_like(g_psi)
        for a in range(d):
            _, dpsi = grid.sample(psi_i[a], coords, with_grad=True)
            c_v -= dt * g_psi[a] * dpsi
            g_prev[a] = grid.sample_transpose(g_psi[a], coords, dims)
        g_psi = g_prev
        # v_{i+1} = P(step(v_i)); P is an orthogonal projection
        cot = bandlimit(vbar, path.band)
        if path.scheme == "rk4":
            c_rk = _rk4_vjp(op, path.stages[i], dt, cot, path.band)
        else:
            c_rk = cot + dt * epdiff_rhs_vjp(op, path.stages[i][0], cot, path.band)
        vbar = c_v + c_rk
    grad = vbar + 2.0 * apply_L(op, ev.v0)
    return bandlimit(grad, path.band)


def energy(v0, S, T, params=RegistrationParams()):
    """Registration energy of the initial velocity ``v0``."""
    v0, S, T = _inputs(v0, S, T)
    return _evaluate(v0, S, T, params, params.operator(S.shape)).energy


def energy_and_gradient(v0, S, T, params=RegistrationParams()):
    v0, S, T = _inputs(v0, S, T)
    op = params.operator(S.shape)
    ev = _evaluate(v0, S, T, params, op)
    return ev.energy, _backward(ev, params, op)


def gradient(v0, S, T, params=RegistrationParams()):
    """Exact gradient of the discrete energy with respect to ``v0``, projected
    onto the velocity band."""
    return energy_and_gradient(v0, S, T, params)[1]


def _direction(g, params, op):
    return apply_K(op, g) if params.preconditioner == "sobolev" else g


def register(S, T, params=RegistrationParams(), v0=None):
    """Gradient descent with Armijo backtracking from ``v0`` (zero by default).

    With ``preconditioner="sobolev"`` the descent direction is ``K grad``, the
    gradient with respect to the metric ``(L v, w)`` on velocities, which
    removes the stiffness of the regularizer; ``"none"`` uses the plain
    Euclidean gradient. The first trial step moves the velocity by
    ``step_size`` voxels at most.

    Stops when the gradient max-norm drops below ``grad_tol``, when an
    iteration lowers the energy by less than ``energy_tol`` relative to its
    previous value, or after ``max_iters`` iterations.
    """
    S = grid.as_scalar(S)
    T = grid.as_scalar(T)
    if v0 is None:
        v0 = grid.zeros_vector(S.shape)
    v0, S, T = _inputs(v0, S, T)
    op = params.operator(S.shape)
    band = params.band_for(S.shape)
    v = bandlimit(v0, band)
    ev = _evaluate(v, S, T, params, op)
    trace = [ev.energy]
    g = _backward(ev, params, op)
    gmax = float(np.max(np.abs(g)))
    d = _direction(g, params, op)
    dmax = float(np.max(np.abs(d)))
    t = params.step_size / dmax if dmax > 0 else 0.0
    converged = False
    reason = "max_iters"
    it = 0
    for it in range(1, params.max_iters + 1):
        if gmax <= params.grad_tol:
            converged, reason, it = True, "grad_tol", it - 1
            break
        slope = float(np.dot(g.ravel(), d.ravel()))
        for _ in range(MAX_HALVINGS + 1):
            try:
                trial = _evaluate(v - t * d, S, T, params, op)
            except DivergenceError:
                trial = None
            if trial is not None and trial.energy <= ev.energy - ARMIJO_C * t * slope:
                break
            t *= 0.5
        else:
            raise StallError(f"no descent after {MAX_HALVINGS} step halvings at iteration {it}",
                             trace, it)
        drop = ev.energy - trial.energy
        ev = trial
        v = ev.v0
        trace.append(ev.energy)
        g = _backward(ev, params, op)
        gmax = float(np.max(np.abs(g)))
        d = _direction(g, params, op)
        t *= GROW
        if drop <= params.energy_tol * abs(trace[-2]):
            converged, reason = True, "energy_tol"
            break
    log.debug("register: %d iterations, E %.6g -> %.6g (%s)", it, trace[0], trace[-1], reason)
    return RegistrationResult(v, ev.path.phi_inv, trace, converged, it, ev.warped, reason)
