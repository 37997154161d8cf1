"""Joint registration and reconstruction with a plug-in denoiser.

Each outer iteration registers the clean source to the current reconstruction
of the target, blends the noisy target with the warped source, and denoises
the blend. The loop stops at a fixed point of the reconstruction.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .denoise import get_denoiser
from .errors import ParameterError, PnprrError
from .registration import RegistrationParams, register

log = logging.getLogger(__name__)

# per-denoiser (lambda1, lambda2) for the 2D synthetic data
REFERENCE_LAMBDAS_2D = {"tv": (0.045, 0.067), "tgv": (0.045, 0.015), "bm3d": (0.045, 0.225)}
# same for the 3D placental scans
REFERENCE_LAMBDAS_3D = {"tv": (0.0225, 0.000225), "tgv": (0.0338, 0.1), "bm3d": (0.0225, 0.1)}


@dataclass(frozen=True)
class PnpParams:
    lambda1: float = 0.045
    lambda2: float = 0.067
    max_outer_iters: int = 50
    fixed_point_tol: float = 1e-3
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    denoiser: str = "tv"
    warm_start: bool = True

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("lambda1 and lambda2 must be >= 0")
        if self.max_outer_iters < 1:
            raise ParameterError("max_outer_iters must be >= 1")

    @property
    def sigma(self):
        return self.registration.sigma


def _data_weight(sigma):
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return 0.0 if math.isinf(sigma) else 1.0 / sigma ** 2


def compute_tau(params):
    """Denoiser strength ``lambda1 / (2 (lambda2 + 1/sigma^2))``."""
    w = _data_weight(params.sigma)
    return params.lambda1 / (2.0 * (params.lambda2 + w))


def lambdas_for(target_weight, tau, sigma=0.015):
    """``(lambda1, lambda2)`` giving the noisy target weight ``target_weight``
    in the blend Z and denoiser strength ``tau``.

    With sigma = 0.015 the data term weighs 1/sigma^2 ~ 4444 per voxel, so
    lambda2 has to be of that order before T contributes to Z at all.
    """
    if not 0 <= target_weight < 1:
        raise ParameterError("target_weight must be in [0, 1)")
    w = _data_weight(sigma)
    lam2 = target_weight / (1.0 - target_weight) * w
    return 2.0 * tau * (lam2 + w), lam2


def compute_Z(T, warped, params):
    """Voxelwise blend ``(lambda2 T + warped / sigma^2) / (lambda2 + 1/sigma^2)``."""
    T = np.asarray(T, dtype=np.float64)
    warped = np.asarray(warped, dtype=np.float64)
    grid.check_same(T, warped, "target and warped source")
    w = _data_weight(params.sigma)
    lam = params.lambda2
    if lam == 0.0:
        return warped.copy()
    # same convex combination, written so that equal inputs come back exactly
    a = w / (lam + w)
    return np.clip(T + a * (warped - T), np.minimum(T, warped), np.maximum(T, warped))


@dataclass
class PnpIteration:
    k: int
    energy: float
    residual: float
    ssd: float
    inner_iters: int


@dataclass
class PnpTrace:
    records: list
    v0: np.ndarray
    reconstruction: np.ndarray
    phi_inv: np.ndarray
    warped: np.ndarray
    converged: bool
    tau: float
    registrations: list = field(default_factory=list, repr=False)
    reconstructions: list = field(default_factory=list, repr=False)

    @property
    def iterations(self):
        return len(self.records)


class PnpStepError(PnprrError):
    """A registration or denoising failure inside the outer loop."""

    def __init__(self, k, cause):
        self.k = k
        self.cause = cause
        super().__init__(f"outer iteration {k}: {type(cause).__name__}: {cause}")


def pnp_rr(S, T, denoiser=None, params=PnpParams(), keep_history=False):
    """Alternate registration and denoising until the reconstruction stops
    changing (relative change below ``fixed_point_tol``)."""
    S = grid.as_scalar(S)
    T = grid.as_scalar(T)
    grid.check_same(S, T, "source and target")
    denoiser = get_denoiser(denoiser if denoiser is not None else params.denoiser)
    tau = compute_tau(params)
    recon = T.copy()
    norm0 = float(np.linalg.norm(T)) or 1.0
    records = []
    history = []
    regs = []
    v0 = None
    converged = False
    for k in range(1, params.max_outer_iters + 1):
        try:
            res = register(S, recon, params.registration, v0 if params.warm_start else None)
        except PnprrError as exc:
            raise PnpStepError(k, exc) from exc
        v0 = res.v0
        Z = compute_Z(T, res.warped, params)
        try:
            new = denoiser(Z, tau)
        except (PnprrError, FloatingPointError) as exc:
            raise PnpStepError(k, exc) from exc
        residual = float(np.linalg.norm(new - recon)) / norm0
        records.append(PnpIteration(k, res.energy_trace[-1], residual,
                                    grid.ssd(res.warped, new), res.iterations))
        log.debug("pnp k=%d residual=%.3g inner=%d", k, residual, res.iterations)
        recon = new
        if keep_history:
            history.append(new)
            regs.append(res)
        if residual < params.fixed_point_tol:
            converged = True
            break
    return PnpTrace(records, res.v0, recon, res.phi_inv, res.warped, converged, tau, regs, history)


def two_step_baseline(S, T, denoiser=None, params=PnpParams()):
    """Denoise the target once, then register to it."""
    denoiser = get_denoiser(denoiser if denoiser is not None else params.denoiser)
    T_hat = denoiser(grid.as_scalar(T), compute_tau(params))
    res = register(S, T_hat, params.registration)
    res.denoised = T_hat
    return res
