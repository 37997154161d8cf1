"""Diffeomorphic registration of noisy images with plug-and-play priors.

Geodesic-shooting registration on bandlimited velocity fields, alternated
with an arbitrary denoiser acting on a blend of the noisy target and the
warped source.
"""
__version__ = "0.1.0"

from .denoise import Denoiser, get_denoiser, register_plugin, tv_denoise
from .errors import (DimensionError, DivergenceError, FieldFormatError, ParameterError,
                     PluginError, PnprrError, StallError, UndefinedDiceError)
from .pnp import PnpParams, compute_tau, compute_Z, pnp_rr, two_step_baseline
from .registration import RegistrationParams, register
from .synthdata import generate_case

__all__ = [
    "Denoiser", "DimensionError", "DivergenceError", "FieldFormatError", "ParameterError",
    "PluginError", "PnpParams", "PnprrError", "RegistrationParams", "StallError",
    "UndefinedDiceError", "compute_Z", "compute_tau", "generate_case", "get_denoiser",
    "pnp_rr", "register", "register_plugin", "tv_denoise", "two_step_baseline",
]
