"""Denoisers with the common call signature ``denoiser(Z, tau) -> ndarray``.

``tv`` is the exact proximal operator of isotropic total variation; ``nlm``
and ``gauss`` are averaging filters whose bandwidth is derived from ``tau``;
``plugin`` wraps an external program speaking the field-file format over
stdin/stdout.
"""
import shlex
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from . import io as fio
from .errors import DimensionError, FieldFormatError, ParameterError, PluginError

NLM_PATCH_RADIUS = 2
NLM_SEARCH_RADIUS = 5
NLM_H_MIN = 1e-6


def _check_tau(tau):
    tau = float(tau)
    if not tau >= 0:
        raise ParameterError(f"tau must be >= 0, got {tau}")
    return tau


# ---------------------------------------------------------------------------
# total variation
# ---------------------------------------------------------------------------

def _forward_grad(x, periodic):
    g = np.empty((x.ndim,) + x.shape)
    for a in range(x.ndim):
        if periodic:
            g[a] = np.roll(x, -1, axis=a) - x
        else:
            g[a] = 0.0
            lo = [slice(None)] * x.ndim
            hi = [slice(None)] * x.ndim
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            g[a][tuple(lo)] = x[tuple(hi)] - x[tuple(lo)]
    return g


def _div(p, periodic):
    """Negative adjoint of :func:`_forward_grad`."""
    out = np.zeros(p.shape[1:])
    for a in range(p.shape[0]):
        if periodic:
            out += p[a] - np.roll(p[a], 1, axis=a)
        else:
            q = p[a].copy()
            idx = [slice(None)] * q.ndim
            idx[a] = -1
            q[tuple(idx)] = 0.0
            # q vanishes on the last slab, so the roll wraps in a zero
            out += q - np.roll(q, 1, axis=a)
    return out


def total_variation(x, boundary="periodic"):
    """Isotropic TV with forward differences."""
    g = _forward_grad(np.asarray(x, dtype=np.float64), boundary == "periodic")
    return float(np.sum(np.sqrt(np.sum(g * g, axis=0))))


def tv_denoise(Z, tau, boundary="periodic", max_iter=500, tol=1e-6, return_info=False):
    """Solve ``argmin_X 0.5 ||X - Z||^2 + tau TV(X)`` by projected gradient on
    the dual, ``X = Z - tau div p`` with ``|p(x)| <= 1``.

    ``boundary`` is ``"periodic"`` or ``"neumann"`` (free ends). Iterates with
    step ``1/(4d)`` until the relative dual change falls below ``tol``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    tau = _check_tau(tau)
    if boundary not in ("periodic", "neumann"):
        raise ParameterError(f"unknown boundary {boundary!r}")
    if tau == 0.0:
        return (Z.copy(), {"iterations": 0}) if return_info else Z.copy()
    periodic = boundary == "periodic"
    d = Z.ndim
    step = 1.0 / (4.0 * d)
    p = np.zeros((d,) + Z.shape)
    it = 0
    for it in range(1, max_iter + 1):
        g = _forward_grad(_div(p, periodic) - Z / tau, periodic)
        q = p + step * g
        norm = np.sqrt(np.sum(q * q, axis=0))
        q /= np.maximum(norm, 1.0)
        change = np.linalg.norm(q - p)
        scale = np.linalg.norm(q)
        p = q
        if change <= tol * max(scale, 1e-300):
            break
    X = Z - tau * _div(p, periodic)
    return (X, {"iterations": it}) if return_info else X


# ---------------------------------------------------------------------------
# averaging filters
# ---------------------------------------------------------------------------

def nlm_denoise(Z, tau, patch_radius=NLM_PATCH_RADIUS, search_radius=NLM_SEARCH_RADIUS):
    """Non-local means, periodic boundaries, bandwidth ``h = max(tau, 1e-6)``.

    Patch weights are ``exp(-max(d2 - 2 h^2, 0) / h^2)`` with ``d2`` the mean
    squared patch difference; the centre voxel gets the largest neighbour
    weight.
    """
    Z = np.asarray(Z, dtype=np.float64)
    h = max(_check_tau(tau), NLM_H_MIN)
    return _accel.nlm(Z, patch_radius, search_radius, h)


def periodic_gaussian_kernel(dims, stddev):
    """Sampled, wrapped and normalised Gaussian centred on voxel 0."""
    if stddev < 0.01:
        # exp(-1 / (2 stddev^2)) is exactly 0 in double precision
        kernel = np.zeros(dims)
        kernel[(0,) * len(dims)] = 1.0
        return kernel
    kernel = 1.0
    for i, n in enumerate(dims):
        x = np.arange(n, dtype=np.float64)
        reps = int(np.ceil(8.0 * stddev / n)) + 1
        g = sum(np.exp(-((x + j * n) ** 2) / (2.0 * stddev ** 2)) for j in range(-reps, reps + 1))
        shape = [1] * len(dims)
        shape[i] = n
        kernel = kernel * (g / g.sum()).reshape(shape)
    return kernel


def gaussian_denoise(Z, tau):
    """Periodic Gaussian smoothing with standard deviation ``tau`` voxels,
    applied in the Fourier domain."""
    Z = np.asarray(Z, dtype=np.float64)
    tau = _check_tau(tau)
    if tau == 0.0:
        return Z.copy()
    k = periodic_gaussian_kernel(Z.shape, tau)
    axes = tuple(range(Z.ndim))
    return np.fft.irfftn(np.fft.rfftn(Z) * np.fft.rfftn(k), s=Z.shape, axes=axes)


def identity_denoise(Z, tau):
    return np.array(Z, dtype=np.float64, copy=True)


# ---------------------------------------------------------------------------
# contract and registry
# ---------------------------------------------------------------------------

@dataclass
class Denoiser:
    """A named denoiser; call as ``denoiser(Z, tau)``."""

    name: str
    fn: object = field(repr=False)
    params: dict = field(default_factory=dict)

    def __call__(self, Z, tau):
        Z = np.asarray(Z, dtype=np.float64)
        out = np.asarray(self.fn(Z, tau, **self.params), dtype=np.float64)
        if out.shape != Z.shape:
            raise DimensionError(f"denoiser {self.name} returned {out.shape} for input {Z.shape}")
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"denoiser {self.name} returned non-finite values")
        return out

    @property
    def descriptor(self):
        return {"name": self.name, **self.params}


class PluginDenoiser(Denoiser):
    """External denoiser: runs ``argv + [tau]`` with the field on stdin and
    reads the denoised field from stdout. Calls on one instance are serialised.
    """

    def __init__(self, name, argv, params=None, timeout=None):
        self.argv = list(argv)
        self.timeout = timeout
        self._lock = threading.Lock()
        super().__init__(name, self._run, dict(params or {}))

    def _run(self, Z, tau, **_):
        tau = _check_tau(tau)
        cmd = self.argv + [f"{tau:.9g}"]
        with self._lock:
            try:
                proc = subprocess.run(cmd, input=fio.encode_field(Z, "scalar"),
                                      capture_output=True, timeout=self.timeout)
            except (OSError, subprocess.SubprocessError) as exc:
                raise PluginError(f"plugin {self.name}: could not run {cmd!r}: {exc}") from exc
        stderr = proc.stderr.decode(errors="replace")
        if proc.returncode != 0:
            raise PluginError(f"plugin {self.name}: exit status {proc.returncode}", stderr)
        try:
            out = fio.decode_field(proc.stdout)
        except FieldFormatError as exc:
            raise PluginError(f"plugin {self.name}: malformed output field: {exc}", stderr) from exc
        if out.shape != Z.shape:
            raise PluginError(f"plugin {self.name}: returned dims {out.shape}, expected {Z.shape}",
                              stderr)
        return out


def register_plugin(descriptor, adapter, timeout=None):
    """Wrap an external program as a denoiser.

    ``descriptor`` is a name or a dict with a ``name`` key (other keys are
    recorded as parameters); ``adapter`` is an argv list or a shell-style
    command string.
    """
    if isinstance(descriptor, str):
        descriptor = {"name": descriptor}
    argv = shlex.split(adapter) if isinstance(adapter, str) else list(adapter)
    if not argv:
        raise PluginError("empty plugin command")
    params = {k: v for k, v in descriptor.items() if k != "name"}
    return PluginDenoiser(descriptor["name"], argv, params, timeout)


BUILTIN = {
    "tv": tv_denoise,
    "nlm": nlm_denoise,
    "gauss": gaussian_denoise,
    "identity": identity_denoise,
}


def get_denoiser(which, **params):
    """Look up ``tv``, ``nlm``, ``gauss``, ``identity`` or ``plugin:<command>``."""
    if isinstance(which, Denoiser):
        return which
    if which.startswith("plugin:"):
        cmd = which[len("plugin:"):]
        return register_plugin({"name": which}, cmd)
    try:
        return Denoiser(which, BUILTIN[which], params)
    except KeyError:
        raise ParameterError(f"unknown denoiser {which!r}; choose from "
                             f"{sorted(BUILTIN)} or plugin:<command>") from None
