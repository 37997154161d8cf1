"""Seeded 2D benchmark: smooth binary shapes, a smoothly deformed copy as the
target, and white Gaussian noise on the target.

Randomness comes from SplitMix64 so that the data set depends on nothing but
the seed.
"""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import grid
from .errors import ParameterError

_MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

_NOISE_TAG = 0x6E6F697365000000
_SHAPE_TAG = 0x7368617065000000


def _mix(z):
    """SplitMix64 finaliser on a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def splitmix64(seed, count, offset=0):
    """Outputs ``offset .. offset+count-1`` of the SplitMix64 stream of ``seed``."""
    seed = int(seed) & _MASK64
    i = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = np.uint64(seed) + i * np.uint64(GOLDEN)
        return _mix(state)


def seeded_uniform(seed, count, offset=0):
    """Uniforms in the open interval (0, 1) from the top 53 bits of each output."""
    bits = splitmix64(seed, count, offset) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0 ** -53


def seeded_gaussian(seed, count):
    """Standard normals by Box-Muller on consecutive uniform pairs."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    pairs = (count + 1) // 2
    u = seeded_uniform(seed, 2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log(u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = r * np.cos(theta)
    z[:, 1] = r * np.sin(theta)
    return z.ravel()[:count]


def substream(seed, tag):
    return int(splitmix64(int(seed) ^ tag, 1)[0])


class _Draws:
    """Sequential uniform draws from one stream."""

    def __init__(self, seed):
        self.seed = seed
        self.pos = 0

    def __call__(self, lo=0.0, hi=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = seeded_uniform(self.seed, n, self.pos)
        self.pos += n
        u = lo + (hi - lo) * u
        return float(u[0]) if size is None else u.reshape(size)


@dataclass
class SyntheticCase:
    seed: int
    source: np.ndarray
    target_clean: np.ndarray
    target_noisy: np.ndarray
    source_mask: np.ndarray
    target_mask: np.ndarray
    noise_sigma: float
    displacement: np.ndarray = None


def _shape(draw, res):
    y, x = grid.identity_coords((res, res))
    cy = res * draw(0.42, 0.58)
    cx = res * draw(0.42, 0.58)
    r0 = res * draw(0.16, 0.24)
    theta = np.arctan2(y - cy, x - cx)
    rho = np.hypot(y - cy, x - cx)
    if draw() < 0.5:
        ratio = draw(0.6, 0.95)
        rot = draw(0.0, np.pi)
        c, s = np.cos(rot), np.sin(rot)
        u = (x - cx) * c + (y - cy) * s
        v = -(x - cx) * s + (y - cy) * c
        inside = (u / r0) ** 2 + (v / (r0 * ratio)) ** 2 <= 1.0
    else:
        a2, p2 = draw(0.0, 0.15), draw(0.0, np.pi)
        a3, p3 = draw(0.0, 0.12), draw(0.0, 2 * np.pi / 3)
        radius = r0 * (1.0 + a2 * np.cos(2 * (theta - p2)) + a3 * np.cos(3 * (theta - p3)))
        inside = rho <= radius
    binary = inside.astype(np.float64)
    return np.clip(gaussian_filter(binary, 1.0, mode="nearest"), 0.0, 1.0)


def _displacement(draw, res, max_fraction):
    y, x = grid.identity_coords((res, res))
    psi = np.zeros((2, res, res))
    for a in range(2):
        psi[a] += draw(-1.0, 1.0)
        for ky, kx in ((1, 0), (0, 1), (1, 1), (1, -1)):
            phase = 2 * np.pi * (ky * y + kx * x) / res
            psi[a] += draw(-1.0, 1.0) * np.cos(phase) + draw(-1.0, 1.0) * np.sin(phase)
    magnitude = res * draw(0.25 * max_fraction, max_fraction)
    return psi * (magnitude / np.max(np.linalg.norm(psi, axis=0)))


def generate_case(seed, resolution=100, noise_sigma=0.3, max_displacement=0.08):
    """Build the seeded case; identical arguments give bit-identical arrays.

    ``max_displacement`` bounds the largest target displacement as a fraction
    of the resolution (at most 0.15).
    """
    from .metrics import jacobian_det_stats

    if resolution < 32:
        raise ParameterError("resolution must be >= 32")
    if not 0 < max_displacement <= 0.15:
        raise ParameterError("max_displacement must lie in (0, 0.15]")
    draw = _Draws(substream(seed, _SHAPE_TAG))
    for _ in range(1000):
        source = _shape(draw, resolution)
        psi = _displacement(draw, resolution, max_displacement)
        if jacobian_det_stats(psi)["min"] < 0.3:
            continue
        target = grid.warp(source, psi)
        source_mask = (source >= 0.5).astype(np.uint8)
        target_mask = (target >= 0.5).astype(np.uint8)
        fractions = (source_mask.mean(), target_mask.mean())
        if min(fractions) >= 0.05 and max(fractions) <= 0.60:
            break
    else:  # pragma: no cover - the shape ranges make this unreachable
        raise RuntimeError(f"could not draw a valid case for seed {seed}")
    noisy = target.copy()
    if noise_sigma > 0:
        noise = seeded_gaussian(substream(seed, _NOISE_TAG), target.size).reshape(target.shape)
        noisy = target + noise_sigma * noise
    return SyntheticCase(int(seed), source, target, noisy, source_mask, target_mask,
                         float(noise_sigma), psi)
