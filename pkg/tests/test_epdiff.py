import numpy as np
import pytest

from pnprr import grid, spectral
from pnprr.epdiff import epdiff_rhs, epdiff_rhs_vjp, shoot
from pnprr.errors import DivergenceError, ParameterError

from conftest import random_bandlimited


def spectral_rhs(v, alpha=1.5, c=3.0):
    """Straight transcription with FFT derivatives instead of central differences."""
    d, dims = v.shape[0], v.shape[1:]
    axes = tuple(range(1, d + 1))
    k = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(n) for n in dims], indexing="ij")
    ell = sum(2 * (1 - np.cos(ki)) for ki in k)
    A = (alpha * ell + 1) ** c

    def D(f, b):
        return np.fft.ifftn(1j * k[b] * np.fft.fftn(f)).real

    m = np.fft.ifftn(A * np.fft.fftn(v, axes=axes), axes=axes).real
    div = sum(D(v[a], a) for a in range(d))
    out = np.zeros_like(v)
    for i in range(d):
        # (Dv)^T m + (Dm) v + m div v, component i
        out[i] = sum(D(v[j], i) * m[j] for j in range(d))
        out[i] += sum(D(m[i], j) * v[j] for j in range(d))
        out[i] += m[i] * div
    return -np.fft.ifftn(np.fft.fftn(out, axes=axes) / A, axes=axes).real


class TestRhs:
    def test_zero_and_constant(self):
        op = spectral.build_operator((16, 16))
        assert np.all(epdiff_rhs(op, np.zeros((2, 16, 16))) == 0)
        assert np.max(np.abs(epdiff_rhs(op, np.full((2, 16, 16), 0.4)))) < 1e-14

    def test_spectral_derivative_oracle(self, rng):
        dims = (32, 32)
        op = spectral.build_operator(dims)
        v = random_bandlimited(rng, dims, 3)
        got = epdiff_rhs(op, v)
        want = spectral_rhs(v)
        assert np.max(np.abs(got - want)) <= 5e-2 * np.max(np.abs(want))

    def test_vjp_matches_directional_derivative(self, rng):
        dims = (12, 10)
        op = spectral.build_operator(dims)
        v = rng.standard_normal((2,) + dims)
        w = rng.standard_normal((2,) + dims)
        d = rng.standard_normal((2,) + dims)
        h = 1e-6
        fd = (np.vdot(w, epdiff_rhs(op, v + h * d)) - np.vdot(w, epdiff_rhs(op, v - h * d))) / (2 * h)
        assert np.vdot(epdiff_rhs_vjp(op, v, w), d) == pytest.approx(fd, rel=1e-6)


class TestShoot:
    def test_zero_velocity(self):
        op = spectral.build_operator((16, 16))
        path = shoot(op, np.zeros((2, 16, 16)), 10)
        assert len(path.velocities) == 11
        assert all(np.all(v == 0) for v in path.velocities)
        assert np.all(path.phi_inv == 0)
        assert path.step == 0.1

    def test_constant_velocity_translates(self):
        op = spectral.build_operator((16, 16))
        v0 = np.zeros((2, 16, 16))
        v0[1] = 0.5
        path = shoot(op, v0, 5)
        assert np.allclose(path.phi_inv[1], -0.5) and np.allclose(path.phi_inv[0], 0)

    def test_energy_conservation(self, rng):
        dims = (64, 64)
        op = spectral.build_operator(dims)
        v0 = random_bandlimited(rng, dims, 8)
        v0 *= np.sqrt(1.0 / spectral.metric_pairing(op, v0))
        path = shoot(op, v0, 10, band=8)
        E = [spectral.metric_pairing(op, v) for v in path.velocities]
        assert E[0] == pytest.approx(1.0)
        assert abs(E[-1] - E[0]) / E[0] <= 0.05

    def test_rk4_self_convergence(self, rng):
        dims = (32, 32)
        op = spectral.build_operator(dims)
        v0 = random_bandlimited(rng, dims, 4, scale=3.0)
        ref = shoot(op, v0, 100, band=4).velocities[-1]
        e1 = np.max(np.abs(shoot(op, v0, 5, band=4).velocities[-1] - ref))
        e2 = np.max(np.abs(shoot(op, v0, 10, band=4).velocities[-1] - ref))
        assert e1 / e2 >= 8.0

    def test_inverse_consistency(self, rng):
        dims = (32, 32)
        op = spectral.build_operator(dims)
        v0 = random_bandlimited(rng, dims, 4, scale=1.0)
        fwd = shoot(op, v0, 10, band=4)
        back = shoot(op, -fwd.velocities[-1], 10, band=4)
        # phi^-1 then phi: x + a(x) + b(x + a(x))
        a = fwd.phi_inv
        coords = grid.identity_coords(dims) + a
        comp = a + np.stack([grid.sample(back.phi_inv[i], coords) for i in range(2)])
        assert np.max(np.abs(comp[:, 4:-4, 4:-4])) <= 0.1

    def test_deterministic(self, rng):
        op = spectral.build_operator((16, 16))
        v0 = random_bandlimited(rng, (16, 16), 4)
        p1, p2 = shoot(op, v0, 7), shoot(op, v0, 7)
        assert np.array_equal(p1.phi_inv, p2.phi_inv)
        assert all(np.array_equal(a, b) for a, b in zip(p1.velocities, p2.velocities))

    def test_euler_option(self, rng):
        op = spectral.build_operator((16, 16))
        v0 = random_bandlimited(rng, (16, 16), 4, 0.5)
        p = shoot(op, v0, 10, scheme="euler")
        assert p.scheme == "euler" and np.all(np.isfinite(p.phi_inv))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_step(self):
        op = spectral.build_operator((16, 16), alpha=1e-3, c=0.1)
        v0 = np.zeros((2, 16, 16))
        v0[0, 3, 3] = 1e150
        with pytest.raises(DivergenceError) as info:
            shoot(op, v0, 10, band=8)
        assert info.value.step >= 1

    def test_bad_steps(self):
        op = spectral.build_operator((8, 8))
        with pytest.raises(ParameterError):
            shoot(op, np.zeros((2, 8, 8)), 0)
