import numpy as np
import pytest

from pnprr import grid, spectral
from pnprr.epdiff import shoot
from pnprr.errors import DimensionError, ParameterError, StallError
from pnprr.metrics import jacobian_det_stats
from pnprr.registration import (RegistrationParams, energy, energy_and_gradient, gradient,
                                register)

from conftest import random_bandlimited


def blob(dims, center, width=3.0):
    X = grid.identity_coords(dims)
    return np.exp(-sum((X[i] - c) ** 2 for i, c in enumerate(center)) / (2 * width ** 2))


def centroid(img):
    X = grid.identity_coords(img.shape)
    return np.array([np.sum(X[i] * img) / img.sum() for i in range(img.ndim)])


@pytest.fixture
def pair16():
    return blob((16, 16), (7.3, 8.1), 2.0), blob((16, 16), (8.0, 7.2), 2.1)


class TestEnergy:
    def test_zero(self, rng):
        S = rng.random((16, 16))
        assert energy(np.zeros((2, 16, 16)), S, S) == 0.0

    def test_identity_warp(self, rng):
        S, T = rng.random((2, 16, 16))
        p = RegistrationParams()
        assert energy(np.zeros((2, 16, 16)), S, T, p) == grid.ssd(S, T) / 0.015 ** 2

    def test_compositional_oracle(self, rng, pair16):
        S, T = pair16
        p = RegistrationParams(band=4, n_steps=10)
        v0 = random_bandlimited(rng, (16, 16), 4, 0.5)
        op = spectral.build_operator((16, 16), p.alpha, p.c)
        path = shoot(op, v0, 10, band=4)
        want = grid.ssd(grid.warp(S, path.phi_inv), T) / p.sigma ** 2 + spectral.metric_pairing(op, v0)
        assert energy(v0, S, T, p) == pytest.approx(want, rel=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            energy(np.zeros((2, 8, 8)), np.zeros((8, 8)), np.zeros((8, 9)))


class TestGradient:
    def test_zero_at_minimum(self, rng):
        S = rng.random((16, 16))
        g = gradient(np.zeros((2, 16, 16)), S, S, RegistrationParams(band=4))
        assert np.all(g == 0.0)

    @pytest.mark.parametrize("scheme", ["rk4", "euler"])
    def test_finite_differences(self, rng, pair16, scheme):
        S, T = pair16
        p = RegistrationParams(band=4, n_steps=5, scheme=scheme)
        v0 = random_bandlimited(rng, (16, 16), 4, 1.0)
        _, g = energy_and_gradient(v0, S, T, p)
        eps = 1e-4
        for _ in range(5):
            d = spectral.bandlimit(rng.standard_normal((2, 16, 16)), 4)
            fd = (energy(v0 + eps * d, S, T, p) - energy(v0 - eps * d, S, T, p)) / (2 * eps)
            assert abs(np.vdot(g, d) - fd) <= 1e-3 * abs(fd)

    def test_metric_term_only(self, rng, pair16):
        S, T = pair16
        p = RegistrationParams(sigma=np.inf, band=4, n_steps=5)
        v0 = random_bandlimited(rng, (16, 16), 4, 1.0)
        g = gradient(v0, S, T, p)
        want = 2.0 * spectral.apply_L(p.operator((16, 16)), v0)
        assert np.max(np.abs(g - want)) <= 1e-10 * np.max(np.abs(want))

    def test_3d(self, rng):
        dims = (8, 8, 8)
        S, T = blob(dims, (3.5, 4, 4), 1.5), blob(dims, (4, 3.6, 4.2), 1.5)
        p = RegistrationParams(band=3, n_steps=3)
        v0 = random_bandlimited(rng, dims, 3, 0.3)
        _, g = energy_and_gradient(v0, S, T, p)
        d = spectral.bandlimit(rng.standard_normal((3,) + dims), 3)
        eps = 1e-4
        fd = (energy(v0 + eps * d, S, T, p) - energy(v0 - eps * d, S, T, p)) / (2 * eps)
        assert abs(np.vdot(g, d) - fd) <= 1e-3 * abs(fd)


class TestRegister:
    def test_same_image(self):
        S = blob((32, 32), (15, 16), 4)
        res = register(S, S)
        op = RegistrationParams().operator((32, 32))
        assert spectral.metric_pairing(op, res.v0) < 1e-8
        assert np.max(np.abs(res.phi_inv)) < 1e-6
        assert grid.ssd(res.warped, S) / grid.ssd(S, 0 * S) < 1e-6
        assert res.converged

    def test_blob_translation(self):
        # at sigma = 0.015 the exact minimiser itself stops ~0.56 voxel short
        # (the metric term dominates), so weight the data term more
        S = blob((64, 64), (30.0, 32.0), 5.0)
        T = blob((64, 64), (33.0, 32.0), 5.0)
        res = register(S, T, RegistrationParams(sigma=0.005))
        assert np.linalg.norm(centroid(res.warped) - centroid(T)) <= 0.5
        tr = np.asarray(res.energy_trace)
        assert np.all(np.diff(tr) < 0)
        assert jacobian_det_stats(res.phi_inv)["min"] > 0

    def test_warm_start_never_increases(self, pair16):
        S, T = pair16
        p = RegistrationParams(band=4, max_iters=5)
        first = register(S, T, p)
        again = register(S, T, p, v0=first.v0)
        assert again.energy_trace[0] == pytest.approx(first.energy_trace[-1], rel=1e-12)
        assert again.energy_trace[-1] <= again.energy_trace[0]

    def test_euclidean_descent(self, pair16):
        S, T = pair16
        p = RegistrationParams(band=4, max_iters=20, preconditioner="none")
        res = register(S, T, p)
        assert np.all(np.diff(res.energy_trace) < 0)
        with pytest.raises(ParameterError):
            RegistrationParams(preconditioner="newton")

    def test_max_iters(self, pair16):
        S, T = pair16
        res = register(S, T, RegistrationParams(band=4, max_iters=3, energy_tol=0))
        assert res.iterations == 3 and len(res.energy_trace) == 4
        assert res.stop_reason == "max_iters" and not res.converged

    def test_stall(self, pair16, monkeypatch):
        import pnprr.registration as reg
        S, T = pair16
        real = reg._evaluate

        def worse(v0, *a):
            ev = real(v0, *a)
            if np.any(v0 != 0):
                ev.reg += 1e9
            return ev

        monkeypatch.setattr(reg, "_evaluate", worse)
        with pytest.raises(StallError) as info:
            register(S, T, RegistrationParams(band=4))
        assert info.value.trace and info.value.iteration == 1

    def test_params_validation(self):
        with pytest.raises(ParameterError):
            RegistrationParams(sigma=0)
        with pytest.raises(ParameterError):
            RegistrationParams(max_iters=0)
        assert RegistrationParams().band_for((10, 100)) == (5, 16)
