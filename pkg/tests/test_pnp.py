import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnprr import pnp
from pnprr.denoise import get_denoiser, register_plugin
from pnprr.errors import DimensionError, ParameterError, PluginError, StallError
from pnprr.pnp import PnpParams, compute_tau, compute_Z, pnp_rr, two_step_baseline
from pnprr.registration import RegistrationParams, register
from pnprr.synthdata import generate_case

FAST = RegistrationParams(max_iters=15, n_steps=5, band=6)


@pytest.fixture(scope="module")
def small_case():
    return generate_case(3, resolution=32)


class TestTau:
    def test_reference_value(self):
        tau = compute_tau(PnpParams(0.045, 0.067))
        assert f"{tau:.3e}" == f"{5.0623e-6:.3e}" == "5.062e-06"
        assert tau == 0.045 / (2 * (0.067 + 1 / 0.015 ** 2))

    def test_zero_lambda1(self):
        assert compute_tau(PnpParams(0.0, 5.0)) == 0.0

    def test_large_lambda2_limit(self):
        taus = [compute_tau(PnpParams(1.0, l2)) for l2 in (1e2, 1e5, 1e8, 1e12)]
        assert all(a > b for a, b in zip(taus, taus[1:])) and taus[-1] < 1e-12

    def test_infinite_sigma(self):
        p = PnpParams(1.0, 2.0, registration=RegistrationParams(sigma=math.inf))
        assert compute_tau(p) == 0.25

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ParameterError):
            RegistrationParams(sigma=sigma)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(1e-3, 1e2))
    def test_closed_form(self, l1, l2, sigma):
        p = PnpParams(l1, l2, registration=RegistrationParams(sigma=sigma))
        assert compute_tau(p) == l1 / (2 * (l2 + 1 / sigma ** 2))

    def test_negative_lambda(self):
        with pytest.raises(ParameterError):
            PnpParams(-1.0, 0.0)


class TestZ:
    def test_hand_value(self):
        p = PnpParams(0.0, 1.0, registration=RegistrationParams(sigma=1.0))
        assert compute_Z(np.full((2, 2), 2.0), np.full((2, 2), 4.0), p).tolist() == [[3.0, 3.0]] * 2

    def test_lambda2_zero(self, rng):
        w = rng.random((5, 6))
        assert np.array_equal(compute_Z(rng.random((5, 6)), w, PnpParams(1.0, 0.0)), w)

    def test_equal_inputs(self):
        T = np.linspace(0, 1, 12).reshape(3, 4)
        assert np.array_equal(compute_Z(T, T.copy(), PnpParams(1.0, 0.3)), T)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1e4), st.floats(1e-3, 10), st.integers(0, 2 ** 32 - 1))
    def test_between_inputs(self, l2, sigma, seed):
        r = np.random.default_rng(seed)
        T, W = r.normal(size=(6, 6)), r.normal(size=(6, 6))
        Z = compute_Z(T, W, PnpParams(0.0, l2, registration=RegistrationParams(sigma=sigma)))
        lo, hi = np.minimum(T, W), np.maximum(T, W)
        assert np.all(Z >= lo - 1e-12 * np.abs(lo)) and np.all(Z <= hi + 1e-12 * np.abs(hi))

    def test_dims(self):
        with pytest.raises(DimensionError):
            compute_Z(np.zeros((3, 3)), np.zeros((3, 4)), PnpParams())


class TestLoop:
    def test_identity_fixed_point(self, small_case):
        T = small_case.source
        tr = pnp_rr(T, T, "identity", PnpParams(0.1, 0.2, registration=FAST))
        assert tr.iterations == 1 and tr.converged
        assert np.all(tr.v0 == 0) and tr.records[0].residual == 0.0
        assert np.array_equal(tr.reconstruction, T)

    def test_single_outer_is_composition(self, small_case):
        c = small_case
        p = PnpParams(200.0, 1000.0, max_outer_iters=1, registration=FAST)
        tr = pnp_rr(c.source, c.target_noisy, "tv", p)
        res = register(c.source, c.target_noisy, FAST)
        Z = compute_Z(c.target_noisy, res.warped, p)
        want = get_denoiser("tv")(Z, compute_tau(p))
        assert tr.iterations == 1
        assert np.array_equal(tr.reconstruction, want)
        assert np.array_equal(tr.v0, res.v0) and np.array_equal(tr.phi_inv, res.phi_inv)
        assert tr.records[0].residual == np.linalg.norm(want - c.target_noisy) / np.linalg.norm(
            c.target_noisy)

    def test_prefix_property(self, small_case):
        c = small_case
        base = dict(lambda1=200.0, lambda2=1000.0, fixed_point_tol=0.0, registration=FAST)
        full = pnp_rr(c.source, c.target_noisy, "tv", PnpParams(max_outer_iters=3, **base),
                      keep_history=True)
        assert full.iterations == 3 and not full.converged
        for k in (1, 2):
            part = pnp_rr(c.source, c.target_noisy, "tv", PnpParams(max_outer_iters=k, **base))
            assert part.records == full.records[:k]
            assert np.array_equal(part.reconstruction, full.reconstructions[k - 1])

    def test_trace_bounded(self, small_case):
        c = small_case
        tr = pnp_rr(c.source, c.target_noisy, "tv",
                    PnpParams(200.0, 1000.0, max_outer_iters=2, fixed_point_tol=0.0,
                              registration=FAST))
        assert tr.iterations == 2 and [r.k for r in tr.records] == [1, 2]

    def test_lambda2_zero_self_consistency(self, small_case):
        c = small_case
        tr = pnp_rr(c.source, c.target_noisy, "identity",
                    PnpParams(0.0, 0.0, max_outer_iters=4, fixed_point_tol=0.05,
                              registration=FAST))
        assert np.array_equal(tr.reconstruction, tr.warped)


class TestErrors:
    def test_plugin_failure_carries_iteration(self, tmp_path, small_case):
        script = tmp_path / "fail.py"
        script.write_text("import sys\nsys.stderr.write('boom')\nsys.exit(4)\n")
        den = register_plugin("fail", [sys.executable, str(script)])
        with pytest.raises(pnp.PnpStepError) as info:
            pnp_rr(small_case.source, small_case.target_noisy, den, PnpParams(registration=FAST))
        assert info.value.k == 1 and isinstance(info.value.cause, PluginError)
        assert "outer iteration 1" in str(info.value)

    def test_stall_carries_iteration(self, monkeypatch, small_case):
        calls = []
        real = pnp.register

        def flaky(*a, **kw):
            calls.append(1)
            if len(calls) == 2:
                raise StallError("stuck", [1.0], 3)
            return real(*a, **kw)

        monkeypatch.setattr(pnp, "register", flaky)
        with pytest.raises(pnp.PnpStepError) as info:
            pnp_rr(small_case.source, small_case.target_noisy, "tv",
                   PnpParams(200.0, 1000.0, fixed_point_tol=0.0, registration=FAST))
        assert info.value.k == 2 and isinstance(info.value.cause, StallError)


class TestTwoStep:
    def test_identity_denoiser_is_register(self, small_case):
        c = small_case
        a = two_step_baseline(c.source, c.target_noisy, "identity", PnpParams(registration=FAST))
        b = register(c.source, c.target_noisy, FAST)
        assert np.array_equal(a.v0, b.v0) and a.energy_trace == b.energy_trace
        assert np.array_equal(a.denoised, c.target_noisy)

    def test_denoises_first(self, small_case):
        c = small_case
        p = PnpParams(200.0, 1000.0, registration=FAST)
        a = two_step_baseline(c.source, c.target_noisy, "tv", p)
        T_hat = get_denoiser("tv")(c.target_noisy, compute_tau(p))
        assert np.array_equal(a.denoised, T_hat)
        assert np.array_equal(a.v0, register(c.source, T_hat, FAST).v0)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_clean_target_matches_pnp(self, seed):
        from pnprr import metrics
        c = generate_case(seed, resolution=64)
        p = PnpParams(*pnp.lambdas_for(0.2, 0.15))
        a = two_step_baseline(c.source, c.target_clean, "tv", p)
        b = pnp_rr(c.source, c.target_clean, "tv", p)
        da = metrics.dice(metrics.propagate_mask(c.source_mask, a.phi_inv), c.target_mask)
        db = metrics.dice(metrics.propagate_mask(c.source_mask, b.phi_inv), c.target_mask)
        assert abs(da - db) <= 0.01


class TestLambdas:
    def test_round_trip(self):
        l1, l2 = pnp.lambdas_for(0.2, 0.15)
        p = PnpParams(l1, l2)
        assert compute_tau(p) == pytest.approx(0.15, rel=1e-12)
        Z = compute_Z(np.ones((2, 2)), np.zeros((2, 2)), p)
        assert np.allclose(Z, 0.2, rtol=1e-12)

    def test_zero_weight(self):
        assert pnp.lambdas_for(0.0, 0.0) == (0.0, 0.0)

    @pytest.mark.parametrize("w", [-0.1, 1.0])
    def test_bad_weight(self, w):
        with pytest.raises(ParameterError):
            pnp.lambdas_for(w, 0.1)
