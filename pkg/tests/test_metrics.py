import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pnprr import grid, metrics
from pnprr.errors import DimensionError, UndefinedDiceError

from oracles import dice_by_counting

masks = arrays(np.uint8, (5, 6), elements=st.integers(0, 1))


class TestDice:
    def test_cases(self):
        A = np.zeros((4, 4), np.uint8)
        A[1:3, 0:2] = 1
        B = np.roll(A, 1, axis=1)
        assert metrics.dice(A, A) == 1.0
        assert metrics.dice(A, B) == 0.5
        C = np.zeros_like(A)
        C[3, 3] = 1
        assert metrics.dice(A, C) == 0.0

    def test_both_empty(self):
        with pytest.raises(UndefinedDiceError):
            metrics.dice(np.zeros((3, 3)), np.zeros((3, 3)))

    def test_non_binary(self):
        with pytest.raises(ValueError):
            metrics.dice(np.full((2, 2), 0.5), np.ones((2, 2)))

    @given(masks, masks)
    def test_symmetric_and_bounded(self, A, B):
        if A.sum() + B.sum() == 0:
            return
        d = metrics.dice(A, B)
        assert d == metrics.dice(B, A)
        assert 0.0 <= d <= 1.0
        assert d == pytest.approx(dice_by_counting(A, B), abs=1e-15)


class TestPropagate:
    def test_identity(self, rng):
        m = (rng.random((9, 8)) > 0.5).astype(np.uint8)
        assert np.array_equal(metrics.propagate_mask(m, np.zeros((2, 9, 8))), m)

    def test_integer_translation(self):
        m = np.zeros((10, 10), np.uint8)
        m[3:6, 2:5] = 1
        psi = np.zeros((2, 10, 10))
        psi[1] = -2.0  # output(x) = mask(x - 2 columns)
        out = metrics.propagate_mask(m, psi)
        want = np.zeros_like(m)
        want[3:6, 4:7] = 1
        assert np.array_equal(out, want)
        assert metrics.dice(out, want) == 1.0

    def test_dims(self):
        with pytest.raises(DimensionError):
            metrics.propagate_mask(np.zeros((4, 4)), np.zeros((2, 4, 5)))


class TestJacobian:
    def test_identity(self):
        s = metrics.jacobian_det_stats(np.zeros((2, 6, 7)))
        assert s == {"min": 1.0, "max": 1.0, "fraction_nonpositive": 0.0}

    @pytest.mark.parametrize("dims", [(8, 9), (5, 6, 7)])
    def test_uniform_scaling(self, dims):
        X = grid.identity_coords(dims)
        c = np.array([(n - 1) / 2 for n in dims]).reshape((-1,) + (1,) * len(dims))
        det = metrics.jacobian_determinant(0.1 * (X - c))
        assert np.allclose(det, 1.1 ** len(dims), atol=1e-12)

    def test_fold_detected(self):
        X = grid.identity_coords((8, 8))
        psi = np.zeros((2, 8, 8))
        psi[0] = -2.0 * X[0]  # x -> -x flips orientation
        s = metrics.jacobian_det_stats(psi)
        assert s["max"] < 0 and s["fraction_nonpositive"] == 1.0


class TestPsnr:
    def test_cases(self, rng):
        ref = rng.random((10, 10))
        ref[0, 0], ref[0, 1] = 0.0, 1.0
        assert metrics.psnr(ref, ref) == 99.0
        assert metrics.psnr(ref + 0.1, ref) == pytest.approx(20.0, abs=1e-10)
        assert metrics.psnr(ref + 1.0, ref) == pytest.approx(0.0, abs=1e-12)

    def test_constant_reference(self):
        with pytest.raises(ValueError):
            metrics.psnr(np.zeros((3, 3)), np.ones((3, 3)))
