import numpy as np
import pytest

from dropspread import backend
from dropspread.ops import (avgpool2, avgpool2_backward, conv2d,
                            conv2d_backward, resize_bilinear,
                            resize_bilinear_backward, resize_nearest,
                            upsample2_nearest, upsample2_nearest_backward)

RNG = np.random.default_rng(0)


@pytest.mark.skipif(not backend._HAVE_NUMBA, reason="numba unavailable")
class TestBackendEquivalence:
    def test_im2col_matches(self):
        xp = RNG.standard_normal((2, 3, 10, 12))
        a = backend.im2col_numba(xp, 3, 3, 8, 10)
        b = backend.im2col_numpy(xp, 3, 3, 8, 10)
        np.testing.assert_allclose(a, b, atol=0)

    def test_col2im_matches(self):
        cols = RNG.standard_normal((2, 3 * 9, 8 * 10))
        a = backend.col2im_numba(cols, 3, 3, 3, 8, 10, 1, 1)
        b = backend.col2im_numpy(cols, 3, 3, 3, 8, 10, 1, 1)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_col2im_is_adjoint_of_im2col(self):
        # <im2col(x), c> == <x, col2im(c)> for padded views
        x = RNG.standard_normal((1, 2, 6, 6))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = backend.im2col(xp, 3, 3, 6, 6)
        c = RNG.standard_normal(cols.shape)
        lhs = float((cols * c).sum())
        rhs = float((x * backend.col2im(c, 2, 3, 3, 6, 6, 1, 1)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestConv:
    def test_conv_matches_direct_convolution(self):
        x = RNG.standard_normal((1, 2, 6, 7))
        w = RNG.standard_normal((3, 2, 3, 3))
        b = RNG.standard_normal(3)
        y = conv2d(x, w, b)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros((1, 3, 6, 7))
        for co in range(3):
            for yy in range(6):
                for xx in range(7):
                    acc = b[co]
                    for ci in range(2):
                        for ky in range(3):
                            for kx in range(3):
                                acc += w[co, ci, ky, kx] * xp[0, ci, yy + ky, xx + kx]
                    expected[0, co, yy, xx] = acc
        np.testing.assert_allclose(y, expected, atol=1e-10)

    @pytest.mark.parametrize("kernel", [1, 3])
    def test_conv_backward_finite_differences(self, kernel):
        x = RNG.standard_normal((2, 2, 5, 5))
        w = RNG.standard_normal((3, 2, kernel, kernel))
        b = RNG.standard_normal(3)
        dy = RNG.standard_normal((2, 3, 5, 5))
        dx, dw, db = conv2d_backward(x, w, dy)
        eps = 1e-6

        def loss(xv, wv, bv):
            return float((conv2d(xv, wv, bv) * dy).sum())

        for arr, grad in ((x, dx), (w, dw), (b, db)):
            idx = tuple(RNG.integers(0, s) for s in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            up = loss(x, w, b)
            arr[idx] = orig - eps
            down = loss(x, w, b)
            arr[idx] = orig
            assert (up - down) / (2 * eps) == pytest.approx(grad[idx], rel=1e-6)


class TestResamplers:
    def test_avgpool_and_adjoint(self):
        x = RNG.standard_normal((1, 1, 4, 4))
        y = avgpool2(x)
        assert y[0, 0, 0, 0] == pytest.approx(x[0, 0, :2, :2].mean())
        dy = RNG.standard_normal(y.shape)
        lhs = (avgpool2(x) * dy).sum()
        rhs = (x * avgpool2_backward(dy)).sum()
        assert lhs == pytest.approx(rhs)

    def test_upsample_nearest_and_adjoint(self):
        x = RNG.standard_normal((1, 2, 3, 3))
        y = upsample2_nearest(x)
        assert y.shape == (1, 2, 6, 6)
        np.testing.assert_array_equal(y[0, 0, :2, :2], x[0, 0, 0, 0])
        dy = RNG.standard_normal(y.shape)
        lhs = (y * dy).sum()
        rhs = (x * upsample2_nearest_backward(dy)).sum()
        assert lhs == pytest.approx(rhs)

    def test_bilinear_identity(self):
        x = RNG.standard_normal((3, 5, 5))
        np.testing.assert_allclose(resize_bilinear(x, 5, 5), x, atol=1e-12)

    def test_bilinear_constant_preserved(self):
        x = np.full((1, 4, 4), 3.5)
        np.testing.assert_allclose(resize_bilinear(x, 16, 16), 3.5, atol=1e-12)

    def test_bilinear_adjoint(self):
        x = RNG.standard_normal((1, 4, 6))
        dy = RNG.standard_normal((1, 8, 12))
        lhs = (resize_bilinear(x, 8, 12) * dy).sum()
        rhs = (x * resize_bilinear_backward(dy, 4, 6)).sum()
        assert lhs == pytest.approx(rhs)

    def test_nearest_resize_binary(self):
        mask = RNG.integers(0, 2, (16, 16))
        small = resize_nearest(mask, 4, 4)
        assert set(np.unique(small)) <= {0, 1}
        np.testing.assert_array_equal(resize_nearest(mask, 16, 16), mask)
