"""Numba and NumPy kernel variants must agree."""

import numpy as np
import pytest

from t2l import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")

RNG = np.random.default_rng(1234)


def test_stationary_kernel_paths_agree():
    d = np.abs(RNG.normal(size=(64, 64))) * 50
    cases = [
        (K.KIND_CONSTANT, 1.3, 0.0),
        (K.KIND_RBF, 25.0, 0.0),
        (K.KIND_RATQUAD, 40.0, 0.7),
        (K.KIND_PERIODIC, 1.1, 30.0),
    ]
    for kind, p0, p1 in cases:
        a = K.stationary_kernel_numpy(kind, p0, p1, d)
        b = K.stationary_kernel_numba(kind, p0, p1, d)
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=0)


def test_toeplitz_paths_agree():
    v = RNG.normal(size=100)
    a = K.toeplitz_from_lags_numpy(v)
    b = K.toeplitz_from_lags_numba(v)
    np.testing.assert_array_equal(a, b)
    assert a[3, 10] == v[7] and a[10, 3] == v[7]


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_im2col_col2im_paths_agree(stride, pad):
    x = RNG.normal(size=(3, 5, 17)).astype(np.float32)
    a = K.im2col1d_numpy(x, 3, stride, pad)
    b = K.im2col1d_numba(x, 3, stride, pad)
    np.testing.assert_array_equal(a, b)
    dcols = RNG.normal(size=a.shape).astype(np.float32)
    ga = K.col2im1d_numpy(dcols, 17, 3, stride, pad)
    gb = K.col2im1d_numba(dcols, 17, 3, stride, pad)
    np.testing.assert_allclose(ga, gb, rtol=1e-6, atol=1e-6)


def test_maxpool_paths_agree():
    x = RNG.normal(size=(4, 6, 21)).astype(np.float32)
    ya, ia = K.maxpool2_fwd_numpy(x)
    yb, ib = K.maxpool2_fwd_numba(x)
    np.testing.assert_array_equal(ya, yb)
    np.testing.assert_array_equal(ia, ib)
    dy = RNG.normal(size=ya.shape).astype(np.float32)
    np.testing.assert_array_equal(
        K.maxpool2_bwd_numpy(dy, ia, 21), K.maxpool2_bwd_numba(dy, ib, 21)
    )


@pytest.mark.parametrize("lin,lout", [(17, 5), (8, 64), (64, 64), (2, 64)])
def test_adaptive_pool_paths_agree(lin, lout):
    x = RNG.normal(size=(2, 3, lin))
    a = K.adaptive_avgpool_fwd_numpy(x, lout)
    b = K.adaptive_avgpool_fwd_numba(x, lout)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    dy = RNG.normal(size=(2, 3, lout))
    ga = K.adaptive_avgpool_bwd_numpy(dy, lin)
    gb = K.adaptive_avgpool_bwd_numba(dy, lin)
    np.testing.assert_allclose(ga, gb, rtol=1e-12, atol=1e-12)


def test_adaptive_windows_cover_input():
    # every input position belongs to at least one window
    for lin, lout in [(17, 5), (9, 64), (513, 64), (2, 64)]:
        covered = np.zeros(lin, dtype=bool)
        for j in range(lout):
            s, e = K.adaptive_window(j, lin, lout)
            covered[s:e] = True
        assert covered.all()


def test_quantize_paths_agree():
    v = RNG.normal(size=1000) * 20
    a = K.quantize_bins_numpy(v, 15.0, 512)
    b = K.quantize_bins_numba(v, 15.0, 512)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 511
