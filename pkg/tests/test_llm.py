"""Frozen causal decoder over embedding sequences."""

import numpy as np
import pytest

from t2l import llm
from t2l.errors import CapacityError, InvalidArgumentError, ShapeError


def desk(seed=202):
    return llm.LlmConfig.desk(init_seed=seed)


def test_forward_preserves_shape():
    backbone = llm.LlmBackbone(desk())
    x = np.random.default_rng(0).normal(size=(64, 256)).astype(np.float32) * 0.1
    y = backbone.forward_embeddings(x)
    assert y.shape == (64, 256)
    yb = backbone.forward_embeddings(x[None])
    assert yb.shape == (1, 64, 256)
    np.testing.assert_array_equal(y, yb[0])


def test_forward_deterministic():
    backbone = llm.LlmBackbone(desk())
    x = np.random.default_rng(1).normal(size=(32, 256)).astype(np.float32)
    np.testing.assert_array_equal(
        backbone.forward_embeddings(x), backbone.forward_embeddings(x)
    )


def test_zero_padded_features_give_finite_bounded_output():
    backbone = llm.LlmBackbone(desk())
    x = np.zeros((64, 256), dtype=np.float32)
    x[:, :65] = np.random.default_rng(2).normal(size=(64, 65)) * 0.5
    y = backbone.forward_embeddings(x)
    assert np.all(np.isfinite(y))
    assert np.max(np.abs(y)) < 1e3


def test_position_sensitivity():
    backbone = llm.LlmBackbone(desk())
    rng = np.random.default_rng(3)
    x = rng.normal(size=(16, 256)).astype(np.float32)
    perm = rng.permutation(16)
    assert not np.array_equal(perm, np.arange(16))
    y1 = backbone.forward_embeddings(x)
    y2 = backbone.forward_embeddings(x[perm])
    # permuting input rows must change the output (rotary positions)
    assert np.max(np.abs(y1[perm] - y2)) > 1e-4


def test_shape_and_capacity_errors():
    backbone = llm.LlmBackbone(desk())
    with pytest.raises(ShapeError):
        backbone.forward_embeddings(np.zeros((8, 100), dtype=np.float32))
    with pytest.raises(CapacityError):
        backbone.forward_embeddings(np.zeros((129, 256), dtype=np.float32))


def test_mean_pool_examples():
    single = np.array([[1.0, 2.0, 5.0]])
    np.testing.assert_array_equal(llm.mean_pool(single).vector, single[0])

    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(llm.mean_pool(np.stack([v, -v])).vector, 0.0)

    rows = np.array([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]])
    np.testing.assert_allclose(llm.mean_pool(rows).vector, [2.0, 3.0, 4.0])


def test_mean_pool_length_is_hidden():
    backbone = llm.LlmBackbone(desk())
    x = np.random.default_rng(4).normal(size=(40, 256)).astype(np.float32)
    pooled = llm.mean_pool(backbone.forward_embeddings(x))
    assert pooled.vector.shape == (256,)


def test_mean_pool_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        llm.mean_pool(np.zeros((0, 4)))


def test_backward_matches_finite_differences():
    config = llm.LlmConfig.desk(hidden=16, layers=2, heads=2, ff_dim=24, max_positions=8)
    backbone = llm.LlmBackbone(config, dtype=np.float64)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 6, 16))
    w = rng.normal(size=(1, 6, 16))

    out, caches = backbone.forward_with_cache(x)
    dx = backbone.backward(w.copy(), caches)

    num = np.zeros_like(x)
    h = 1e-6
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = float((backbone.forward_with_cache(x)[0] * w).sum())
        x[i] = orig - h
        fm = float((backbone.forward_with_cache(x)[0] * w).sum())
        x[i] = orig
        num[i] = (fp - fm) / (2 * h)
    denom = max(np.abs(dx).max(), np.abs(num).max())
    assert np.abs(dx - num).max() / denom < 1e-6


def test_frozen_fingerprint_stable():
    a = llm.LlmBackbone(desk())
    fp = a.fingerprint()
    a.forward_embeddings(np.ones((8, 256), dtype=np.float32))
    assert a.fingerprint() == fp
    assert llm.LlmBackbone(desk()).fingerprint() == fp
