"""Frozen time-series encoder front end and transformer."""

import numpy as np
import pytest

from t2l import tfm
from t2l.errors import InvalidArgumentError


def desk(seed=101):
    return tfm.TfmConfig.desk(init_seed=seed)


def test_adapt_length_identity_when_short():
    x = np.arange(512, dtype=float)
    out = tfm.adapt_length(x, 512)
    np.testing.assert_array_equal(out, x)


def test_adapt_length_1440_to_512_window_widths():
    # partition oracle: 1440 over 512 windows -> widths 2 and 3 only,
    # with 1440 - 2 * 512 = 416 windows of width 3
    n, cp = 1440, 512
    bounds = (np.arange(cp + 1) * n) // cp
    widths = np.diff(bounds)
    assert set(widths.tolist()) == {2, 3}
    assert int(np.sum(widths == 3)) == 416

    x = np.random.default_rng(0).normal(size=n)
    out = tfm.adapt_length(x, cp)
    assert out.shape == (cp,)
    for j in (0, 100, 511):
        np.testing.assert_allclose(out[j], x[bounds[j]:bounds[j + 1]].mean(), rtol=1e-12)


def test_adapt_length_constant_series():
    out = tfm.adapt_length(np.full(1000, 3.25), 128)
    np.testing.assert_allclose(out, 3.25, rtol=1e-12)


def test_adapt_length_empty_rejected():
    with pytest.raises(InvalidArgumentError):
        tfm.adapt_length(np.array([]), 10)


def test_mean_scale_examples():
    scaled, scale = tfm.mean_scale(np.full(7, 2.0))
    assert scale == 2.0
    np.testing.assert_allclose(scaled, 1.0)

    scaled, scale = tfm.mean_scale(np.zeros(5))
    assert scale == 1.0
    np.testing.assert_allclose(scaled, 0.0)

    scaled, scale = tfm.mean_scale(np.array([-3.0, 3.0]))
    assert scale == 3.0
    np.testing.assert_allclose(scaled, [-1.0, 1.0])


def test_quantize_examples():
    config = tfm.TfmConfig.desk(vocab_bins=10, clip_limit=5.0)
    assert tfm.quantize(np.array([-100.0]), config)[0] == 0
    assert tfm.quantize(np.array([100.0]), config)[0] == 9
    assert tfm.quantize(np.array([5.0]), config)[0] == 9  # at +clip -> top bin
    assert tfm.quantize(np.array([0.0]), config)[0] == 5  # floor((0+5)/10*10)


def test_encode_output_shape_paper():
    backbone = tfm.TfmBackbone(tfm.TfmConfig.paper_shape())
    emb = backbone.encode(np.random.default_rng(1).normal(size=1440))
    assert emb.matrix.shape == (513, 768)
    assert np.all(np.isfinite(emb.matrix))


@pytest.mark.parametrize("length", [16, 512, 1440, 4096])
def test_encode_shape_invariant_to_input_length(length):
    backbone = tfm.TfmBackbone(desk())
    emb = backbone.encode(np.random.default_rng(2).normal(size=length))
    assert emb.matrix.shape == (129, 96)


def test_encode_deterministic():
    backbone = tfm.TfmBackbone(desk())
    x = np.random.default_rng(3).normal(size=700)
    a = backbone.encode(x).matrix
    b = backbone.encode(x).matrix
    np.testing.assert_array_equal(a, b)


def test_encode_differs_across_init_seeds():
    x = np.sin(np.arange(600) / 9.0) + 0.1
    a = tfm.TfmBackbone(desk(seed=1)).encode(x).matrix
    b = tfm.TfmBackbone(desk(seed=2)).encode(x).matrix
    assert np.max(np.abs(a - b)) > 1e-3


def test_encode_batch_matches_single():
    backbone = tfm.TfmBackbone(desk())
    rng = np.random.default_rng(4)
    batch = [rng.normal(size=1440) for _ in range(3)]
    stacked, scales = backbone.encode_batch(batch)
    for i, series in enumerate(batch):
        single = backbone.encode(series)
        np.testing.assert_array_equal(stacked[i], single.matrix)
        assert scales[i] == single.scale


def test_short_input_left_padding_layout():
    backbone = tfm.TfmBackbone(desk())
    ids, scale = backbone.tokenize(np.ones(10))
    assert ids.shape == (129,)
    assert ids[-1] == backbone.eos_id
    assert np.all(ids[: 129 - 11] == backbone.pad_id)
    assert np.all(ids[129 - 11 : -1] < backbone.config.vocab_bins)


def test_frozen_weights_fingerprint_stable():
    a = tfm.TfmBackbone(desk())
    fp = a.fingerprint()
    a.encode(np.random.default_rng(5).normal(size=300))
    assert a.fingerprint() == fp
    assert tfm.TfmBackbone(desk()).fingerprint() == fp


def test_export_import_embeddings_roundtrip(tmp_path):
    backbone = tfm.TfmBackbone(desk())
    rng = np.random.default_rng(6)
    embs = [backbone.encode(rng.normal(size=500)) for _ in range(3)]
    path = str(tmp_path / "zc.f32")
    tfm.export_embeddings(path, embs)
    back = tfm.import_embeddings(path)
    assert len(back) == 3
    for orig, restored in zip(embs, back):
        np.testing.assert_allclose(restored.matrix, orig.matrix, rtol=1e-6, atol=1e-6)
        assert restored.scale == pytest.approx(orig.scale, rel=1e-6)


def test_weight_dump_nonempty(tmp_path):
    backbone = tfm.TfmBackbone(desk())
    path = tmp_path / "w.f32"
    backbone.dump_weights(str(path))
    dumped = np.fromfile(path, dtype="<f4")
    expected = sum(a.size for a in backbone.weight_arrays())
    assert dumped.size == expected
