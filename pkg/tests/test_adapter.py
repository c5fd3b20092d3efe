"""Adapter architecture, parameter budgets, and checkpointing."""

import numpy as np
import pytest

from t2l import adapter as ad
from t2l import llm, nn, tfm
from t2l.errors import CheckpointError, ShapeError


def desk_pipeline(dtype=np.float32, adapter_seed=303):
    return ad.build_pipeline(
        tfm.TfmConfig.desk(),
        llm.LlmConfig.desk(),
        ad.AdapterConfig(init_seed=adapter_seed),
        dtype=dtype,
    )


@pytest.fixture(scope="module")
def pipe():
    return desk_pipeline()


def test_paper_shape_parameter_budgets():
    adapter = ad.Adapter(
        ad.AdapterConfig(), feature_dim=768, llm_hidden=2048, context=513
    )
    f_count = adapter.param_count("f.")
    g_count = adapter.param_count("g.")
    assert 240_000 <= f_count <= 360_000, f_count
    assert 1_400_000 <= g_count <= 2_000_000, g_count
    # architecture determines counts, seeds must not
    other = ad.Adapter(
        ad.AdapterConfig(init_seed=99), feature_dim=768, llm_hidden=2048, context=513
    )
    assert other.param_count("f.") == f_count
    assert other.param_count("g.") == g_count


def test_total_count_is_f_g_l():
    adapter = ad.Adapter(ad.AdapterConfig(), feature_dim=96, llm_hidden=256, context=129)
    total = adapter.param_count()
    assert total == sum(adapter.param_count(p) for p in ("f.", "g.", "l."))
    assert adapter.param_count("l.") == 256 * 6 + 6


def test_input_encode_output_shape_desk(pipe):
    zc_t = np.random.default_rng(0).normal(size=(2, 96, 129)).astype(np.float32)
    zi = pipe.adapter.input_encode(zc_t)
    assert zi.shape == (2, 65, 64)


def test_input_encode_shape_mismatch(pipe):
    with pytest.raises(ShapeError):
        pipe.adapter.input_encode(np.zeros((1, 50, 129), dtype=np.float32))


def test_pad_features_examples(pipe):
    rng = np.random.default_rng(1)
    zi_t = rng.normal(size=(3, 64, 65)).astype(np.float32)
    padded = pipe.adapter.pad_features(zi_t)
    assert padded.shape == (3, 64, 256)
    np.testing.assert_array_equal(padded[..., 65:], 0.0)
    np.testing.assert_allclose(padded.sum(axis=-1), zi_t.sum(axis=-1), rtol=1e-5)

    # identity when widths already match
    wide = rng.normal(size=(2, 4, 256)).astype(np.float32)
    assert pipe.adapter.pad_features(wide) is wide

    with pytest.raises(ShapeError):
        pipe.adapter.pad_features(np.zeros((1, 4, 300), dtype=np.float32))


def test_pad_to_2048_at_paper_shape():
    adapter = ad.Adapter(ad.AdapterConfig(), feature_dim=768, llm_hidden=2048, context=513)
    padded = adapter.pad_features(np.ones((64, 65), dtype=np.float32))
    assert padded.shape == (64, 2048)
    np.testing.assert_array_equal(padded[:, 65:], 0.0)


def test_project_zero_residual_matches_no_residual(pipe):
    rng = np.random.default_rng(2)
    z_m = rng.normal(size=(4, 256)).astype(np.float32)
    zeros = np.zeros((4, 96), dtype=np.float32)
    with_zero = pipe.adapter.project(z_m, zeros, with_residual=True)
    without = pipe.adapter.project(z_m, with_residual=False)
    np.testing.assert_allclose(with_zero, without, atol=1e-6)
    assert without.shape == (4, 256)


def test_classify_examples(pipe):
    rng = np.random.default_rng(3)
    z_o = rng.normal(size=(5, 256)).astype(np.float32)
    logits = pipe.adapter.classify(z_o)
    assert logits.shape == (5, 6)
    np.testing.assert_allclose(nn.softmax(logits.astype(np.float64)).sum(axis=1), 1.0, atol=1e-6)

    # zero weights -> logits equal the bias
    w = pipe.adapter.store.view("l.out.w").copy()
    b = pipe.adapter.store.view("l.out.b").copy()
    try:
        pipe.adapter.store.view("l.out.w")[:] = 0.0
        pipe.adapter.store.view("l.out.b")[:] = np.arange(6)
        np.testing.assert_allclose(
            pipe.adapter.classify(z_o), np.tile(np.arange(6), (5, 1)), atol=1e-6
        )
    finally:
        pipe.adapter.store.view("l.out.w")[:] = w
        pipe.adapter.store.view("l.out.b")[:] = b


def test_forward_shape_chain_desk(pipe):
    series = np.random.default_rng(4).normal(size=1440)
    logits, z_o, z_c = pipe.forward(series)
    assert z_c.shape == (129, 96)
    assert z_o.shape == (256,)
    assert logits.shape == (6,)


def test_forward_deterministic_eval(pipe):
    series = np.random.default_rng(5).normal(size=1440)
    a = pipe.forward(series)[0]
    b = pipe.forward(series)[0]
    np.testing.assert_array_equal(a, b)


def test_extract_embedding_definition(pipe):
    series = np.sin(np.arange(1440) * 2 * np.pi / 60) + 0.3
    emb = pipe.extract_embedding(series)
    assert emb.shape == (256,)

    zc_t, zc_mean = pipe.encode_series([series])
    _, z_o = pipe.forward_cached(zc_t, zc_mean, with_residual=False)
    np.testing.assert_array_equal(emb, z_o[0])

    # residual path differs whenever the resized mean feature is nonzero
    _, z_res = pipe.forward_cached(zc_t, zc_mean, with_residual=True)
    assert np.max(np.abs(z_res[0] - emb)) > 0


def test_extract_batch_matches_single(pipe):
    # batched BLAS calls may round differently at the last ulp, so this is
    # a tight allclose rather than bitwise equality
    rng = np.random.default_rng(6)
    series = [rng.normal(size=1440) for _ in range(3)]
    batch = pipe.extract_batch(series)
    for i, s in enumerate(series):
        np.testing.assert_allclose(
            batch[i], pipe.extract_embedding(s), rtol=1e-4, atol=1e-5
        )


def test_type2_channel_plan():
    assert ad.AdapterConfig().type2_channels() == [64, 64, 64, 128, 128]
    assert ad.AdapterConfig(blocks=10).type2_channels() == [64, 64, 64, 128, 128, 128, 128, 128, 128]


def test_checkpoint_roundtrip(tmp_path, pipe):
    path = str(tmp_path / "model.t2l")
    pipe.adapter.store.flat[:] = np.random.default_rng(7).normal(
        size=pipe.adapter.store.flat.size
    ).astype(np.float32)
    ad.save_checkpoint(path, pipe.adapter, pipe.tfm.config, pipe.llm.config)
    acfg, tcfg, lcfg, params = ad.load_checkpoint(path)
    assert acfg == pipe.adapter.config
    assert tcfg == pipe.tfm.config
    assert lcfg == pipe.llm.config
    np.testing.assert_array_equal(
        params.flat.astype(np.float32), pipe.adapter.store.flat
    )

    restored = ad.pipeline_from_checkpoint(path)
    series = np.random.default_rng(8).normal(size=800)
    np.testing.assert_array_equal(
        restored.forward(series)[0], pipe.forward(series)[0]
    )


def test_checkpoint_bad_magic_and_version(tmp_path):
    path = tmp_path / "bad.t2l"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(str(path))

    good = tmp_path / "good.t2l"
    pipe = desk_pipeline()
    ad.save_checkpoint(str(good), pipe.adapter, pipe.tfm.config, pipe.llm.config)
    blob = bytearray(good.read_bytes())
    blob[4] = 99  # corrupt the version field
    bad = tmp_path / "badver.t2l"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(str(bad))
