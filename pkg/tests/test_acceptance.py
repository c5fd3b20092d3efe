"""Acceptance gate: one test per criterion, one PASS line per criterion.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale training
fixture (6000 samples, 10 epochs) backs criteria 3, 4, 9, and 10 and takes
the bulk of the runtime; everything else is minutes or seconds.
"""

import json
import os

import numpy as np
import pytest

from t2l import adapter as ad
from t2l import analysis, cli, downstream, llm, tfm, trainer
from t2l import config as run_config
from t2l import synthgen as sg

DESK_DATA_SEED = 20260808
DESK_TRAIN_SEED = 31337


def report(criterion, passed, detail):
    marker = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {marker} :: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# shared heavyweight fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    cache = os.environ.get("T2L_ACCEPT_CACHE", "")
    if cache and os.path.exists(os.path.join(cache, "desk6000", sg.META_NAME)):
        return sg.load_dataset(os.path.join(cache, "desk6000"))
    dataset = sg.generate_dataset(6000, seed=DESK_DATA_SEED)
    if cache:
        sg.save_dataset(dataset, os.path.join(cache, "desk6000"))
    return dataset


@pytest.fixture(scope="session")
def desk_run(desk_dataset):
    """Criterion-3 training run (desk preset) plus backbone fingerprints."""
    import dataclasses

    run = run_config.load_run_config("desk")
    pipeline = ad.build_pipeline(run.tfm, run.llm, run.adapter, dtype=np.float32)
    fp_before = (pipeline.tfm.fingerprint(), pipeline.llm.fingerprint())
    cache = os.environ.get("T2L_ACCEPT_CACHE", "")
    ckpt = os.path.join(cache, "desk6000.ckpt") if cache else ""
    if ckpt and os.path.exists(ckpt):
        pipeline = ad.pipeline_from_checkpoint(ckpt)
    else:
        train_config = dataclasses.replace(run.trainer, epochs=10, seed=DESK_TRAIN_SEED)
        params, _ = trainer.fit(desk_dataset, pipeline, train_config)
        pipeline.adapter.load_snapshot(params)
        if cache:
            ad.save_checkpoint(ckpt, pipeline.adapter, pipeline.tfm.config,
                               pipeline.llm.config)
    fp_after = (pipeline.tfm.fingerprint(), pipeline.llm.fingerprint())
    return pipeline, fp_before, fp_after


# ---------------------------------------------------------------------------
# 1. shape fidelity at the paper-shape configuration
# ---------------------------------------------------------------------------

def test_criterion_1_shape_fidelity():
    pipeline = ad.build_pipeline(
        tfm.TfmConfig.paper_shape(), llm.LlmConfig.paper_shape(), ad.AdapterConfig()
    )
    series = np.random.default_rng(0).normal(size=1440)
    emb = pipeline.tfm.encode(series)
    zc_t = np.ascontiguousarray(emb.matrix.T)[None]
    zc_mean = emb.matrix.mean(axis=0)[None]

    z_i = pipeline.adapter.input_encode(zc_t)
    seq = pipeline.adapter.pad_features(np.ascontiguousarray(z_i.transpose(0, 2, 1)))
    states = pipeline.llm.forward_embeddings(seq)
    z_m = llm.mean_pool(states[0]).vector
    z_o = pipeline.adapter.project(z_m[None], zc_mean)
    logits = pipeline.adapter.classify(z_o)

    chain = [emb.matrix.shape, z_i.shape[1:], seq.shape[1:], z_m.shape,
             z_o.shape[1:], logits.shape[1:]]
    expected = [(513, 768), (65, 64), (64, 2048), (2048,), (256,), (6,)]
    report(1, chain == expected, f"forward chain {chain}")


# ---------------------------------------------------------------------------
# 2. parameter budgets at the paper-shape configuration
# ---------------------------------------------------------------------------

def test_criterion_2_parameter_budgets():
    adapter = ad.Adapter(ad.AdapterConfig(), feature_dim=768, llm_hidden=2048, context=513)
    f_count = adapter.param_count("f.")
    g_count = adapter.param_count("g.")
    ok = 240_000 <= f_count <= 360_000 and 1_400_000 <= g_count <= 2_000_000
    report(2, ok, f"f={f_count} (budget [240K, 360K]), g={g_count} (budget [1.4M, 2.0M])")


# ---------------------------------------------------------------------------
# 3. pretext learnability at desk scale
# ---------------------------------------------------------------------------

def test_criterion_3_pretext_learnability(desk_run, desk_dataset):
    pipeline, _, _ = desk_run
    _, accuracy, _ = trainer.evaluate_pretext(pipeline, desk_dataset, "test")
    report(3, accuracy >= 0.35,
           f"held-out periodicity accuracy {accuracy:.3f} (bound 0.35, chance 0.167)")


def test_trained_logits_respond_to_period(desk_run):
    # changing only the planted period must move the trained logits
    pipeline, _, _ = desk_run
    lo = sg.sample_gp(sg.leaf(sg.periodic_sine(1.0, 30.0)), 1440, seed=3)
    hi = sg.sample_gp(sg.leaf(sg.periodic_sine(1.0, 180.0)), 1440, seed=3)
    logits_lo = pipeline.forward(lo)[0]
    logits_hi = pipeline.forward(hi)[0]
    assert np.max(np.abs(logits_lo - logits_hi)) > 0


# ---------------------------------------------------------------------------
# 4. frozen-backbone invariance
# ---------------------------------------------------------------------------

def test_criterion_4_frozen_backbones(desk_run):
    _, fp_before, fp_after = desk_run
    report(4, fp_before == fp_after,
           "backbone weight fingerprints bitwise identical before/after training")


# ---------------------------------------------------------------------------
# 5. gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_5_gradient_correctness():
    pipeline = ad.build_pipeline(
        tfm.TfmConfig.desk(), llm.LlmConfig.desk(), ad.AdapterConfig(), dtype=np.float64
    )
    series = sg.sample_gp(sg.random_expr(17, period=90), 1440, seed=21)
    rep = trainer.gradient_check(pipeline, series, label=2, n_params=300, seed=5)
    sections = ", ".join(f"{k}{v:.1e}" for k, v in rep.per_section.items())
    detail = (f"max rel err {rep.max_rel_err:.2e} over {rep.n_checked} informative of "
              f"300 sampled params ({rep.n_zero_excluded} zero-gradient excluded); "
              f"per-section max {sections}")
    report(5, rep.passed and rep.max_rel_err < 1e-4, detail)


# ---------------------------------------------------------------------------
# 6. GP generator correctness
# ---------------------------------------------------------------------------

def test_criterion_6_gp_generator():
    periodic_ok = True
    for p in sg.DEFAULT_PERIODS:
        x = sg.sample_gp(sg.leaf(sg.periodic_sine(1.0, float(p))), 1440, seed=p)
        if np.max(np.abs(x[p:] - x[:-p])) >= 1e-5:
            periodic_ok = False

    rng = np.random.default_rng(6)
    min_eig = np.inf
    for trial in range(50):
        expr = sg.random_expr(trial, period=int(rng.choice(sg.DEFAULT_PERIODS)))
        grid = np.sort(rng.uniform(0, 1440, size=64))
        k = sg.eval_expr(expr, grid)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(k).min()))

    expr = sg.leaf(sg.white_noise(1.0))
    lag1 = []
    for seed in range(200):
        x = sg.sample_gp(expr, 512, seed=seed)
        x = x - x.mean()
        lag1.append(float(np.dot(x[1:], x[:-1]) / np.dot(x, x)))
    wn_mean = abs(float(np.mean(lag1)))

    ok = periodic_ok and min_eig >= -1e-8 and wn_mean < 0.05
    report(6, ok, f"periodic repeat < 1e-5: {periodic_ok}; min eig {min_eig:.2e} "
                  f"(bound -1e-8); white-noise lag-1 |mean| {wn_mean:.4f} (bound 0.05)")


# ---------------------------------------------------------------------------
# 7. metric oracles
# ---------------------------------------------------------------------------

def test_criterion_7_metric_oracles():
    rng = np.random.default_rng(7)

    def auroc_oracle(scores, labels):
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        total = sum(1.0 if p > n else 0.5 if p == n else 0.0
                    for p in pos for n in neg)
        return total / (len(pos) * len(neg))

    def auprc_oracle(scores, labels):
        n_pos = int(labels.sum())
        area, prev = 0.0, 0.0
        for t in sorted(set(scores.tolist()), reverse=True):
            sel = scores >= t
            tp = int(labels[sel].sum())
            recall = tp / n_pos
            area += (recall - prev) * (tp / int(sel.sum()))
            prev = recall
        return area

    def spearman_oracle(x, y):
        def ranks(v):
            order = sorted(range(len(v)), key=lambda i: v[i])
            out = [0.0] * len(v)
            i = 0
            while i < len(v):
                j = i
                while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                    j += 1
                for k in range(i, j + 1):
                    out[order[k]] = (i + j + 2) / 2.0
                i = j + 1
            return np.array(out)
        rx, ry = ranks(list(x)), ranks(list(y))
        rx -= rx.mean()
        ry -= ry.mean()
        return float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))

    exact = 0
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        scores = np.round(rng.random(n), 2)
        a_ok = downstream.auroc(scores, labels) == auroc_oracle(scores, labels)
        p_ok = downstream.auprc(scores, labels) == auprc_oracle(scores, labels)
        exact += a_ok and p_ok

    sp_ok = 0
    for _ in range(1000):
        n = int(rng.integers(3, 11))
        x = np.round(rng.random(n), 1)
        y = np.round(rng.random(n), 1)
        if len(set(x)) < 2 or len(set(y)) < 2:
            sp_ok += 1
            continue
        sp_ok += abs(analysis.spearman(x, y) - spearman_oracle(x, y)) < 1e-12

    report(7, exact == 1000 and sp_ok == 1000,
           f"auroc/auprc exact on {exact}/1000 instances, spearman on {sp_ok}/1000")


# ---------------------------------------------------------------------------
# 8. efficiency: near-constant latency across input length
# ---------------------------------------------------------------------------

def test_criterion_8_latency_ratio():
    pipeline = ad.build_pipeline(
        tfm.TfmConfig.desk(), llm.LlmConfig.desk(), ad.AdapterConfig()
    )

    def single(series):
        return pipeline.forward(series)[0]

    def batched(series_list):
        zc_t, zc_mean = pipeline.encode_series(series_list)
        return pipeline.forward_cached(zc_t, zc_mean)[0]

    bench = analysis.bench_latency(single, batched, lengths=[512, 4096],
                                   repeats=100, warmup=100, batch=16, seed=8)
    lat512 = bench.row_for(512).latency_mean_ms
    lat4096 = bench.row_for(4096).latency_mean_ms
    ratio = lat4096 / lat512
    thr_ratio = bench.row_for(4096).throughput_mean / bench.row_for(512).throughput_mean
    ok = ratio <= 1.2 and thr_ratio >= 0.8
    report(8, ok, f"latency(4096)/latency(512) = {lat4096:.2f}/{lat512:.2f} = {ratio:.3f} "
                  f"(bound 1.2); throughput ratio {thr_ratio:.3f} (bound 0.8)")


# ---------------------------------------------------------------------------
# 9. embeddings correlate with autocorrelation structure
# ---------------------------------------------------------------------------

def test_criterion_9_acf_structure(desk_run, desk_dataset):
    pipeline, _, _ = desk_run
    held_out = desk_dataset.indices("test")[:500]
    series = [desk_dataset.samples[i].series.astype(np.float64) for i in held_out]
    embeddings = pipeline.extract_batch(series)
    rep = analysis.embedding_acf_correlation(series, embeddings, n_lags=10)
    frac = rep.count_above_threshold / embeddings.shape[1]
    report(9, frac >= 0.10,
           f"{rep.count_above_threshold}/{embeddings.shape[1]} dims "
           f"({100 * frac:.1f}%) with max |rho| > 0.3 (bound 10%)")


# ---------------------------------------------------------------------------
# 10. end-to-end probe sanity on the bundled downstream benchmark
# ---------------------------------------------------------------------------

def test_criterion_10_probe_sanity(desk_run):
    pipeline, _, _ = desk_run
    records = downstream.make_downstream_benchmark(
        n_subjects=200, records_per_subject=3, seed=424242
    )
    series = [r.series.astype(np.float64) for r in records]
    embeddings = pipeline.extract_batch(series)
    labels = np.array([r.label for r in records])
    subjects = np.array([r.subject_id for r in records])

    config = downstream.ProbeConfig(n_shuffles=5)
    real = downstream.probe(embeddings, labels, subjects, config, seed=1)

    perm_rng = np.random.default_rng(99)
    subject_ids = sorted(set(subjects))
    permuted_of = dict(zip(subject_ids,
                           perm_rng.permutation([labels[subjects == s][0]
                                                 for s in subject_ids])))
    null_labels = np.array([permuted_of[s] for s in subjects])
    null = downstream.probe(embeddings, null_labels, subjects, config, seed=2)

    ok = real.auroc_mean >= 0.65 and abs(null.auroc_mean - 0.5) <= 0.1
    report(10, ok, f"probe AUROC {real.auroc_mean:.3f} ± {real.auroc_std:.3f} "
                   f"(bound 0.65); permutation-null AUROC {null.auroc_mean:.3f} "
                   f"(band 0.5 ± 0.1)")


# ---------------------------------------------------------------------------
# 11. reproducibility of generate and train commands
# ---------------------------------------------------------------------------

def test_criterion_11_reproducibility(tmp_path):
    cfg = tmp_path / "repro.json"
    cfg.write_text(json.dumps({
        "synthgen": {"n": 240},
        "trainer": {"epochs": 2},
    }))
    data_dirs = [str(tmp_path / "d1"), str(tmp_path / "d2")]
    for out in data_dirs:
        assert cli.main(["generate", "--config", str(cfg), "--seed", "77",
                         "--out", out]) == 0
    gen_identical = all(
        open(os.path.join(data_dirs[0], name), "rb").read()
        == open(os.path.join(data_dirs[1], name), "rb").read()
        for name in (sg.SERIES_NAME, sg.LABELS_NAME, sg.META_NAME)
    )
    train_dirs = [str(tmp_path / "t1"), str(tmp_path / "t2")]
    for out in train_dirs:
        assert cli.main(["train", "--config", str(cfg), "--seed", "77",
                         "--data", data_dirs[0], "--out", out]) == 0
    ckpt_identical = (
        open(os.path.join(train_dirs[0], "checkpoint.t2l"), "rb").read()
        == open(os.path.join(train_dirs[1], "checkpoint.t2l"), "rb").read()
    )
    report(11, gen_identical and ckpt_identical,
           f"datasets byte-identical: {gen_identical}; "
           f"checkpoints byte-identical: {ckpt_identical}")
