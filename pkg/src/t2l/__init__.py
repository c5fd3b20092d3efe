"""Frozen-backbone reprogramming pipeline for periodic time series.

Synthetic GP data generation, a frozen time-series encoder and frozen
causal decoder, a trainable adapter between them, pretext training,
linear-probe downstream evaluation, and embedding/latency analysis.
"""

from .adapter import (
    Adapter,
    AdapterConfig,
    AdapterParams,
    Pipeline,
    build_pipeline,
    load_checkpoint,
    pipeline_from_checkpoint,
    save_checkpoint,
)
from .analysis import acf, bench_latency, embedding_acf_correlation, spearman
from .downstream import (
    LabeledSeries,
    ProbeConfig,
    ProbeReport,
    auprc,
    auroc,
    ingest_csv,
    make_downstream_benchmark,
    probe,
    subject_split,
)
from .llm import LlmBackbone, LlmConfig, PooledState, mean_pool
from .synthgen import (
    KernelExpr,
    KernelSpec,
    SyntheticDataset,
    SyntheticSample,
    eval_expr,
    eval_kernel,
    generate_dataset,
    load_dataset,
    random_expr,
    sample_gp,
    save_dataset,
)
from .tfm import TfmBackbone, TfmConfig, TfmEmbedding, adapt_length, mean_scale, quantize
from .trainer import TrainConfig, cross_entropy, evaluate_pretext, fit, gradient_check

__version__ = "0.1.0"
