"""Training loop and feature/target preparation for the boundary proxy.

Feature preparation standardizes in two places:

* the input hidden states are standardized per trace (rows centered by
  the trace's mean row, then divided by one scalar: the standard
  deviation over all entries).  Raw evaluator states carry arbitrary
  offsets and trace-length-dependent scales; the per-trace transform
  makes short and long trajectories geometrically alike and needs no
  stored statistics;
* the regression targets are z-scored with corpus-level scalars
  (uncertainty target defaults to sentence NLL, progress target to
  token-normalized forward progress) that are stored in the checkpoint.

Determinism: epoch e shuffles trace order with the Philox stream keyed
(seed, SHUFFLE + e); inside a batch, traces are processed in ascending
corpus index; reparameterization seeds derive from (seed, epoch, index).
The learning rate steps down (x0.3) at 60% and 85% of the epoch budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import Corpus, TraceRecord
from .geometry import DEFAULT_EPSILON, geometry_series
from .model import (
    HccConfig,
    LossBreakdown,
    TraceFeatures,
    gradients,
    init_params,
    predict,
    training_sample_seed,
)
from .rng import Stream, substream
from .uncertainty import uncertainty_series

LR_DECAY_POINTS = (0.6, 0.85)
LR_DECAY_FACTOR = 0.3


@dataclass(frozen=True)
class CorpusNormalization:
    """Target z-scoring constants fitted on the training corpus."""

    uncertainty_mean: float
    uncertainty_std: float
    geometry_mean: float
    geometry_std: float


@dataclass(frozen=True)
class PredictionResult:
    trace_id: str
    c_hat: int
    num_sentences: int
    delete_probs: np.ndarray
    t_hat: np.ndarray
    g_hat: np.ndarray

    @property
    def delete_flags(self) -> list[int]:
        return [int(p > 0.5) for p in self.delete_probs]


def raw_targets(
    trace: TraceRecord, config: HccConfig, epsilon: float = DEFAULT_EPSILON
) -> tuple[np.ndarray, np.ndarray]:
    """Un-normalized per-sentence targets (T_t, G_t) per the config's menu."""
    unc = uncertainty_series(trace)
    geo = geometry_series(trace, epsilon)
    t_target = getattr(unc, config.target_uncertainty)
    g_target = geo.metric(config.target_geometry)
    return np.asarray(t_target, dtype=np.float64), np.asarray(g_target, dtype=np.float64)


def fit_normalization(
    corpus: Corpus, config: HccConfig, epsilon: float = DEFAULT_EPSILON
) -> CorpusNormalization:
    t_all, g_all = [], []
    for trace in corpus.traces:
        t, g = raw_targets(trace, config, epsilon)
        t_all.append(t)
        g_all.append(g)
    t_cat = np.concatenate(t_all)
    g_cat = np.concatenate(g_all)

    def safe_std(arr: np.ndarray) -> float:
        s = float(arr.std())
        return s if s > 0 else 1.0

    return CorpusNormalization(
        uncertainty_mean=float(t_cat.mean()),
        uncertainty_std=safe_std(t_cat),
        geometry_mean=float(g_cat.mean()),
        geometry_std=safe_std(g_cat),
    )


def standardize_states(states: np.ndarray) -> np.ndarray:
    """Per-trace transform: center rows, divide by one scalar spread."""
    centered = states - states.mean(axis=0, keepdims=True)
    return centered / (centered.std() + 1e-6)


def build_features(
    trace: TraceRecord,
    config: HccConfig,
    norm: CorpusNormalization,
    boundary: Optional[int] = None,
    delete_labels=None,
    with_targets: bool = False,
    epsilon: float = DEFAULT_EPSILON,
) -> TraceFeatures:
    states = standardize_states(np.asarray(trace.hidden[1:], dtype=np.float64))  # h_1..h_T
    t_target = g_target = None
    if with_targets:
        t_raw, g_raw = raw_targets(trace, config, epsilon)
        t_target = (t_raw - norm.uncertainty_mean) / norm.uncertainty_std
        g_target = (g_raw - norm.geometry_mean) / norm.geometry_std
    return TraceFeatures(
        trace_id=trace.id,
        states=states,
        target_uncertainty=t_target,
        target_geometry=g_target,
        boundary=boundary,
        delete_labels=None if delete_labels is None else np.asarray(delete_labels, dtype=np.float64),
    )


class TrainingError(RuntimeError):
    pass


def learning_rate_at(epoch: int, config: HccConfig) -> float:
    lr = config.learning_rate
    for point in LR_DECAY_POINTS:
        if epoch >= point * config.epochs:
            lr *= LR_DECAY_FACTOR
    return lr


def train(
    corpus: Corpus,
    config: HccConfig,
    epsilon: float = DEFAULT_EPSILON,
    log=None,
) -> tuple[dict[str, np.ndarray], CorpusNormalization, list[LossBreakdown]]:
    """Adam training over an annotated corpus.

    Returns the parameters, the fitted normalization, and per-epoch mean
    loss breakdowns.  Fully deterministic given config.seed.
    """
    config.validate()
    annotated = corpus.annotated_traces()
    if not annotated:
        raise TrainingError("training corpus has no annotated traces")
    if corpus.dim != config.input_dim:
        raise TrainingError(
            f"corpus dim {corpus.dim} does not match config input_dim {config.input_dim}"
        )

    norm = fit_normalization(corpus, config, epsilon)
    features = [
        build_features(
            trace, config, norm,
            boundary=ann.boundary, delete_labels=ann.delete_labels,
            with_targets=True, epsilon=epsilon,
        )
        for trace, ann in annotated
    ]

    params = init_params(config, config.seed)
    adam_m = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    adam_v = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    step = 0

    n = len(features)
    history: list[LossBreakdown] = []
    for epoch in range(config.epochs):
        base_lr = learning_rate_at(epoch, config)
        order = substream(config.seed, Stream.SHUFFLE, epoch).permutation(n)
        sums = np.zeros(5)
        for start in range(0, n, config.batch_size):
            batch_idx = sorted(int(i) for i in order[start : start + config.batch_size])
            batch = [features[i] for i in batch_idx]
            seeds = [training_sample_seed(config.seed, epoch, i) for i in batch_idx]
            grads, breakdown = gradients(params, batch, config, seeds)
            if not np.isfinite(breakdown.total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, first trace {batch[0].trace_id}"
                )
            step += 1
            lr_t = base_lr * np.sqrt(1 - beta2**step) / (1 - beta1**step)
            for key, g in grads.items():
                adam_m[key] = beta1 * adam_m[key] + (1 - beta1) * g
                adam_v[key] = beta2 * adam_v[key] + (1 - beta2) * g * g
                params[key] = params[key] - lr_t * adam_m[key] / (np.sqrt(adam_v[key]) + eps_adam)
            w = len(batch) / n
            sums += w * np.array(
                [breakdown.cut, breakdown.delete, breakdown.kl, breakdown.ent, breakdown.geo]
            )
        history.append(LossBreakdown.compose(*sums, config))
        if log is not None:
            log(epoch, history[-1])
    return params, norm, history


def predict_trace(
    params: dict[str, np.ndarray],
    trace: TraceRecord,
    config: HccConfig,
    norm: CorpusNormalization,
) -> PredictionResult:
    features = build_features(trace, config, norm)
    c_hat, del_probs, t_hat, g_hat = predict(params, features, config)
    return PredictionResult(
        trace_id=trace.id,
        c_hat=c_hat,
        num_sentences=trace.num_sentences,
        delete_probs=del_probs,
        t_hat=t_hat,
        g_hat=g_hat,
    )


def predict_corpus(
    params: dict[str, np.ndarray],
    corpus: Corpus,
    config: HccConfig,
    norm: CorpusNormalization,
) -> list[PredictionResult]:
    return [predict_trace(params, trace, config, norm) for trace in corpus.traces]
