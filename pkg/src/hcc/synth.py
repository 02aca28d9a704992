"""Synthetic corpora with planted post-conclusion boundaries.

Each trace drifts through hidden space along a per-trace unit direction
while "concluding" (large drift, small noise, falling answer NLL), then
switches at the planted boundary to an attenuated drift with larger
isotropic noise, rising answer NLL, and higher sentence NLL/entropy
levels.  The signatures hold in expectation over a corpus, not per
sentence: individual sentences overlap across groups by design.

Determinism: trace i is generated entirely from the Philox stream keyed
``(seed, SYNTH_TRACE + i)``, so corpora are reproducible and traces could
be generated in parallel without changing the output.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .corpus import (
    AnswerScore,
    Corpus,
    CorpusError,
    EditorAnnotation,
    SentenceRecord,
    TraceRecord,
)
from .rng import Stream, substream

# removed-phase isotropic noise is this multiple of the retained noise scale
REMOVED_NOISE_FACTOR = 2.0


@dataclass(frozen=True)
class SynthConfig:
    count: int = 200
    t_min: int = 12
    t_max: int = 40
    dim: int = 32
    boundary_frac_low: float = 0.5
    boundary_frac_high: float = 0.9
    drift: float = 1.0  # retained per-sentence drift magnitude
    noise_scale: float = 0.04  # retained per-dim noise std
    attenuation: float = 0.15  # removed drift multiplier, in (0, 1)
    retained_nll: float = 0.8
    removed_nll: float = 1.6
    retained_entropy: float = 0.5
    removed_entropy: float = 1.1
    answer_nll_start: float = 3.5
    answer_nll_decrease: float = 0.06  # per retained sentence
    answer_nll_increase: float = 0.05  # per removed sentence
    tokens_min: int = 8
    tokens_max: int = 24
    seed: int = 0

    def validate(self) -> None:
        if self.count < 0:
            raise CorpusError(f"count must be >= 0, got {self.count}")
        if self.t_min < 4:
            raise CorpusError(f"t_min must be >= 4, got {self.t_min}")
        if self.t_min > self.t_max:
            raise CorpusError(f"infeasible T range [{self.t_min}, {self.t_max}]")
        if self.dim < 1:
            raise CorpusError(f"dim must be positive, got {self.dim}")
        if not 0.0 < self.boundary_frac_low <= self.boundary_frac_high < 1.0:
            raise CorpusError(
                f"boundary fraction range ({self.boundary_frac_low}, "
                f"{self.boundary_frac_high}) must sit inside (0, 1)"
            )
        if not 0.0 < self.attenuation < 1.0:
            raise CorpusError(f"attenuation must be in (0, 1), got {self.attenuation}")
        if self.removed_nll <= self.retained_nll:
            raise CorpusError("removed sentence NLL level must exceed retained level")
        if self.removed_entropy <= self.retained_entropy:
            raise CorpusError("removed sentence entropy level must exceed retained level")
        if not 1 <= self.tokens_min <= self.tokens_max:
            raise CorpusError(f"bad token range [{self.tokens_min}, {self.tokens_max}]")
        if self.drift <= 0 or self.noise_scale < 0:
            raise CorpusError("drift must be positive and noise_scale non-negative")


def describe(config: SynthConfig) -> str:
    """Machine-parseable key=value rendering of the full config."""
    lines = [f"{f.name}={getattr(config, f.name)!r}" for f in fields(config)]
    return "\n".join(lines)


def parse_config(text: str) -> SynthConfig:
    """Inverse of ``describe`` (also accepts hand-written key=value files)."""
    kwargs = {}
    valid = {f.name: f.type for f in fields(SynthConfig)}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorpusError(f"config line {line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in valid:
            raise CorpusError(f"config line {line_no}: unknown key {key!r}")
        text_value = value.strip()
        kwargs[key] = int(text_value) if valid[key] == "int" else float(text_value)
    config = SynthConfig(**kwargs)
    config.validate()
    return config


def _positive_normal(rng: np.random.Generator, mean: float, std: float, size: int) -> np.ndarray:
    # sentence-score noise floored away from zero to keep invariants strict
    return np.maximum(rng.normal(mean, std, size=size), 1e-3)


def _corpus_direction(config: SynthConfig) -> np.ndarray:
    # the conclusion-drift direction is shared across the corpus, mirroring a
    # fixed evaluator's shared representation space; per-trace randomness
    # lives in starts, magnitudes, and noise
    direction = substream(config.seed, Stream.SYNTH_CORPUS, 0).normal(size=config.dim)
    return direction / np.linalg.norm(direction)


def _generate_trace(
    config: SynthConfig, index: int, direction: np.ndarray
) -> tuple[TraceRecord, EditorAnnotation]:
    rng = substream(config.seed, Stream.SYNTH_TRACE, index)
    t_count = int(rng.integers(config.t_min, config.t_max + 1))
    frac = rng.uniform(config.boundary_frac_low, config.boundary_frac_high)
    boundary = int(np.clip(round(frac * t_count), 1, t_count - 1))

    drift = config.drift * rng.uniform(0.85, 1.15)
    attenuation = config.attenuation * rng.uniform(0.8, 1.2)
    rows = np.empty((t_count + 1, config.dim), dtype=np.float64)
    rows[0] = rng.normal(0.0, 1.0, size=config.dim)
    for t in range(1, t_count + 1):
        if t <= boundary:
            step = drift * direction + rng.normal(0.0, config.noise_scale, size=config.dim)
        else:
            step = attenuation * drift * direction + rng.normal(
                0.0, REMOVED_NOISE_FACTOR * config.noise_scale, size=config.dim
            )
        rows[t] = rows[t - 1] + step
    hidden = rows.astype(np.float32)
    hidden.setflags(write=False)

    token_counts = rng.integers(config.tokens_min, config.tokens_max + 1, size=t_count)
    sentences = []
    for t in range(1, t_count + 1):
        n_t = int(token_counts[t - 1])
        if t <= boundary:
            nll_level, ent_level = config.retained_nll, config.retained_entropy
        else:
            nll_level, ent_level = config.removed_nll, config.removed_entropy
        logprobs = -_positive_normal(rng, nll_level, 0.25, n_t)
        entropies = _positive_normal(rng, ent_level, 0.15, n_t)
        sentences.append(
            SentenceRecord(
                index=t,
                text=f"synthetic sentence {t} of trace {index}.",
                token_count=n_t,
                logprobs=tuple(float(x) for x in logprobs),
                entropies=tuple(float(x) for x in entropies),
            )
        )

    # answer NLL falls while concluding, rises afterwards (plus small noise)
    answer_scores = []
    nll = config.answer_nll_start
    entropy = 0.45 * config.answer_nll_start
    for t in range(t_count + 1):
        if t > 0:
            if t <= boundary:
                nll -= config.answer_nll_decrease * rng.uniform(0.5, 1.5)
                entropy -= 0.4 * config.answer_nll_decrease * rng.uniform(0.5, 1.5)
            else:
                nll += config.answer_nll_increase * rng.uniform(0.5, 1.5)
                entropy += 0.4 * config.answer_nll_increase * rng.uniform(0.5, 1.5)
        nll = max(nll, 1e-3)
        entropy = max(entropy, 1e-3)
        jitter = rng.normal(0.0, 0.005)
        answer_scores.append(
            AnswerScore(
                prefix_index=t,
                nll=float(max(nll + jitter, 1e-4)),
                entropy=float(max(entropy + jitter, 1e-4)),
            )
        )

    trace_id = f"synth-{index:06d}"
    trace = TraceRecord(
        id=trace_id,
        question=f"synthetic question {index}?",
        sentences=tuple(sentences),
        final_answer=f"answer {index}",
        answer_token_count=int(rng.integers(3, 9)),
        answer_scores=tuple(answer_scores),
        hidden=hidden,
    )
    labels = tuple(0 if t <= boundary else 1 for t in range(1, t_count + 1))
    return trace, EditorAnnotation(labels, boundary)


def generate(config: SynthConfig) -> Corpus:
    """Generate a fully annotated corpus; deterministic given the seed."""
    config.validate()
    direction = _corpus_direction(config)
    traces = []
    annotations = {}
    for i in range(config.count):
        trace, annotation = _generate_trace(config, i, direction)
        traces.append(trace)
        annotations[trace.id] = annotation
    return Corpus(
        traces=traces,
        annotations=annotations,
        source=f"synthetic(seed={config.seed})",
        dim=config.dim,
    )
