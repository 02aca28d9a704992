"""Boundary-proxy network: forward pass, losses, and exact gradients.

The network reads the per-sentence hidden states h_1..h_T of one trace and
scores every position 0..T as the last retained sentence:

* a single-layer causal gated recurrence (update/reset gating) produces
  contextual states ht_t;
* a posterior head maps ht_t to a diagonal Gaussian over a latent z_t,
  regularized toward a sequential prior predicted from ht_{t-1} (a learned
  initial prior covers t = 1); z_t projects to the fusion space as b_t;
* two diagnostic heads map ht_t to (context vector, scalar estimate)
  pairs: an uncertainty estimate trained against T_t and a progress
  estimate trained against G_t;
* the fused state m_t = LN(b_t + a_geo * s_geo_t + a_ent * s_ent_t) feeds
  an affine cut head (softmax over positions, with a learned start state
  m_0 for position 0) and an affine per-sentence deletion head.

Everything is plain numpy with hand-written reverse-mode gradients; the
test suite checks them against central finite differences.  Training-mode
forward draws the reparameterization noise for sentence t from the t-th
block of a per-trace Philox stream, so a (seed, trace) pair pins the
entire sample path and batch composition never changes results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .rng import Stream, philox, substream

PROB_CLAMP = 1e-7  # deletion probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP]
LN_EPS = 1e-5

UNCERTAINTY_TARGETS = ("sent_nll", "sent_entropy")
GEOMETRY_TARGETS = ("prog_per_token", "forward_progress", "disp_per_token", "displacement", "efficiency")


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class HccConfig:
    input_dim: int
    encoder_dim: int = 64
    latent_dim: int = 16
    context_dim: int = 32
    lambda_del: float = 1.0
    lambda_kl: float = 0.05
    lambda_ent: float = 0.1
    lambda_geo: float = 0.1
    huber_delta: float = 1.0
    logvar_low: float = -8.0
    logvar_high: float = 8.0
    learning_rate: float = 3e-3
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    target_uncertainty: str = "sent_nll"
    target_geometry: str = "prog_per_token"

    def validate(self) -> None:
        for name in ("input_dim", "encoder_dim", "latent_dim", "context_dim"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lambda_del", "lambda_kl", "lambda_ent", "lambda_geo"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be non-negative")
        if self.huber_delta <= 0:
            raise ModelError("huber_delta must be positive")
        if self.logvar_low >= self.logvar_high:
            raise ModelError("logvar clamp range must satisfy low < high")
        if self.target_uncertainty not in UNCERTAINTY_TARGETS:
            raise ModelError(f"unknown uncertainty target {self.target_uncertainty!r}")
        if self.target_geometry not in GEOMETRY_TARGETS:
            raise ModelError(f"unknown geometry target {self.target_geometry!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ModelError("epochs and batch_size must be positive")


def param_spec(config: HccConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) table; fixes init, Adam, and checkpoint order."""
    d, e = config.input_dim, config.encoder_dim
    z, c = config.latent_dim, config.context_dim
    return [
        ("enc_Wz", (d + e, e)),
        ("enc_bz", (e,)),
        ("enc_Wr", (d + e, e)),
        ("enc_br", (e,)),
        ("enc_Wh", (d + e, e)),
        ("enc_bh", (e,)),
        ("post_Wmu", (e, z)),
        ("post_bmu", (z,)),
        ("post_Wlv", (e, z)),
        ("post_blv", (z,)),
        ("prior_Wmu", (e, z)),
        ("prior_bmu", (z,)),
        ("prior_Wlv", (e, z)),
        ("prior_blv", (z,)),
        ("prior_mu0", (z,)),
        ("prior_lv0", (z,)),
        ("lat_W", (z, c)),
        ("lat_b", (c,)),
        ("ent_W", (e, c + 1)),
        ("ent_b", (c + 1,)),
        ("geo_W", (e, c + 1)),
        ("geo_b", (c + 1,)),
        ("alpha_ent", ()),
        ("alpha_geo", ()),
        ("ln_gamma", (c,)),
        ("ln_beta", (c,)),
        ("m0", (c,)),
        ("cut_w", (c,)),
        ("cut_b", ()),
        ("del_w", (c,)),
        ("del_b", ()),
    ]


LOGVAR_BIAS_INIT = -4.0  # start latents near-deterministic so the sampled
# training path matches the mean-based inference path from the first epoch


def init_params(config: HccConfig, seed: int) -> dict[str, np.ndarray]:
    """Scaled-uniform init, deterministic given the seed.

    Weight matrices (and the start state m_0, treated as a 1-row matrix)
    draw from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).  Log-variance
    biases start at LOGVAR_BIAS_INIT; the remaining biases, the initial
    prior mean, and the LN shift start at zero; gates and LN scale at one.
    """
    config.validate()
    rng = substream(seed, Stream.PARAM_INIT, 0)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_spec(config):
        if name in ("alpha_ent", "alpha_geo"):
            params[name] = np.float64(1.0)
        elif name == "ln_gamma":
            params[name] = np.ones(shape)
        elif name in ("post_blv", "prior_blv", "prior_lv0"):
            params[name] = np.full(shape, LOGVAR_BIAS_INIT)
        elif name in ("ln_beta", "prior_mu0") or name.endswith("_b") or name.endswith(
            ("_bz", "_br", "_bh", "_bmu")
        ):
            params[name] = np.zeros(shape)
        elif name in ("cut_w", "del_w", "m0"):
            bound = np.sqrt(6.0 / (1 + shape[0]))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass(frozen=True)
class TraceFeatures:
    """Per-trace model inputs: states plus (optionally) training targets."""

    trace_id: str
    states: np.ndarray  # (T, D) hidden states h_1..h_T
    target_uncertainty: Optional[np.ndarray] = None  # (T,) z-scored T_t
    target_geometry: Optional[np.ndarray] = None  # (T,) z-scored G_t
    boundary: Optional[int] = None  # c* in [0, T]
    delete_labels: Optional[np.ndarray] = None  # (T,) 0/1

    @property
    def length(self) -> int:
        return self.states.shape[0]


@dataclass
class ForwardOutput:
    """Everything the losses and diagnostics need, for one trace."""

    h_tilde: np.ndarray  # (T, E)
    mu: np.ndarray  # (T, Z)
    logvar: np.ndarray
    mu_p: np.ndarray
    logvar_p: np.ndarray
    z: np.ndarray
    b: np.ndarray  # (T, C)
    s_ent: np.ndarray
    t_hat: np.ndarray  # (T,)
    s_geo: np.ndarray
    g_hat: np.ndarray
    m: np.ndarray  # (T+1, C), row 0 = m_0
    cut_logits: np.ndarray  # (T+1,)
    del_probs: np.ndarray  # (T,), in (0, 1)
    kl: np.ndarray  # (T,)


@dataclass(frozen=True)
class LossBreakdown:
    cut: float
    delete: float
    kl: float
    ent: float
    geo: float
    total: float

    @staticmethod
    def compose(cut, delete, kl, ent, geo, config: HccConfig) -> "LossBreakdown":
        total = (
            cut
            + config.lambda_del * delete
            + config.lambda_kl * kl
            + config.lambda_ent * ent
            + config.lambda_geo * geo
        )
        return LossBreakdown(cut, delete, kl, ent, geo, total)


def kl_gaussians(mu_q, logvar_q, mu_p, logvar_p) -> float:
    """KL(N(mu_q, diag e^lv_q) || N(mu_p, diag e^lv_p)), summed over dims."""
    mu_q, logvar_q = np.asarray(mu_q, dtype=np.float64), np.asarray(logvar_q, dtype=np.float64)
    mu_p, logvar_p = np.asarray(mu_p, dtype=np.float64), np.asarray(logvar_p, dtype=np.float64)
    per_dim = 0.5 * (
        logvar_p - logvar_q + (np.exp(logvar_q) + (mu_q - mu_p) ** 2) * np.exp(-logvar_p) - 1.0
    )
    return float(per_dim.sum())


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def reparam_noise(sample_seed: int, length: int, latent_dim: int) -> np.ndarray:
    """Noise for sentences 1..length; block t-1 belongs to sentence t."""
    rng = philox(sample_seed, Stream.REPARAM)
    return rng.normal(size=(length, latent_dim))


def training_sample_seed(seed: int, epoch: int, trace_index: int) -> int:
    """Documented key layout: one reparameterization stream per (epoch, trace)."""
    return (int(seed) ^ (int(epoch) << 32)) + int(trace_index) + 1


@dataclass
class _BatchTape:
    """Forward intermediates the backward pass replays."""

    xs: np.ndarray  # (B, Tmax, D)
    mask: np.ndarray  # (B, Tmax)
    lengths: np.ndarray
    states: np.ndarray  # (B, Tmax+1, E); row 0 is the zero start state
    gate_u: np.ndarray  # (B, Tmax, E)
    gate_r: np.ndarray
    cand: np.ndarray
    mu: np.ndarray  # (B, Tmax, Z)
    logvar_raw: np.ndarray
    logvar: np.ndarray
    mu_p: np.ndarray
    logvar_p_raw: np.ndarray
    logvar_p: np.ndarray
    eta: Optional[np.ndarray]
    z: np.ndarray
    b: np.ndarray  # (B, Tmax, C)
    s_ent: np.ndarray
    t_hat: np.ndarray
    s_geo: np.ndarray
    g_hat: np.ndarray
    pre: np.ndarray  # fusion input before LN
    ln_xhat: np.ndarray
    ln_d: np.ndarray  # (B, Tmax, 1) std + eps
    ln_sigma: np.ndarray
    m: np.ndarray  # (B, Tmax, C) fused states for t >= 1
    cut_logits: np.ndarray  # (B, Tmax+1)
    del_logits: np.ndarray  # (B, Tmax)
    del_probs: np.ndarray
    kl: np.ndarray  # (B, Tmax)


def _pad_batch(batch: Sequence[TraceFeatures]):
    lengths = np.array([f.length for f in batch], dtype=np.int64)
    t_max = int(lengths.max())
    dim = batch[0].states.shape[1]
    xs = np.zeros((len(batch), t_max, dim))
    mask = np.zeros((len(batch), t_max))
    for i, f in enumerate(batch):
        xs[i, : f.length] = f.states
        mask[i, : f.length] = 1.0
    return xs, mask, lengths


def _forward_batch(
    params: dict[str, np.ndarray],
    batch: Sequence[TraceFeatures],
    config: HccConfig,
    sample_seeds: Optional[Sequence[int]],
) -> _BatchTape:
    """Run the network over a padded batch; train mode iff sample_seeds given."""
    xs, mask, lengths = _pad_batch(batch)
    n_batch, t_max, dim = xs.shape
    e_dim, z_dim, c_dim = config.encoder_dim, config.latent_dim, config.context_dim

    wz, wr, wh = params["enc_Wz"], params["enc_Wr"], params["enc_Wh"]
    # input-side projections for every step at once; state side stays in the loop
    xp_z = xs @ wz[:dim] + params["enc_bz"]
    xp_r = xs @ wr[:dim] + params["enc_br"]
    xp_h = xs @ wh[:dim] + params["enc_bh"]

    states = np.zeros((n_batch, t_max + 1, e_dim))
    gate_u = np.zeros((n_batch, t_max, e_dim))
    gate_r = np.zeros((n_batch, t_max, e_dim))
    cand = np.zeros((n_batch, t_max, e_dim))
    for t in range(t_max):
        prev = states[:, t]
        u = _sigmoid(xp_z[:, t] + prev @ wz[dim:])
        r = _sigmoid(xp_r[:, t] + prev @ wr[dim:])
        c = np.tanh(xp_h[:, t] + (r * prev) @ wh[dim:])
        step = (1.0 - u) * prev + u * c
        m_t = mask[:, t][:, None]
        states[:, t + 1] = m_t * step + (1.0 - m_t) * prev
        gate_u[:, t], gate_r[:, t], cand[:, t] = u, r, c
    h_tilde = states[:, 1:]

    mu = h_tilde @ params["post_Wmu"] + params["post_bmu"]
    logvar_raw = h_tilde @ params["post_Wlv"] + params["post_blv"]
    logvar = np.clip(logvar_raw, config.logvar_low, config.logvar_high)

    mu_p = np.empty_like(mu)
    logvar_p_raw = np.empty_like(mu)
    mu_p[:, 0] = params["prior_mu0"]
    logvar_p_raw[:, 0] = params["prior_lv0"]
    if t_max > 1:
        prev_h = h_tilde[:, :-1]
        mu_p[:, 1:] = prev_h @ params["prior_Wmu"] + params["prior_bmu"]
        logvar_p_raw[:, 1:] = prev_h @ params["prior_Wlv"] + params["prior_blv"]
    logvar_p = np.clip(logvar_p_raw, config.logvar_low, config.logvar_high)

    if sample_seeds is not None:
        eta = np.zeros((n_batch, t_max, z_dim))
        for i, (feat, s) in enumerate(zip(batch, sample_seeds)):
            eta[i, : feat.length] = reparam_noise(s, feat.length, z_dim)
        z = mu + np.exp(0.5 * logvar) * eta
    else:
        eta = None
        z = mu.copy()

    b = z @ params["lat_W"] + params["lat_b"]
    ent_out = h_tilde @ params["ent_W"] + params["ent_b"]
    geo_out = h_tilde @ params["geo_W"] + params["geo_b"]
    s_ent, t_hat = ent_out[..., :c_dim], ent_out[..., c_dim]
    s_geo, g_hat = geo_out[..., :c_dim], geo_out[..., c_dim]

    pre = b + params["alpha_geo"] * s_geo + params["alpha_ent"] * s_ent
    center = pre - pre.mean(axis=-1, keepdims=True)
    sigma = np.sqrt((center**2).mean(axis=-1, keepdims=True))
    d = sigma + LN_EPS
    xhat = center / d
    m = params["ln_gamma"] * xhat + params["ln_beta"]

    cut_logits = np.empty((n_batch, t_max + 1))
    cut_logits[:, 0] = float(params["m0"] @ params["cut_w"] + params["cut_b"])
    cut_logits[:, 1:] = m @ params["cut_w"] + params["cut_b"]
    del_logits = m @ params["del_w"] + params["del_b"]
    del_probs = _sigmoid(del_logits)

    diff = mu - mu_p
    kl = 0.5 * np.sum(
        logvar_p - logvar + (np.exp(logvar) + diff**2) * np.exp(-logvar_p) - 1.0, axis=-1
    )

    return _BatchTape(
        xs=xs, mask=mask, lengths=lengths, states=states, gate_u=gate_u, gate_r=gate_r,
        cand=cand, mu=mu, logvar_raw=logvar_raw, logvar=logvar, mu_p=mu_p,
        logvar_p_raw=logvar_p_raw, logvar_p=logvar_p, eta=eta, z=z, b=b, s_ent=s_ent,
        t_hat=t_hat, s_geo=s_geo, g_hat=g_hat, pre=pre, ln_xhat=xhat, ln_d=d,
        ln_sigma=sigma, m=m, cut_logits=cut_logits, del_logits=del_logits,
        del_probs=del_probs, kl=kl,
    )


def _check_finite(tape: _BatchTape, batch: Sequence[TraceFeatures]) -> None:
    for name, arr in (
        ("encoder", tape.states), ("cut head", tape.cut_logits),
        ("deletion head", tape.del_probs), ("uncertainty head", tape.t_hat),
        ("progress head", tape.g_hat), ("latent KL", tape.kl),
    ):
        bad = ~np.isfinite(arr)
        if bad.any():
            idx = np.argwhere(bad)[0]
            trace = batch[int(idx[0])].trace_id
            step = int(idx[1]) if len(idx) > 1 else -1
            raise ModelError(f"non-finite value in {name} at trace {trace}, step {step}")


def _tape_to_output(tape: _BatchTape, i: int, length: int) -> ForwardOutput:
    sl = slice(0, length)
    m_full = np.concatenate([tape.m[i, :1] * 0, tape.m[i, sl]], axis=0)  # placeholder row 0
    return ForwardOutput(
        h_tilde=tape.states[i, 1 : length + 1].copy(),
        mu=tape.mu[i, sl].copy(),
        logvar=tape.logvar[i, sl].copy(),
        mu_p=tape.mu_p[i, sl].copy(),
        logvar_p=tape.logvar_p[i, sl].copy(),
        z=tape.z[i, sl].copy(),
        b=tape.b[i, sl].copy(),
        s_ent=tape.s_ent[i, sl].copy(),
        t_hat=tape.t_hat[i, sl].copy(),
        s_geo=tape.s_geo[i, sl].copy(),
        g_hat=tape.g_hat[i, sl].copy(),
        m=m_full,
        cut_logits=tape.cut_logits[i, : length + 1].copy(),
        del_probs=tape.del_probs[i, sl].copy(),
        kl=tape.kl[i, sl].copy(),
    )


def forward(
    params: dict[str, np.ndarray],
    features: TraceFeatures,
    config: HccConfig,
    sample_seed: Optional[int] = None,
) -> ForwardOutput:
    """Single-trace forward pass; inference mode when sample_seed is None."""
    seeds = None if sample_seed is None else [sample_seed]
    tape = _forward_batch(params, [features], config, seeds)
    _check_finite(tape, [features])
    out = _tape_to_output(tape, 0, features.length)
    out.m[0] = params["m0"]
    return out


def loss(out: ForwardOutput, features: TraceFeatures, config: HccConfig) -> LossBreakdown:
    """All loss components for one trace, composed with the config weights."""
    t_count = len(out.del_probs)
    boundary = features.boundary
    if boundary is None or not 0 <= boundary <= t_count:
        raise ModelError(f"boundary {boundary} outside [0, {t_count}]")
    logits = out.cut_logits
    lse = float(np.logaddexp.reduce(logits))
    l_cut = lse - float(logits[boundary])

    labels = np.asarray(features.delete_labels, dtype=np.float64)
    probs = np.clip(out.del_probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    l_del = float(-(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)).sum())

    l_kl = float(out.kl.sum())
    l_ent = float(_huber(out.t_hat - features.target_uncertainty, config.huber_delta).sum())
    l_geo = float(_huber(out.g_hat - features.target_geometry, config.huber_delta).sum())
    return LossBreakdown.compose(l_cut, l_del, l_kl, l_ent, l_geo, config)


def _huber(residual: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(residual)
    return np.where(a <= delta, 0.5 * residual**2, delta * (a - 0.5 * delta))


def _huber_grad(residual: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(residual, -delta, delta)


def _batch_targets(batch: Sequence[TraceFeatures], t_max: int):
    n = len(batch)
    t_tgt = np.zeros((n, t_max))
    g_tgt = np.zeros((n, t_max))
    labels = np.zeros((n, t_max))
    boundaries = np.zeros(n, dtype=np.int64)
    for i, f in enumerate(batch):
        if f.boundary is None or f.delete_labels is None:
            raise ModelError(f"trace {f.trace_id} lacks training targets")
        if not 0 <= f.boundary <= f.length:
            raise ModelError(f"trace {f.trace_id}: boundary {f.boundary} outside [0, {f.length}]")
        t_tgt[i, : f.length] = f.target_uncertainty
        g_tgt[i, : f.length] = f.target_geometry
        labels[i, : f.length] = f.delete_labels
        boundaries[i] = f.boundary
    return t_tgt, g_tgt, labels, boundaries


def _batch_loss_terms(tape: _BatchTape, batch, config: HccConfig):
    """Per-trace loss components (B,) plus softmax probabilities for reuse."""
    n_batch, t_max = tape.mask.shape
    t_tgt, g_tgt, labels, boundaries = _batch_targets(batch, t_max)

    pos_mask = np.concatenate([np.ones((n_batch, 1)), tape.mask], axis=1)
    neg_inf = np.where(pos_mask > 0, 0.0, -np.inf)
    shifted = tape.cut_logits + neg_inf
    peak = shifted.max(axis=1, keepdims=True)
    expv = np.exp(shifted - peak) * pos_mask
    norm = expv.sum(axis=1, keepdims=True)
    softmax = expv / norm
    lse = np.log(norm[:, 0]) + peak[:, 0]
    l_cut = lse - tape.cut_logits[np.arange(n_batch), boundaries]

    probs = np.clip(tape.del_probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs))
    l_del = (bce * tape.mask).sum(axis=1)

    l_kl = (tape.kl * tape.mask).sum(axis=1)
    l_ent = (_huber(tape.t_hat - t_tgt, config.huber_delta) * tape.mask).sum(axis=1)
    l_geo = (_huber(tape.g_hat - g_tgt, config.huber_delta) * tape.mask).sum(axis=1)
    return l_cut, l_del, l_kl, l_ent, l_geo, softmax, (t_tgt, g_tgt, labels, boundaries)


def batch_loss(
    params: dict[str, np.ndarray],
    batch: Sequence[TraceFeatures],
    config: HccConfig,
    sample_seeds: Optional[Sequence[int]] = None,
) -> LossBreakdown:
    """Mean-over-traces loss components (used for histories and FD checks)."""
    tape = _forward_batch(params, batch, config, sample_seeds)
    _check_finite(tape, batch)
    l_cut, l_del, l_kl, l_ent, l_geo, _, _ = _batch_loss_terms(tape, batch, config)
    return LossBreakdown.compose(
        float(l_cut.mean()), float(l_del.mean()), float(l_kl.mean()),
        float(l_ent.mean()), float(l_geo.mean()), config,
    )


def gradients(
    params: dict[str, np.ndarray],
    batch: Sequence[TraceFeatures],
    config: HccConfig,
    sample_seeds: Optional[Sequence[int]] = None,
) -> tuple[dict[str, np.ndarray], LossBreakdown]:
    """Exact gradients of the mean total loss over the batch.

    The pathwise derivative flows through z = mu + exp(lv/2) * eta with the
    noise fixed by the per-trace seeds, so finite differences on the same
    seeds reproduce these values.
    """
    tape = _forward_batch(params, batch, config, sample_seeds)
    _check_finite(tape, batch)
    l_cut, l_del, l_kl, l_ent, l_geo, softmax, targets = _batch_loss_terms(tape, batch, config)
    t_tgt, g_tgt, labels, boundaries = targets
    breakdown = LossBreakdown.compose(
        float(l_cut.mean()), float(l_del.mean()), float(l_kl.mean()),
        float(l_ent.mean()), float(l_geo.mean()), config,
    )

    n_batch, t_max = tape.mask.shape
    dim = tape.xs.shape[2]
    c_dim = config.context_dim
    scale = 1.0 / n_batch
    grads = {name: np.zeros_like(np.asarray(params[name], dtype=np.float64))
             for name, _ in param_spec(config)}

    # cut head: softmax cross-entropy over positions 0..T per trace
    d_logits = softmax.copy()
    d_logits[np.arange(n_batch), boundaries] -= 1.0
    d_logits *= scale

    # deletion head: BCE through the probability clamp
    probs = np.clip(tape.del_probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (tape.del_probs > PROB_CLAMP) & (tape.del_probs < 1.0 - PROB_CLAMP)
    d_bce = (-labels / probs + (1.0 - labels) / (1.0 - probs)) * inside
    d_del_logit = d_bce * tape.del_probs * (1.0 - tape.del_probs)
    d_del_logit *= tape.mask * (config.lambda_del * scale)

    # fused states m_t (t >= 1) collect both heads
    d_m = d_logits[:, 1:, None] * params["cut_w"] + d_del_logit[..., None] * params["del_w"]
    grads["cut_w"] += np.einsum("bt,btc->c", d_logits[:, 1:], tape.m)
    grads["cut_w"] += d_logits[:, 0].sum() * params["m0"]  # position 0 runs through m0
    grads["cut_b"] += d_logits.sum()
    grads["del_w"] += np.einsum("bt,btc->c", d_del_logit, tape.m)
    grads["del_b"] += d_del_logit.sum()
    grads["m0"] += d_logits[:, 0].sum() * params["cut_w"]

    # layer norm backward: m = gamma * xhat + beta, xhat = (pre - mean)/d
    grads["ln_gamma"] += np.einsum("btc,btc->c", d_m, tape.ln_xhat)
    grads["ln_beta"] += d_m.sum(axis=(0, 1))
    d_xhat = d_m * params["ln_gamma"]
    coef = (d_xhat * tape.ln_xhat).mean(axis=-1, keepdims=True)
    sigma_safe = np.maximum(tape.ln_sigma, 1e-30)
    d_center = d_xhat / tape.ln_d - tape.ln_xhat * coef / sigma_safe
    d_pre = d_center - d_center.mean(axis=-1, keepdims=True)

    # fusion: pre = b + alpha_geo*s_geo + alpha_ent*s_ent
    d_b = d_pre
    grads["alpha_geo"] += float((d_pre * tape.s_geo).sum())
    grads["alpha_ent"] += float((d_pre * tape.s_ent).sum())
    d_s_geo = d_pre * params["alpha_geo"]
    d_s_ent = d_pre * params["alpha_ent"]

    # regression heads (Huber) + their context vectors
    d_t_hat = _huber_grad(tape.t_hat - t_tgt, config.huber_delta) * tape.mask
    d_t_hat *= config.lambda_ent * scale
    d_g_hat = _huber_grad(tape.g_hat - g_tgt, config.huber_delta) * tape.mask
    d_g_hat *= config.lambda_geo * scale
    d_ent_out = np.concatenate([d_s_ent, d_t_hat[..., None]], axis=-1)
    d_geo_out = np.concatenate([d_s_geo, d_g_hat[..., None]], axis=-1)

    # latent projection
    d_z = d_b @ params["lat_W"].T
    grads["lat_W"] += np.einsum("btz,btc->zc", tape.z, d_b)
    grads["lat_b"] += d_b.sum(axis=(0, 1))

    # KL (mask applied) + reparameterization pathwise term
    kw = config.lambda_kl * scale
    diff = tape.mu - tape.mu_p
    inv_var_p = np.exp(-tape.logvar_p)
    mask3 = tape.mask[..., None]
    d_mu = kw * diff * inv_var_p * mask3
    d_logvar = kw * 0.5 * (np.exp(tape.logvar - tape.logvar_p) - 1.0) * mask3
    d_mu_p = -kw * diff * inv_var_p * mask3
    d_logvar_p = kw * 0.5 * (1.0 - (np.exp(tape.logvar) + diff**2) * inv_var_p) * mask3
    d_mu = d_mu + d_z
    if tape.eta is not None:
        d_logvar = d_logvar + d_z * tape.eta * np.exp(0.5 * tape.logvar) * 0.5

    d_logvar_raw = d_logvar * (
        (tape.logvar_raw > config.logvar_low) & (tape.logvar_raw < config.logvar_high)
    )
    d_logvar_p_raw = d_logvar_p * (
        (tape.logvar_p_raw > config.logvar_low) & (tape.logvar_p_raw < config.logvar_high)
    )

    # posterior and prior heads -> gradients w.r.t. h_tilde
    h_tilde = tape.states[:, 1:]
    d_h = d_ent_out @ params["ent_W"].T + d_geo_out @ params["geo_W"].T
    grads["ent_W"] += np.einsum("bte,btk->ek", h_tilde, d_ent_out)
    grads["ent_b"] += d_ent_out.sum(axis=(0, 1))
    grads["geo_W"] += np.einsum("bte,btk->ek", h_tilde, d_geo_out)
    grads["geo_b"] += d_geo_out.sum(axis=(0, 1))

    d_h += d_mu @ params["post_Wmu"].T + d_logvar_raw @ params["post_Wlv"].T
    grads["post_Wmu"] += np.einsum("bte,btz->ez", h_tilde, d_mu)
    grads["post_bmu"] += d_mu.sum(axis=(0, 1))
    grads["post_Wlv"] += np.einsum("bte,btz->ez", h_tilde, d_logvar_raw)
    grads["post_blv"] += d_logvar_raw.sum(axis=(0, 1))

    grads["prior_mu0"] += d_mu_p[:, 0].sum(axis=0)
    grads["prior_lv0"] += d_logvar_p_raw[:, 0].sum(axis=0)
    if t_max > 1:
        d_mu_p_rest = d_mu_p[:, 1:]
        d_lv_p_rest = d_logvar_p_raw[:, 1:]
        prev_h = h_tilde[:, :-1]
        grads["prior_Wmu"] += np.einsum("bte,btz->ez", prev_h, d_mu_p_rest)
        grads["prior_bmu"] += d_mu_p_rest.sum(axis=(0, 1))
        grads["prior_Wlv"] += np.einsum("bte,btz->ez", prev_h, d_lv_p_rest)
        grads["prior_blv"] += d_lv_p_rest.sum(axis=(0, 1))
        d_h[:, :-1] += d_mu_p_rest @ params["prior_Wmu"].T + d_lv_p_rest @ params["prior_Wlv"].T

    # gated recurrence BPTT
    wz, wr, wh = params["enc_Wz"], params["enc_Wr"], params["enc_Wh"]
    d_u_pre = np.zeros_like(tape.gate_u)
    d_r_pre = np.zeros_like(tape.gate_u)
    d_c_pre = np.zeros_like(tape.gate_u)
    d_state = np.zeros((n_batch, config.encoder_dim))
    for t in range(t_max - 1, -1, -1):
        d_s = d_state + d_h[:, t]
        m_t = tape.mask[:, t][:, None]
        prev = tape.states[:, t]
        u, r, c = tape.gate_u[:, t], tape.gate_r[:, t], tape.cand[:, t]
        d_u = d_s * (c - prev) * m_t
        d_c = d_s * u * m_t
        d_prev = d_s * ((1.0 - u) * m_t + (1.0 - m_t))
        dc_pre = d_c * (1.0 - c**2)
        d_rs = dc_pre @ wh[dim:].T
        d_r = d_rs * prev
        d_prev += d_rs * r
        du_pre = d_u * u * (1.0 - u)
        dr_pre = d_r * r * (1.0 - r)
        d_prev += du_pre @ wz[dim:].T + dr_pre @ wr[dim:].T
        d_u_pre[:, t], d_r_pre[:, t], d_c_pre[:, t] = du_pre, dr_pre, dc_pre
        d_state = d_prev

    xs_flat = tape.xs.reshape(-1, dim)
    prev_flat = tape.states[:, :-1].reshape(-1, config.encoder_dim)
    rs_flat = (tape.gate_r * tape.states[:, :-1]).reshape(-1, config.encoder_dim)
    for name, d_pre_gate, state_part in (
        ("enc_Wz", d_u_pre, prev_flat),
        ("enc_Wr", d_r_pre, prev_flat),
        ("enc_Wh", d_c_pre, rs_flat),
    ):
        flat = d_pre_gate.reshape(-1, config.encoder_dim)
        grads[name][:dim] += xs_flat.T @ flat
        grads[name][dim:] += state_part.T @ flat
        grads[name.replace("W", "b")] += flat.sum(axis=0)

    for name in grads:
        if np.asarray(params[name]).ndim == 0:
            grads[name] = np.float64(grads[name])
    return grads, breakdown


def predict(
    params: dict[str, np.ndarray], features: TraceFeatures, config: HccConfig
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """Inference: (c_hat, delete probabilities, T estimates, G estimates).

    Ties on the cut logits break toward the smallest index (earliest cut).
    """
    out = forward(params, features, config, sample_seed=None)
    c_hat = int(np.argmax(out.cut_logits))
    return c_hat, out.del_probs, out.t_hat, out.g_hat
