"""Sequence classifiers: gated recurrent (LSTM), dilated-causal
convolutional (TCN), and a reduced variable-selection transformer (TFT-lite),
plus the temporal attention head they share.

Every forward works on a single sequence [T, F] and, transparently, on a
batch [B, T, F]; batching only changes the leading axes of the tensors.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import NormalizationStats, encoded_width
from .errors import ContractError, DimensionError, SchemaError, UnsupportedArchError

ARCHS = ("lstm", "tcn", "tft")
N_CLASSES = 3


@dataclass
class LstmParams:
    """Gate weights [hidden x (hidden+input)] and biases [hidden]."""

    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_C: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_C: Tensor
    hidden_size: int
    input_size: int

    def named(self, prefix=""):
        return [
            (prefix + name, getattr(self, name))
            for name in ("W_i", "W_f", "W_o", "W_C", "b_i", "b_f", "b_o", "b_C")
        ]


@dataclass
class AttentionParams:
    """Linear alignment scorer over hidden states: e_t = v . h_t + bias."""

    weights: Tensor  # [hidden]
    bias: Tensor  # scalar

    def named(self, prefix=""):
        return [(prefix + "weights", self.weights), (prefix + "bias", self.bias)]


@dataclass
class TcnBlockParams:
    kernel: Tensor  # [k, C_in, C_out]
    bias: Tensor  # [C_out]
    dilation: int
    proj_kernel: Optional[Tensor] = None  # [1, C_in, C_out] when channels differ
    proj_bias: Optional[Tensor] = None

    def named(self, prefix=""):
        out = [(prefix + "kernel", self.kernel), (prefix + "bias", self.bias)]
        if self.proj_kernel is not None:
            out += [(prefix + "proj_kernel", self.proj_kernel), (prefix + "proj_bias", self.proj_bias)]
        return out


@dataclass
class TcnParams:
    blocks: list

    def __post_init__(self):
        dilations = [b.dilation for b in self.blocks]
        if dilations != [2**i for i in range(len(dilations))]:
            raise ContractError(f"dilations must be 1, 2, 4, ... got {dilations}")

    @property
    def receptive_field(self):
        return 1 + sum((b.kernel.shape[0] - 1) * b.dilation for b in self.blocks)

    def named(self, prefix=""):
        out = []
        for i, b in enumerate(self.blocks):
            out += b.named(f"{prefix}block{i}.")
        return out


@dataclass
class TftLiteParams:
    """Per-feature selection scoring + projection, LSTM encoder, attention."""

    select_score_w: Tensor  # [F]
    select_score_b: Tensor  # [F]
    select_w: Tensor  # [F] per-feature projection weight
    select_b: Tensor  # [F]
    encoder: LstmParams
    attention: AttentionParams

    def named(self, prefix=""):
        out = [
            (prefix + "select_score_w", self.select_score_w),
            (prefix + "select_score_b", self.select_score_b),
            (prefix + "select_w", self.select_w),
            (prefix + "select_b", self.select_b),
        ]
        out += self.encoder.named(prefix + "encoder.")
        out += self.attention.named(prefix + "attention.")
        return out


@dataclass
class Head:
    weights: Tensor  # [n_classes, feature_dim]
    bias: Tensor  # [n_classes]

    def named(self, prefix="head."):
        return [(prefix + "weights", self.weights), (prefix + "bias", self.bias)]


@dataclass
class ModelCheckpoint:
    arch: str
    hyper: dict
    params: object  # LstmParams/TcnParams/TftLiteParams
    attention: Optional[AttentionParams]  # lstm arch only; tft carries its own
    head: Head
    normalization_stats: NormalizationStats
    schema_version: int = 1
    seed: int = 0

    def named_parameters(self):
        out = self.params.named(f"{self.arch}.")
        if self.attention is not None:
            out += self.attention.named("attention.")
        out += self.head.named()
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    @property
    def input_width(self):
        return encoded_width(self.normalization_stats)


DEFAULT_HYPER = {
    "hidden_size": 32,
    "tcn_channels": 16,
    "tcn_blocks": 3,
    "tcn_kernel": 3,
    "n_classes": N_CLASSES,
}


# ---------------------------------------------------------------------------
# initialization


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def init_lstm_params(rng, input_size, hidden_size):
    width = hidden_size + input_size
    params = LstmParams(
        W_i=_uniform(rng, (hidden_size, width), width),
        W_f=_uniform(rng, (hidden_size, width), width),
        W_o=_uniform(rng, (hidden_size, width), width),
        W_C=_uniform(rng, (hidden_size, width), width),
        b_i=_zeros(hidden_size),
        b_f=Tensor(np.ones(hidden_size), requires_grad=True),  # open forget gate
        b_o=_zeros(hidden_size),
        b_C=_zeros(hidden_size),
        hidden_size=hidden_size,
        input_size=input_size,
    )
    return params


def init_attention_params(rng, hidden_size):
    return AttentionParams(weights=_uniform(rng, (hidden_size,), hidden_size), bias=_zeros(()))


def init_tcn_params(rng, input_channels, channels, n_blocks, kernel_width):
    blocks = []
    c_in = input_channels
    for level in range(n_blocks):
        dilation = 2**level
        proj_kernel = proj_bias = None
        if c_in != channels:
            proj_kernel = _uniform(rng, (1, c_in, channels), c_in)
            proj_bias = _zeros(channels)
        blocks.append(
            TcnBlockParams(
                kernel=_uniform(rng, (kernel_width, c_in, channels), kernel_width * c_in),
                bias=_zeros(channels),
                dilation=dilation,
                proj_kernel=proj_kernel,
                proj_bias=proj_bias,
            )
        )
        c_in = channels
    return TcnParams(blocks=blocks)


def init_tft_params(rng, n_features, hidden_size):
    return TftLiteParams(
        select_score_w=_uniform(rng, (n_features,), 1),
        select_score_b=_zeros(n_features),
        select_w=_uniform(rng, (n_features,), 1),
        select_b=_zeros(n_features),
        encoder=init_lstm_params(rng, n_features, hidden_size),
        attention=init_attention_params(rng, hidden_size),
    )


def init_checkpoint(arch, stats, seed=0, hyper=None):
    """Fresh randomly initialized checkpoint for the given architecture."""
    if arch not in ARCHS:
        raise UnsupportedArchError(f"unknown arch {arch!r}; expected one of {ARCHS}")
    hp = dict(DEFAULT_HYPER)
    hp.update(hyper or {})
    rng = np.random.default_rng(seed)
    width = encoded_width(stats)
    attention = None
    if arch == "lstm":
        params = init_lstm_params(rng, width, hp["hidden_size"])
        attention = init_attention_params(rng, hp["hidden_size"])
        feature_dim = hp["hidden_size"]
    elif arch == "tcn":
        params = init_tcn_params(rng, width, hp["tcn_channels"], hp["tcn_blocks"], hp["tcn_kernel"])
        feature_dim = hp["tcn_channels"]
    else:
        params = init_tft_params(rng, width, hp["hidden_size"])
        feature_dim = hp["hidden_size"]
    head = Head(
        weights=_uniform(rng, (hp["n_classes"], feature_dim), feature_dim),
        bias=_zeros(hp["n_classes"]),
    )
    return ModelCheckpoint(
        arch=arch,
        hyper=hp,
        params=params,
        attention=attention,
        head=head,
        normalization_stats=stats,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# forward passes


def _time_slice(seq, t):
    if seq.ndim == 2:
        return seq[t]
    return seq[:, t, :]


def lstm_cell_step(params, x_t, h_prev, c_prev):
    """One gated recurrence step; returns (h_t, c_t).

    i, f, o = sigmoid(W . [h_prev, x_t] + b); the cell state mixes the
    previous state through f with the candidate tanh update through i.
    """
    x_t, h_prev, c_prev = ad.as_tensor(x_t), ad.as_tensor(h_prev), ad.as_tensor(c_prev)
    if x_t.shape[-1] != params.input_size or h_prev.shape[-1] != params.hidden_size:
        raise DimensionError(
            f"lstm_cell_step: x_t {tuple(x_t.shape)} / h_prev {tuple(h_prev.shape)} "
            f"do not match input={params.input_size}, hidden={params.hidden_size}"
        )
    z = ad.concat([h_prev, x_t], axis=-1)
    wt = ad.transpose
    i = ad.sigmoid(ad.matmul(z, wt(params.W_i)) + params.b_i)
    f = ad.sigmoid(ad.matmul(z, wt(params.W_f)) + params.b_f)
    o = ad.sigmoid(ad.matmul(z, wt(params.W_o)) + params.b_o)
    c_hat = ad.tanh(ad.matmul(z, wt(params.W_C)) + params.b_C)
    c_t = f * c_prev + i * c_hat
    h_t = o * ad.tanh(c_t)
    return h_t, c_t


def lstm_forward(params, seq):
    """Fold the cell step over time from zero initial state -> [T, hidden]."""
    seq = ad.as_tensor(seq)
    if seq.shape[-2] < 1:
        raise ContractError("lstm_forward requires at least one timestep")
    batch_shape = seq.shape[:-2]
    h = Tensor(np.zeros(batch_shape + (params.hidden_size,)))
    c = Tensor(np.zeros(batch_shape + (params.hidden_size,)))
    states = []
    for t in range(seq.shape[-2]):
        h, c = lstm_cell_step(params, _time_slice(seq, t), h, c)
        states.append(h)
    return ad.stack(states, axis=-2)


def tcn_forward(params, seq):
    """Stacked causal blocks: dilated conv -> ReLU -> residual add."""
    x = ad.as_tensor(seq)
    if x.shape[-2] < 1:
        raise ContractError("tcn_forward requires at least one timestep")
    for block in params.blocks:
        y = ad.relu(ad.conv1d_dilated(x, block.kernel, block.dilation, block.bias))
        if block.proj_kernel is not None:
            x = ad.conv1d_dilated(x, block.proj_kernel, 1, block.proj_bias)
        x = y + x
    return x


def attention_forward(params, hidden_states):
    """Softmax-weighted summary of hidden states -> (context, scores)."""
    hs = ad.as_tensor(hidden_states)
    if hs.shape[-2] < 1:
        raise ContractError("attention_forward requires at least one timestep")
    e = ad.matmul(hs, params.weights) + params.bias  # [..., T]
    scores = ad.softmax(e, axis=-1)
    expanded = ad.reshape(scores, scores.shape + (1,))
    context = ad.tensor_sum(expanded * hs, axis=-2)
    return context, scores


def tft_variable_select(params, x_t):
    """Per-feature gating: softmax selection weights times projected values."""
    x_t = ad.as_tensor(x_t)
    n_features = params.select_w.shape[0]
    if x_t.shape[-1] != n_features:
        raise DimensionError(
            f"tft_variable_select: got {x_t.shape[-1]} features, expected {n_features}"
        )
    scores = params.select_score_w * x_t + params.select_score_b
    weights = ad.softmax(scores, axis=-1)
    projected = params.select_w * x_t + params.select_b
    selected = weights * projected
    return selected, weights


def tft_forward(params, seq):
    """Variable selection per step, LSTM encoding, attention summary."""
    seq = ad.as_tensor(seq)
    selected_steps = []
    weight_steps = []
    for t in range(seq.shape[-2]):
        v_t, w_t = tft_variable_select(params, _time_slice(seq, t))
        selected_steps.append(v_t)
        weight_steps.append(w_t)
    selected = ad.stack(selected_steps, axis=-2)
    weights = ad.stack(weight_steps, axis=-2)
    hidden = lstm_forward(params.encoder, selected)
    context, scores = attention_forward(params.attention, hidden)
    return context, scores, hidden, weights


def _apply_head(head, features):
    if features.ndim == 1:
        return ad.matmul(head.weights, features) + head.bias
    return ad.matmul(features, ad.transpose(head.weights)) + head.bias


def classifier_logits(checkpoint, seq):
    """Logits plus per-architecture internals for one sequence or a batch."""
    seq = ad.as_tensor(seq)
    expected = checkpoint.input_width
    if seq.shape[-1] != expected:
        raise SchemaError(
            f"sequence has {seq.shape[-1]} encoded features, checkpoint expects {expected}"
        )
    internals = {}
    if checkpoint.arch == "lstm":
        hidden = lstm_forward(checkpoint.params, seq)
        context, scores = attention_forward(checkpoint.attention, hidden)
        internals["hidden_states"] = hidden
        internals["attention_scores"] = scores
        features = context
    elif checkpoint.arch == "tcn":
        hidden = tcn_forward(checkpoint.params, seq)
        internals["hidden_states"] = hidden
        features = _time_slice(hidden, seq.shape[-2] - 1)  # causal summary
    elif checkpoint.arch == "tft":
        context, scores, hidden, weights = tft_forward(checkpoint.params, seq)
        internals["hidden_states"] = hidden
        internals["attention_scores"] = scores
        internals["selection_weights"] = weights
        features = context
    else:
        raise UnsupportedArchError(f"unknown arch {checkpoint.arch!r}")
    return _apply_head(checkpoint.head, features), internals


def classifier_predict(checkpoint, seq):
    """Class probabilities and internals for one encoded sequence [T, F]."""
    logits, internals = classifier_logits(checkpoint, seq)
    return ad.softmax(logits, axis=-1), internals


def _alias_tensor(t):
    # np.asarray on a float64 array is a no-copy passthrough: the alias
    # shares the weight buffer but owns a private gradient slot
    return None if t is None else Tensor(t.data, requires_grad=True)


def _alias_lstm(p):
    return LstmParams(
        W_i=_alias_tensor(p.W_i), W_f=_alias_tensor(p.W_f),
        W_o=_alias_tensor(p.W_o), W_C=_alias_tensor(p.W_C),
        b_i=_alias_tensor(p.b_i), b_f=_alias_tensor(p.b_f),
        b_o=_alias_tensor(p.b_o), b_C=_alias_tensor(p.b_C),
        hidden_size=p.hidden_size, input_size=p.input_size,
    )


def _alias_attention(p):
    return AttentionParams(weights=_alias_tensor(p.weights), bias=_alias_tensor(p.bias))


def _alias_params(arch, params):
    if arch == "lstm":
        return _alias_lstm(params)
    if arch == "tcn":
        return TcnParams(blocks=[
            TcnBlockParams(
                kernel=_alias_tensor(b.kernel), bias=_alias_tensor(b.bias),
                dilation=b.dilation,
                proj_kernel=_alias_tensor(b.proj_kernel), proj_bias=_alias_tensor(b.proj_bias),
            )
            for b in params.blocks
        ])
    return TftLiteParams(
        select_score_w=_alias_tensor(params.select_score_w),
        select_score_b=_alias_tensor(params.select_score_b),
        select_w=_alias_tensor(params.select_w),
        select_b=_alias_tensor(params.select_b),
        encoder=_alias_lstm(params.encoder),
        attention=_alias_attention(params.attention),
    )


def alias_checkpoint(ckpt):
    """A checkpoint view sharing every weight array with the original but
    owning private gradient slots; used for sharded gradient evaluation
    where each shard's graph must be confined to one thread."""
    return ModelCheckpoint(
        arch=ckpt.arch,
        hyper=ckpt.hyper,
        params=_alias_params(ckpt.arch, ckpt.params),
        attention=None if ckpt.attention is None else _alias_attention(ckpt.attention),
        head=Head(weights=_alias_tensor(ckpt.head.weights), bias=_alias_tensor(ckpt.head.bias)),
        normalization_stats=ckpt.normalization_stats,
        schema_version=ckpt.schema_version,
        seed=ckpt.seed,
    )


@contextmanager
def frozen_parameters(checkpoint):
    """Temporarily drop the parameters off the autodiff tape (inference paths)."""
    params = checkpoint.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def predict_proba(checkpoint, batch):
    """No-grad batched probabilities for encoded sequences [B, T, F]."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise DimensionError(f"expected [B, T, F], got shape {batch.shape}")
    with frozen_parameters(checkpoint):
        logits, _ = classifier_logits(checkpoint, Tensor(batch))
        return ad.softmax(logits, axis=-1).data
