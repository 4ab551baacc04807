"""Checkpoint file format: one self-describing JSON document.

Layout (all weight arrays as nested lists of binary64 values, written with
shortest round-trip reprs so save -> load -> save is byte-identical):

    format: "sleeplens-checkpoint"
    schema_version, arch, seed, hyperparameters
    normalization: fitted NormalizationStats
    params: architecture-specific weights (see _params_to_doc)
    attention: alignment head (lstm arch only; tft embeds its own)
    head: classifier weights [n_classes x feature_dim] + bias
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor
from .data import NormalizationStats
from .docio import canonical_dumps, load
from .errors import SchemaError
from .models import (
    AttentionParams,
    Head,
    LstmParams,
    ModelCheckpoint,
    TcnBlockParams,
    TcnParams,
    TftLiteParams,
)

FORMAT_NAME = "sleeplens-checkpoint"
SCHEMA_VERSION = 1


def _arr(t):
    return t.data.tolist()


def _param(doc_value):
    return Tensor(np.asarray(doc_value, dtype=np.float64), requires_grad=True)


def _lstm_to_doc(p):
    return {
        "W_i": _arr(p.W_i),
        "W_f": _arr(p.W_f),
        "W_o": _arr(p.W_o),
        "W_C": _arr(p.W_C),
        "b_i": _arr(p.b_i),
        "b_f": _arr(p.b_f),
        "b_o": _arr(p.b_o),
        "b_C": _arr(p.b_C),
        "hidden_size": p.hidden_size,
        "input_size": p.input_size,
    }


def _lstm_from_doc(doc):
    return LstmParams(
        W_i=_param(doc["W_i"]),
        W_f=_param(doc["W_f"]),
        W_o=_param(doc["W_o"]),
        W_C=_param(doc["W_C"]),
        b_i=_param(doc["b_i"]),
        b_f=_param(doc["b_f"]),
        b_o=_param(doc["b_o"]),
        b_C=_param(doc["b_C"]),
        hidden_size=int(doc["hidden_size"]),
        input_size=int(doc["input_size"]),
    )


def _attention_to_doc(p):
    return {"weights": _arr(p.weights), "bias": float(p.bias.data)}


def _attention_from_doc(doc):
    return AttentionParams(weights=_param(doc["weights"]), bias=_param(doc["bias"]))


def _params_to_doc(arch, params):
    if arch == "lstm":
        return _lstm_to_doc(params)
    if arch == "tcn":
        return {
            "blocks": [
                {
                    "kernel": _arr(b.kernel),
                    "bias": _arr(b.bias),
                    "dilation": b.dilation,
                    "proj_kernel": None if b.proj_kernel is None else _arr(b.proj_kernel),
                    "proj_bias": None if b.proj_bias is None else _arr(b.proj_bias),
                }
                for b in params.blocks
            ]
        }
    return {
        "select_score_w": _arr(params.select_score_w),
        "select_score_b": _arr(params.select_score_b),
        "select_w": _arr(params.select_w),
        "select_b": _arr(params.select_b),
        "encoder": _lstm_to_doc(params.encoder),
        "attention": _attention_to_doc(params.attention),
    }


def _params_from_doc(arch, doc):
    if arch == "lstm":
        return _lstm_from_doc(doc)
    if arch == "tcn":
        return TcnParams(
            blocks=[
                TcnBlockParams(
                    kernel=_param(b["kernel"]),
                    bias=_param(b["bias"]),
                    dilation=int(b["dilation"]),
                    proj_kernel=None if b["proj_kernel"] is None else _param(b["proj_kernel"]),
                    proj_bias=None if b["proj_bias"] is None else _param(b["proj_bias"]),
                )
                for b in doc["blocks"]
            ]
        )
    return TftLiteParams(
        select_score_w=_param(doc["select_score_w"]),
        select_score_b=_param(doc["select_score_b"]),
        select_w=_param(doc["select_w"]),
        select_b=_param(doc["select_b"]),
        encoder=_lstm_from_doc(doc["encoder"]),
        attention=_attention_from_doc(doc["attention"]),
    )


def checkpoint_to_doc(ckpt):
    return {
        "format": FORMAT_NAME,
        "schema_version": ckpt.schema_version,
        "arch": ckpt.arch,
        "seed": ckpt.seed,
        "hyperparameters": dict(ckpt.hyper),
        "normalization": ckpt.normalization_stats.to_doc(),
        "params": _params_to_doc(ckpt.arch, ckpt.params),
        "attention": None if ckpt.attention is None else _attention_to_doc(ckpt.attention),
        "head": {"weights": _arr(ckpt.head.weights), "bias": _arr(ckpt.head.bias)},
    }


def checkpoint_from_doc(doc):
    if doc.get("format") != FORMAT_NAME:
        raise SchemaError(f"not a {FORMAT_NAME} document (format={doc.get('format')!r})")
    arch = doc["arch"]
    return ModelCheckpoint(
        arch=arch,
        hyper=dict(doc["hyperparameters"]),
        params=_params_from_doc(arch, doc["params"]),
        attention=None if doc["attention"] is None else _attention_from_doc(doc["attention"]),
        head=Head(weights=_param(doc["head"]["weights"]), bias=_param(doc["head"]["bias"])),
        normalization_stats=NormalizationStats.from_doc(doc["normalization"]),
        schema_version=int(doc["schema_version"]),
        seed=int(doc["seed"]),
    )


def checkpoint_dumps(ckpt):
    return canonical_dumps(checkpoint_to_doc(ckpt))


def save_checkpoint(ckpt, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(checkpoint_dumps(ckpt))


def load_checkpoint(path):
    return checkpoint_from_doc(load(path))


def checkpoint_hash(ckpt):
    """Stable content hash; lets clients detect model swaps."""
    return hashlib.sha256(checkpoint_dumps(ckpt).encode("utf-8")).hexdigest()
