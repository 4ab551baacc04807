"""Optimization loop, augmentation, evaluation, and dataset splitting.

Variable-length data is handled without padding: batches group sequences of
equal length. Single-threaded execution is bit-reproducible for a fixed
seed, which is the mode the acceptance tests run in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from concurrent.futures import ThreadPoolExecutor

from . import autodiff as ad
from . import data as dio
from .autodiff import Tensor
from .errors import ContractError, SchemaError, TrainingDivergedError
from .models import (
    ModelCheckpoint,
    alias_checkpoint,
    classifier_logits,
    init_checkpoint,
    predict_proba,
)

N_CLASSES = len(dio.LABELS)


@dataclass
class AugmentSpec:
    """jitter_sigma is in post-normalization (z-score) units; oversample is
    None, a positive factor, or "balance" (duplicate minorities up to the
    majority count)."""

    jitter_sigma: float = 0.0
    oversample: object = None

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ContractError("jitter sigma must be >= 0")
        if self.oversample is not None and self.oversample != "balance" and self.oversample < 1:
            raise ContractError("oversample factor must be >= 1 or 'balance'")


# the selection-gated architecture needs a hotter Adam to converge at
# desk scale; the others diverge from it
DEFAULT_LEARNING_RATES = {"lstm": 1e-3, "tcn": 1e-3, "tft": 3e-3}


@dataclass
class TrainConfig:
    arch: str = "lstm"
    epochs: int = 500
    batch_size: int = 32
    learning_rate: Optional[float] = None  # None -> per-arch default
    optimizer: str = "adam"  # "sgd" | "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 20
    seed: int = 0
    augmentation: AugmentSpec = field(default_factory=lambda: AugmentSpec(0.05, None))
    val_fraction: float = 0.1
    hyper: dict = field(default_factory=dict)
    parallel: int = 1  # > 1 shards gradient evaluation across threads

    def __post_init__(self):
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LEARNING_RATES.get(self.arch, 1e-3)
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.parallel < 1:
            raise ContractError("parallel must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Metrics:
    accuracy: float
    mean_loss: float
    confusion: np.ndarray  # [true, predicted]

    def to_doc(self):
        return {
            "accuracy": self.accuracy,
            "mean_loss": self.mean_loss,
            "confusion": self.confusion.tolist(),
        }


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    stats: Optional[dio.NormalizationStats] = None


# ---------------------------------------------------------------------------
# splitting


def _stratified_pick(by_label, counts_wanted, rng_order):
    picked = []
    for label in sorted(by_label):
        take = counts_wanted[label]
        picked.extend(by_label[label][:take])
        by_label[label] = by_label[label][take:]
    return picked


def _proportional_counts(by_label, n):
    total = sum(len(v) for v in by_label.values())
    labels = sorted(by_label)
    if n <= 0 or total == 0:
        return {l: 0 for l in labels}
    exact = {l: n * len(by_label[l]) / total for l in labels}
    counts = {l: min(int(exact[l]), len(by_label[l])) for l in labels}
    remainders = sorted(labels, key=lambda l: (-(exact[l] - counts[l]), l))
    i = 0
    while sum(counts.values()) < n:
        l = remainders[i % len(remainders)]
        if counts[l] < len(by_label[l]):
            counts[l] += 1
        i += 1
        if i > 10 * len(labels) + n:  # all classes exhausted
            break
    return counts


def split_dataset(data, train_n, test_n, seed=0):
    """Disjoint stratified train/test partitions, deterministic given seed."""
    if train_n + test_n > len(data):
        raise ContractError(
            f"cannot draw train={train_n} + test={test_n} from {len(data)} records"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    by_label = {}
    for idx in order:
        seq = data[int(idx)]
        by_label.setdefault(seq.label, []).append(seq)
    train = _stratified_pick(by_label, _proportional_counts(by_label, train_n), rng)
    test = _stratified_pick(by_label, _proportional_counts(by_label, test_n), rng)
    return DatasetSplit(train=train, validation=[], test=test)


def prepare_split(data, train_n, test_n, seed=0):
    """Split raw sequences, fit preprocessing on train only, apply to test."""
    split = split_dataset(data, train_n, test_n, seed=seed)
    split.train, split.stats = dio.preprocess(split.train)
    if split.test:
        split.test, _ = dio.preprocess(split.test, split.stats)
    return split


# ---------------------------------------------------------------------------
# augmentation

_JITTER_FEATURES = [
    s.name
    for s in dio.MODEL_FEATURES
    if s.kind == "continuous" and s.name != "physical_activity"
]


def augment(train, spec, seed=0, stats=None):
    """Expand a training set; labels, categorical codes, and lengths never change.

    Jitter perturbs continuous features only (per sequence for heart rate,
    which is a subject average; per timestep otherwise), clamped to the
    schema domains. Oversampling duplicates minority-class sequences.
    """
    rng = np.random.default_rng(seed)
    out = list(train)

    if spec.oversample is not None:
        by_label = {}
        for seq in train:
            by_label.setdefault(seq.label, []).append(seq)
        majority = max(len(v) for v in by_label.values())
        for label in sorted(by_label):
            seqs = by_label[label]
            if spec.oversample == "balance":
                target = majority
            else:
                target = int(round(len(seqs) * spec.oversample))
            extra = target - len(seqs)
            for i in range(max(0, extra)):
                out.append(seqs[i % len(seqs)].copy())

    if spec.jitter_sigma > 0:
        jittered = []
        for seq in out:
            seq = seq.copy()
            for name in _JITTER_FEATURES:
                feature = dio.SCHEMA_BY_NAME[name]
                lo, hi = feature.domain
                scale = stats.continuous[name]["scale"] if stats is not None else 1.0
                if name == "heart_rate":
                    noise = rng.normal(0.0, spec.jitter_sigma) * scale
                    for fv in seq.timesteps:
                        if fv.heart_rate is not None:
                            fv.heart_rate = float(np.clip(fv.heart_rate + noise, lo, hi))
                    continue
                for fv in seq.timesteps:
                    value = fv.get(name)
                    if value is None:
                        continue
                    noise = rng.normal(0.0, spec.jitter_sigma) * scale
                    fv.set(name, float(np.clip(value + noise, lo, hi)))
            jittered.append(seq)
        out = jittered
    return out


# ---------------------------------------------------------------------------
# optimizers


class _Sgd:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class _Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(cfg, params):
    if cfg.optimizer == "sgd":
        return _Sgd(params, cfg.learning_rate)
    return _Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


# ---------------------------------------------------------------------------
# evaluation


def _group_by_length(sequences, stats):
    groups = {}
    for seq in sequences:
        groups.setdefault(len(seq.timesteps), []).append(seq)
    out = []
    for t_len in sorted(groups):
        seqs = groups[t_len]
        out.append((np.stack([dio.encode_array(s, stats) for s in seqs]),
                    np.array([dio.label_index(s.label) for s in seqs], dtype=np.int64)))
    return out


def evaluate(checkpoint, data):
    """Accuracy, mean cross-entropy, and a 3x3 confusion matrix."""
    if not data:
        raise ContractError("evaluate requires non-empty data")
    for seq in data:
        if seq.label is None:
            raise SchemaError(f"subject {seq.subject_id!r} is unlabeled")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    losses = []
    for batch, targets in _group_by_length(data, checkpoint.normalization_stats):
        probs = predict_proba(checkpoint, batch)
        preds = probs.argmax(axis=1)
        # clip only guards the log; probabilities themselves stay untouched
        losses.extend(-np.log(np.clip(probs[np.arange(len(targets)), targets], 1e-300, None)))
        for t, p in zip(targets, preds):
            confusion[t, p] += 1
    total = confusion.sum()
    return Metrics(
        accuracy=float(np.trace(confusion)) / total,
        mean_loss=float(np.mean(losses)),
        confusion=confusion,
    )


# ---------------------------------------------------------------------------
# training loop


def _carve_validation(train, fraction, rng):
    by_label = {}
    order = rng.permutation(len(train))
    for idx in order:
        seq = train[int(idx)]
        by_label.setdefault(seq.label, []).append(seq)
    val, remainder = [], []
    for label in sorted(by_label):
        seqs = by_label[label]
        k = max(1, int(round(len(seqs) * fraction))) if len(seqs) > 1 else 0
        val.extend(seqs[:k])
        remainder.extend(seqs[k:])
    return remainder, val


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snapshot):
    for p, saved in zip(params, snapshot):
        p.data = saved.copy()


def train(split, cfg):
    """Minibatch gradient descent on cross-entropy with early stopping.

    Returns the best-validation-loss checkpoint and per-epoch history rows
    (epoch, train_loss, train_acc, val_loss, val_acc).
    """
    if not split.train:
        raise ContractError("training split is empty")
    if split.stats is None:
        raise ContractError("split has no normalization stats; preprocess first")
    rng = np.random.default_rng(cfg.seed)

    if split.validation:
        fit_seqs, val_seqs = list(split.train), list(split.validation)
    else:
        fit_seqs, val_seqs = _carve_validation(split.train, cfg.val_fraction, rng)
    if not val_seqs:
        val_seqs = fit_seqs  # degenerate tiny datasets fall back to train loss

    augmented = augment(fit_seqs, cfg.augmentation, seed=cfg.seed, stats=split.stats)

    checkpoint = init_checkpoint(cfg.arch, split.stats, seed=cfg.seed, hyper=cfg.hyper)
    params = checkpoint.parameters()
    optimizer = _make_optimizer(cfg, params)

    groups = _group_by_length(augmented, split.stats)
    batches = []
    for arrays, targets in groups:
        for start in range(0, len(targets), cfg.batch_size):
            batches.append((arrays[start : start + cfg.batch_size],
                            targets[start : start + cfg.batch_size]))

    shard_pool = None
    shards = []
    if cfg.parallel > 1:
        shards = [alias_checkpoint(checkpoint) for _ in range(cfg.parallel)]
        shard_pool = ThreadPoolExecutor(max_workers=cfg.parallel)

    def batch_step(batch, targets, epoch):
        if cfg.parallel <= 1:
            logits, _ = classifier_logits(checkpoint, Tensor(batch))
            loss = ad.cross_entropy(logits, targets)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(epoch)
            if cfg.learning_rate > 0:
                ad.backward(loss)
            return
        # sharded evaluation: private graphs per thread over aliased weights,
        # gradients reduced in fixed shard order afterwards
        bounds = np.linspace(0, len(targets), cfg.parallel + 1).astype(int)
        jobs = []
        for i, clone in enumerate(shards):
            lo, hi = bounds[i], bounds[i + 1]
            if lo == hi:
                continue

            def run(clone=clone, lo=lo, hi=hi):
                logits, _ = classifier_logits(clone, Tensor(batch[lo:hi]))
                loss = ad.cross_entropy(logits, targets[lo:hi])
                ad.backward(loss)
                return clone, (hi - lo) / len(targets), loss.item()

            jobs.append(shard_pool.submit(run))
        results = [job.result() for job in jobs]
        if any(not np.isfinite(loss) for _, _, loss in results):
            raise TrainingDivergedError(epoch)
        if cfg.learning_rate > 0:
            for canonical, shard_grads in zip(
                params, zip(*[clone.parameters() for clone, _, _ in results])
            ):
                total = np.zeros_like(canonical.data)
                for (_, fraction, _), shard_param in zip(results, shard_grads):
                    if shard_param.grad is not None:
                        total += fraction * shard_param.grad
                canonical.grad = total
        for clone, _, _ in results:
            ad.zero_grads(clone.parameters())

    history = []
    best_val = np.inf
    best_snapshot = _snapshot(params)
    best_epoch = 0
    since_best = 0

    try:
        for epoch in range(1, cfg.epochs + 1):
            for i in rng.permutation(len(batches)):
                batch, targets = batches[int(i)]
                batch_step(batch, targets, epoch)
                if cfg.learning_rate > 0:
                    optimizer.step()
                    ad.zero_grads(params)

            train_metrics = evaluate(checkpoint, fit_seqs)
            val_metrics = evaluate(checkpoint, val_seqs)
            history.append(
                {
                    "epoch": epoch,
                    "train_loss": train_metrics.mean_loss,
                    "train_acc": train_metrics.accuracy,
                    "val_loss": val_metrics.mean_loss,
                    "val_acc": val_metrics.accuracy,
                }
            )
            if val_metrics.mean_loss < best_val:
                best_val = val_metrics.mean_loss
                best_snapshot = _snapshot(params)
                best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    break
    finally:
        if shard_pool is not None:
            shard_pool.shutdown(wait=True)

    _restore(params, best_snapshot)
    checkpoint.hyper = dict(checkpoint.hyper, best_epoch=best_epoch)
    return checkpoint, history


HISTORY_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


def write_history(history, path):
    """Plain tab-separated history table for plotting."""
    lines = ["\t".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                               for c in HISTORY_COLUMNS))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
