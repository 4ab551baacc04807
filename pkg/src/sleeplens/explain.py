"""Attribution and counterfactual explainers over immutable checkpoints.

Shapley attributions use interventional masking: a coalition value is the
model output averaged over background instances whose encoded columns stand
in for the absent features. Players are whole-sequence schema features for
the sequence-level explainers and (timestep, feature) pairs for the
per-timestep summary. Everything here is a pure function of its inputs;
sampling explainers take an explicit seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import data as dio
from .autodiff import Tensor
from .errors import (
    AlreadyInTargetClassError,
    ComplexityError,
    ContractError,
    DegenerateSystemError,
    UnsupportedArchError,
)
from .models import ModelCheckpoint, classifier_predict, frozen_parameters, predict_proba

EXACT_PLAYER_LIMIT = 14
DEFAULT_BACKGROUND_SIZE = 50
_CHUNK_ROWS = 8192


# ---------------------------------------------------------------------------
# report types


@dataclass
class ShapReport:
    """Attributions plus the bookkeeping needed to audit them.

    ``matrix`` rows are timesteps: [T, F] in per-timestep mode, [1, F] in
    whole-sequence mode (each feature's attribution summed over time).
    """

    matrix: np.ndarray
    feature_names: list
    timestep_labels: list
    base_value: float
    model_output: float
    target_class: int
    method: str  # "exact" | "kernel(n)"
    background_size: int
    seed: Optional[int] = None

    @property
    def efficiency_residual(self):
        return float(abs(self.matrix.sum() + self.base_value - self.model_output))

    def per_feature(self):
        return self.matrix.sum(axis=0)

    def to_doc(self):
        return {
            "kind": "shap_report",
            "method": self.method,
            "target_class": self.target_class,
            "target_label": dio.LABELS[self.target_class],
            "base_value": self.base_value,
            "model_output": self.model_output,
            "efficiency_residual": self.efficiency_residual,
            "background_size": self.background_size,
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "timestep_labels": list(self.timestep_labels),
            "attributions": self.matrix.tolist(),
        }


@dataclass
class AttentionTrace:
    scores: np.ndarray
    timestep_labels: list

    def to_doc(self):
        return {
            "kind": "attention_trace",
            "timestep_labels": list(self.timestep_labels),
            "scores": self.scores.tolist(),
        }


@dataclass
class Counterfactual:
    original: dio.PatientSequence
    modified: dio.PatientSequence
    changed_features: list  # (feature, old, new) at the edited timestep
    original_prediction: dict  # {"class_index", "label", "probability"}
    new_prediction: dict
    distance: float
    converged: bool
    target_class: int

    def to_doc(self):
        return {
            "kind": "counterfactual",
            "converged": self.converged,
            "target_class": self.target_class,
            "target_label": dio.LABELS[self.target_class],
            "original_prediction": self.original_prediction,
            "new_prediction": self.new_prediction,
            "distance": self.distance,
            "changed_features": [
                {"feature": f, "old": old, "new": new} for f, old, new in self.changed_features
            ],
            "original": dio.sequence_to_doc(self.original),
            "modified": dio.sequence_to_doc(self.modified),
        }


@dataclass
class CounterfactualConfig:
    """Search knobs. Edits are uniform per feature: the proposed value
    replaces the feature at every edited timestep, and the distance counts
    each feature once (an intervention on a patient attribute, not per-row
    noise). ``edit_last_only`` restricts edits to the final timestep, which
    sequence-aggregating models often cannot flip."""

    mutable_features: Optional[list] = None  # None -> every mutable schema feature
    lambda_init: float = 0.1
    lambda_growth: float = 2.0
    lambda_every: int = 50
    lambda_cap: float = 100.0
    max_iters: int = 2000
    learning_rate: float = 0.05
    feature_weights: dict = field(default_factory=dict)  # overrides 1/MAD
    edit_last_only: bool = False
    deadline_seconds: Optional[float] = None


# ---------------------------------------------------------------------------
# masked coalition games


def _resolve_model(model, stats):
    if isinstance(model, ModelCheckpoint):
        return (lambda batch: predict_proba(model, batch)), model.normalization_stats
    if callable(model):
        if stats is None:
            raise ContractError("a callable model needs explicit normalization stats")
        return model, stats
    raise ContractError(f"model must be a ModelCheckpoint or callable, got {type(model)!r}")


class _MaskedGame:
    """v(S) = mean over background of model(instance with S present).

    ``fixed_zones`` (features excluded from attribution) always carry the
    instance values, so restricting the player set conditions on the rest
    of the instance instead of marginalizing it.
    """

    def __init__(self, predict_fn, instance_enc, background_enc, zones, target_class,
                 fixed_zones=()):
        self.predict_fn = predict_fn
        self.instance = instance_enc
        self.background = background_enc
        self.zones = zones  # player -> (row indexer, column slice)
        self.fixed_zones = tuple(fixed_zones)
        self.target = target_class
        self.n_players = len(zones)

    def values(self, masks):
        masks = np.asarray(masks, dtype=bool)
        n_bg = len(self.background)
        out = np.empty(len(masks))
        rows_per_mask = max(1, _CHUNK_ROWS // n_bg)
        for start in range(0, len(masks), rows_per_mask):
            chunk = masks[start : start + rows_per_mask]
            batch = np.tile(self.background, (len(chunk), 1, 1))
            for rows, cols in self.fixed_zones:
                batch[:, rows, cols] = self.instance[rows, cols]
            for i, mask in enumerate(chunk):
                view = batch[i * n_bg : (i + 1) * n_bg]
                for j in np.flatnonzero(mask):
                    rows, cols = self.zones[j]
                    view[:, rows, cols] = self.instance[rows, cols]
            probs = self.predict_fn(batch)
            out[start : start + len(chunk)] = (
                probs[:, self.target].reshape(len(chunk), n_bg).mean(axis=1)
            )
        return out


def _select_features(feature_subset):
    all_names = [s.name for s in dio.MODEL_FEATURES]
    if feature_subset is None:
        return all_names, []
    unknown = sorted(set(feature_subset) - set(all_names))
    if unknown:
        raise ContractError(f"unknown model features: {unknown}")
    rest = [n for n in all_names if n not in feature_subset]
    return list(feature_subset), rest


def _feature_zones(stats, feature_subset=None):
    slices = dio.feature_column_slices(stats)
    names, rest = _select_features(feature_subset)
    zones = [(slice(None), slices[name]) for name in names]
    fixed = [(slice(None), slices[name]) for name in rest]
    return names, zones, fixed


def _timestep_zones(stats, t_len, feature_subset=None):
    slices = dio.feature_column_slices(stats)
    names, rest = _select_features(feature_subset)
    zones = []
    for t in range(t_len):
        for name in names:
            zones.append((t, slices[name]))
    fixed = [(slice(None), slices[name]) for name in rest]
    return names, zones, fixed


def _shapley_from_enumeration(game):
    p = game.n_players
    n_masks = 1 << p
    all_masks = np.zeros((n_masks, p), dtype=bool)
    for j in range(p):
        all_masks[:, j] = (np.arange(n_masks) >> j) & 1
    v = game.values(all_masks)
    sizes = all_masks.sum(axis=1)
    # w(s) = s! (p-1-s)! / p!
    weights = np.array(
        [math.factorial(s) * math.factorial(p - 1 - s) / math.factorial(p) for s in range(p)]
    )
    phi = np.zeros(p)
    idx = np.arange(n_masks)
    for j in range(p):
        without = idx[~all_masks[:, j]]
        phi[j] = np.sum(weights[sizes[without]] * (v[without | (1 << j)] - v[without]))
    return phi, float(v[0]), float(v[-1])


def _shapley_kernel_weights(p):
    sizes = np.arange(1, p)
    w = (p - 1) / (np.array([math.comb(p, s) for s in sizes]) * sizes * (p - sizes))
    return sizes, w


def _sample_coalitions(p, n_samples, rng):
    """Coalitions plus regression weights under the Shapley kernel.

    Sizes are enumerated completely, outside-in (1 and p-1 first), while the
    budget allows; each enumerated mask carries its exact kernel weight.
    Remaining sizes are sampled by kernel mass with frequency weights scaled
    to the leftover mass, so the weighted system converges to the exact one.
    """
    import itertools

    _, kernel_w = _shapley_kernel_weights(p)
    masks, weights = [], []
    remaining = n_samples
    enumerated = set()
    for low in range(1, p // 2 + 1):
        pair = {low, p - low}
        count = sum(math.comb(p, s) for s in pair)
        if count > remaining:
            break
        for s in sorted(pair):
            for combo in itertools.combinations(range(p), s):
                mask = np.zeros(p, dtype=bool)
                mask[list(combo)] = True
                masks.append(mask)
                weights.append(kernel_w[s - 1])
            enumerated.add(s)
        remaining -= count

    leftover = [s for s in range(1, p) if s not in enumerated]
    if leftover and remaining > 0:
        mass = np.array([math.comb(p, s) * kernel_w[s - 1] for s in leftover])
        probs = mass / mass.sum()
        counts = {}
        for _ in range(remaining):
            s = int(rng.choice(leftover, p=probs))
            combo = tuple(sorted(int(v) for v in rng.choice(p, size=s, replace=False)))
            counts[combo] = counts.get(combo, 0) + 1
        for combo in sorted(counts):
            mask = np.zeros(p, dtype=bool)
            mask[list(combo)] = True
            masks.append(mask)
            weights.append(counts[combo] / remaining * mass.sum())
    return np.array(masks), np.array(weights)


def _solve_kernel_regression(masks, values, weights, base, fx, p):
    """Weighted least squares with the efficiency constraint folded in."""
    y = values - base - masks[:, p - 1] * (fx - base)
    z = masks[:, : p - 1].astype(np.float64) - masks[:, [p - 1]].astype(np.float64)
    sw = np.sqrt(weights)[:, None]
    try:
        solution, _, rank, _ = np.linalg.lstsq(z * sw, y * sw[:, 0], rcond=None)
    except np.linalg.LinAlgError:
        raise DegenerateSystemError("kernel regression failed; increase n_samples")
    if rank < p - 1:
        raise DegenerateSystemError(
            f"kernel regression system is rank {rank} < {p - 1}; increase n_samples"
        )
    phi = np.empty(p)
    phi[: p - 1] = solution
    phi[p - 1] = (fx - base) - solution.sum()
    return phi


def _encode_for_game(instance, background, stats):
    if not background:
        raise ContractError("background must be non-empty")
    inst = dio.encode_array(instance, stats)
    t_len = inst.shape[0]
    bad = [b.subject_id for b in background if len(b.timesteps) != t_len]
    if bad:
        raise ContractError(
            f"background sequences must match the instance length {t_len}; offenders: {bad[:3]}"
        )
    bg = np.stack([dio.encode_array(b, stats) for b in background])
    return inst, bg, t_len


# ---------------------------------------------------------------------------
# public explainers


def shap_exact(model, instance, background, target_class, stats=None, feature_subset=None):
    """Exact Shapley attribution per whole-sequence feature (2^P coalitions)."""
    predict_fn, stats = _resolve_model(model, stats)
    inst, bg, t_len = _encode_for_game(instance, background, stats)
    names, zones, fixed = _feature_zones(stats, feature_subset)
    if len(zones) > EXACT_PLAYER_LIMIT:
        raise ComplexityError(
            f"{len(zones)} players exceed the exact enumeration limit "
            f"({EXACT_PLAYER_LIMIT}); use shap_kernel"
        )
    game = _MaskedGame(predict_fn, inst, bg, zones, target_class, fixed)
    phi, base, fx = _shapley_from_enumeration(game)
    return ShapReport(
        matrix=phi[None, :],
        feature_names=names,
        timestep_labels=["all"],
        base_value=base,
        model_output=fx,
        target_class=target_class,
        method="exact",
        background_size=len(bg),
    )


def shap_kernel(model, instance, background, target_class, n_samples=2000, seed=0,
                stats=None, feature_subset=None):
    """Sampled Shapley attribution via kernel-weighted least squares."""
    predict_fn, stats = _resolve_model(model, stats)
    inst, bg, t_len = _encode_for_game(instance, background, stats)
    names, zones, fixed = _feature_zones(stats, feature_subset)
    return _kernel_report(
        predict_fn, inst, bg, zones, fixed, names, ["all"], target_class,
        n_samples, seed, sequence_mode=True,
    )


def _kernel_report(predict_fn, inst, bg, zones, fixed, names, row_labels, target_class,
                   n_samples, seed, sequence_mode):
    p = len(zones)
    if n_samples < 2 * p + 4:
        raise ContractError(f"n_samples must be >= 2*P+4 = {2 * p + 4}, got {n_samples}")
    rng = np.random.default_rng(seed)
    game = _MaskedGame(predict_fn, inst, bg, zones, target_class, fixed)
    base = float(game.values(np.zeros((1, p), dtype=bool))[0])
    fx = float(game.values(np.ones((1, p), dtype=bool))[0])

    masks, weights = _sample_coalitions(p, n_samples, rng)
    values = game.values(masks)
    phi = _solve_kernel_regression(masks, values, weights, base, fx, p)
    if sequence_mode:
        matrix = phi[None, :]
    else:
        matrix = phi.reshape(len(row_labels), len(names))
    return ShapReport(
        matrix=matrix,
        feature_names=names,
        timestep_labels=list(row_labels),
        base_value=base,
        model_output=fx,
        target_class=target_class,
        method=f"kernel({n_samples})",
        background_size=len(bg),
        seed=seed,
    )


def shap_timestep_summary(model, instance, background, target_class,
                          n_samples=2000, seed=0, stats=None, feature_subset=None,
                          method="auto"):
    """Attribution per (timestep, feature) player.

    ``method="auto"`` enumerates exactly when T*F players fit the limit and
    falls back to kernel sampling otherwise; "exact" errors beyond the limit.
    """
    if method not in ("auto", "exact", "kernel"):
        raise ContractError(f"unknown method {method!r}")
    predict_fn, stats = _resolve_model(model, stats)
    inst, bg, t_len = _encode_for_game(instance, background, stats)
    names, zones, fixed = _timestep_zones(stats, t_len, feature_subset)
    rows = list(range(t_len))
    exact_feasible = len(zones) <= EXACT_PLAYER_LIMIT
    if method == "exact" and not exact_feasible:
        raise ComplexityError(
            f"{len(zones)} players exceed the exact enumeration limit "
            f"({EXACT_PLAYER_LIMIT}); use kernel"
        )
    if method in ("exact", "auto") and exact_feasible:
        game = _MaskedGame(predict_fn, inst, bg, zones, target_class, fixed)
        phi, base, fx = _shapley_from_enumeration(game)
        return ShapReport(
            matrix=phi.reshape(t_len, len(names)),
            feature_names=names,
            timestep_labels=rows,
            base_value=base,
            model_output=fx,
            target_class=target_class,
            method="exact",
            background_size=len(bg),
        )
    return _kernel_report(
        predict_fn, inst, bg, zones, fixed, names, rows, target_class,
        n_samples, seed, sequence_mode=False,
    )


def attention_trace(checkpoint, instance):
    """The attention scores classifier_predict produces for this input."""
    if checkpoint.arch not in ("lstm", "tft"):
        raise UnsupportedArchError(
            f"arch {checkpoint.arch!r} has no attention head; trace unavailable"
        )
    if isinstance(instance, dio.PatientSequence):
        enc = dio.encode_array(instance, checkpoint.normalization_stats)
    else:
        enc = np.asarray(instance, dtype=np.float64)
    _, internals = classifier_predict(checkpoint, Tensor(enc))
    scores = internals["attention_scores"].data
    return AttentionTrace(scores=scores.copy(), timestep_labels=list(range(len(scores))))


# ---------------------------------------------------------------------------
# counterfactual search


def _prediction_doc(probs, class_index):
    return {
        "class_index": int(class_index),
        "label": dio.LABELS[int(class_index)],
        "probability": float(probs[int(class_index)]),
    }


def _predict_instance(checkpoint, seq):
    with frozen_parameters(checkpoint):
        probs, _ = classifier_predict(
            checkpoint, Tensor(dio.encode_array(seq, checkpoint.normalization_stats))
        )
    return probs.data


def _default_weight(stats, name):
    entry = stats.continuous.get(name)
    if entry is None:  # categorical: flat unit cost per change
        return 1.0
    mad = entry.get("mad") or entry["scale"]
    return 1.0 / mad if mad > 0 else 1.0


def _apply_edits(seq, edits, timesteps):
    """New sequence with feature=value applied at the given timestep indices."""
    out = seq.copy()
    for name, value in edits.items():
        for t in timesteps:
            out.timesteps[t].set(name, value)
    return out


def _ordinal_grid(spec):
    lo, hi = spec.domain
    return [float(v) for v in range(int(lo), int(hi) + 1)]


def counterfactual_search(checkpoint, instance, target_class, config=None):
    """Wachter-style search: minimize lambda*(p_target - 1)^2 + weighted L1.

    Numeric features move by projected gradient descent with lambda annealed
    upward until the class flips; integer-grid features are rounded at
    projection with a closest-first refinement; categorical features are
    swapped exhaustively. Each edit applies the proposed value uniformly
    across the sequence (see CounterfactualConfig.edit_last_only).
    """
    config = config or CounterfactualConfig()
    stats = checkpoint.normalization_stats
    if not 0 <= target_class < len(dio.LABELS):
        raise ContractError(f"target_class {target_class} out of range")

    probs0 = _predict_instance(checkpoint, instance)
    original_class = int(probs0.argmax())
    if original_class == target_class:
        raise AlreadyInTargetClassError(
            f"instance is already predicted as class {target_class} "
            f"({dio.LABELS[target_class]}); nothing to search"
        )

    mutable = config.mutable_features
    if mutable is None:
        mutable = [s.name for s in dio.MODEL_FEATURES if s.mutable]
    if not mutable:
        raise ContractError("mutable feature set is empty")
    bad = sorted(set(mutable) & dio.IMMUTABLE_FEATURES)
    if bad:
        raise ContractError(f"immutable features cannot be mutated: {bad}")
    model_names = {s.name for s in dio.MODEL_FEATURES}
    unknown = sorted(set(mutable) - model_names)
    if unknown:
        raise ContractError(f"not model features: {unknown}")

    t_len = len(instance.timesteps)
    edit_ts = [t_len - 1] if config.edit_last_only else list(range(t_len))
    weights = {
        name: config.feature_weights.get(name, _default_weight(stats, name)) for name in mutable
    }

    numeric = [n for n in mutable if dio.SCHEMA_BY_NAME[n].kind in dio.NUMERIC_KINDS]
    categorical = [n for n in mutable if dio.SCHEMA_BY_NAME[n].kind == "categorical"]

    deadline = (
        time.monotonic() + config.deadline_seconds if config.deadline_seconds else None
    )

    def distance_of(edits):
        total = 0.0
        for name, value in edits.items():
            original_value = instance.timesteps[edit_ts[-1]].get(name)
            if dio.SCHEMA_BY_NAME[name].kind == "categorical":
                total += weights[name] * (value != original_value)
            else:
                total += weights[name] * abs(value - original_value)
        return total

    def flips(edits):
        candidate = _apply_edits(instance, edits, edit_ts)
        probs = _predict_instance(checkpoint, candidate)
        return int(probs.argmax()) == target_class, probs

    best = None  # (distance, edits, probs)

    def consider(edits):
        nonlocal best
        clean = {
            n: v
            for n, v in edits.items()
            if v != instance.timesteps[edit_ts[-1]].get(n)
        }
        if not clean:
            return False
        ok, probs = flips(clean)
        if ok:
            d = distance_of(clean)
            if best is None or d < best[0] - 1e-12:
                best = (d, clean, probs)
        return ok

    if numeric:
        _gradient_phase(
            checkpoint, instance, target_class, numeric, weights, edit_ts, config,
            consider, deadline,
        )

    for name in categorical:
        vocab = stats.categorical[name]["vocab"]
        for value in vocab:
            consider({name: value})
            if deadline and time.monotonic() > deadline:
                break

    if best is not None and len(numeric) > 0:
        _grid_refine(instance, numeric, edit_ts, consider, lambda: best)

    if best is None:
        # honest non-convergence: report the unmodified instance
        return Counterfactual(
            original=instance.copy(),
            modified=instance.copy(),
            changed_features=[],
            original_prediction=_prediction_doc(probs0, original_class),
            new_prediction=_prediction_doc(probs0, original_class),
            distance=0.0,
            converged=False,
            target_class=target_class,
        )

    d, edits, probs = best
    modified = _apply_edits(instance, edits, edit_ts)
    changed = [
        (name, instance.timesteps[edit_ts[-1]].get(name), value)
        for name, value in sorted(edits.items())
    ]
    return Counterfactual(
        original=instance.copy(),
        modified=modified,
        changed_features=changed,
        original_prediction=_prediction_doc(probs0, original_class),
        new_prediction=_prediction_doc(probs, int(probs.argmax())),
        distance=float(d),
        converged=True,
        target_class=target_class,
    )


def _gradient_phase(checkpoint, instance, target_class, numeric, weights, edit_ts,
                    config, consider, deadline):
    """Projected gradient descent in z-score space over the numeric mutables."""
    stats = checkpoint.normalization_stats
    slices = dio.feature_column_slices(stats)
    base_enc = dio.encode_array(instance, stats)
    t_len = base_enc.shape[0]

    entries = [stats.continuous[n] for n in numeric]
    scales = np.array([e["scale"] for e in entries])
    means = np.array([e["mean"] for e in entries])
    domains = np.array([dio.SCHEMA_BY_NAME[n].domain for n in numeric], dtype=np.float64)
    original_values = np.array(
        [instance.timesteps[edit_ts[-1]].get(n) for n in numeric], dtype=np.float64
    )
    w = np.array([weights[n] for n in numeric])

    # indicator tensors scattering each variable into its encoded cells
    indicators = []
    for i, name in enumerate(numeric):
        ind = np.zeros_like(base_enc)
        ind[edit_ts, slices[name].start] = 1.0
        indicators.append(Tensor(ind))
    base = Tensor(base_enc)

    z0 = (original_values - means) / scales
    z = z0.copy()
    lam = config.lambda_init

    def round_edits(values):
        edits = {}
        for i, name in enumerate(numeric):
            spec = dio.SCHEMA_BY_NAME[name]
            v = float(np.clip(values[i], *spec.domain))
            if spec.kind == "ordinal":
                v = float(np.round(v))
            edits[name] = v
        return edits

    for it in range(config.max_iters):
        with frozen_parameters(checkpoint):
            u = Tensor(z, requires_grad=True)
            seq_t = base
            for i in range(len(numeric)):
                shift = ad.getitem(u, i) - float(z0[i])
                seq_t = seq_t + shift * indicators[i]
            probs, _ = classifier_predict(checkpoint, seq_t)
            p_target = ad.getitem(probs, target_class)
            ad.backward(p_target)
            dp_dz = u.grad

        x = z * scales + means
        grad = lam * 2.0 * (p_target.item() - 1.0) * dp_dz
        grad = grad + w * np.sign(x - original_values) * scales
        z = z - config.learning_rate * grad
        # project onto the feature domains
        x = np.clip(z * scales + means, domains[:, 0], domains[:, 1])
        z = (x - means) / scales

        if consider(round_edits(x)):
            return
        if (it + 1) % config.lambda_every == 0:
            lam = min(lam * config.lambda_growth, config.lambda_cap)
        if deadline and time.monotonic() > deadline:
            return


def _grid_refine(instance, numeric, edit_ts, consider, get_best):
    """Shrink a found flip: closest-first scan when a single integer-grid
    feature changed (matching the exhaustive-scan minimum), else walk each
    ordinal edit back toward its original value while the flip holds."""
    _, edits, _ = get_best()
    ordinal_edits = [
        n for n in edits if n in numeric and dio.SCHEMA_BY_NAME[n].kind == "ordinal"
    ]
    if len(edits) == 1 and len(ordinal_edits) == 1:
        name = ordinal_edits[0]
        original_value = instance.timesteps[edit_ts[-1]].get(name)
        grid = _ordinal_grid(dio.SCHEMA_BY_NAME[name])
        for value in sorted(grid, key=lambda v: (abs(v - original_value), v)):
            if value != original_value and consider({name: value}):
                return
        return
    improved = True
    while improved:
        improved = False
        _, edits, _ = get_best()
        for name in ordinal_edits:
            if name not in edits:
                continue
            original_value = instance.timesteps[edit_ts[-1]].get(name)
            value = edits[name]
            if value == original_value:
                continue
            step = 1.0 if value < original_value else -1.0
            proposal = dict(edits)
            proposal[name] = value + step
            before = get_best()[0]
            consider(proposal)
            if get_best()[0] < before - 1e-12:
                improved = True
