"""Feature schema, CSV ingestion, preprocessing, and synthetic data.

The record layout is one CSV row per (subject, timestep) with the header

    subject_id,timestep,age,gender,occupation,socioeconomic,sleep_duration,
    quality_of_sleep,activity_raw_minutes,stress_level,bmi_category,
    systolic_bp,diastolic_bp,heart_rate,daily_steps,sleep_disorder

Missing cells are empty. ``physical_activity`` is not a CSV column: it is
derived during preprocessing by rescaling raw activity minutes onto the
30-90 scale fitted on training data, with the raw minutes retained for
audit. Sleep duration is expressed in hours in this layout; conversion from
minute-denominated sources happens at parse time via ``duration_unit``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, IntegrityError, RowParseError, SchemaError

LABELS = ["None", "Insomnia", "Sleep Apnea"]
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABELS)}
NO_DISORDER = "None"

CSV_HEADER = [
    "subject_id",
    "timestep",
    "age",
    "gender",
    "occupation",
    "socioeconomic",
    "sleep_duration",
    "quality_of_sleep",
    "activity_raw_minutes",
    "stress_level",
    "bmi_category",
    "systolic_bp",
    "diastolic_bp",
    "heart_rate",
    "daily_steps",
    "sleep_disorder",
]


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # "continuous" | "ordinal" | "categorical"
    domain: tuple = None  # (lo, hi) for numeric kinds
    mutable: bool = True
    model_input: bool = True
    csv_column: str = None

    @property
    def column(self):
        return self.csv_column or self.name


# Fixed 14-feature schema. Blood pressure is split into systolic/diastolic
# and a socioeconomic ordinal included; raw activity minutes are kept for
# audit only and never fed to models. Age and gender are immutable for
# counterfactual purposes (not actionable interventions).
SCHEMA = [
    FeatureSpec("age", "continuous", (18, 90), mutable=False),
    FeatureSpec("gender", "categorical", mutable=False),
    FeatureSpec("occupation", "categorical"),
    FeatureSpec("socioeconomic_indicator", "ordinal", (1, 5), csv_column="socioeconomic"),
    FeatureSpec("sleep_duration", "continuous", (3.0, 14.0)),
    FeatureSpec("quality_of_sleep", "ordinal", (1, 10)),
    FeatureSpec("physical_activity", "continuous", (30, 90), csv_column=None),
    FeatureSpec("stress_level", "ordinal", (1, 10)),
    FeatureSpec("bmi_category", "categorical"),
    FeatureSpec("systolic_bp", "continuous", (80, 220)),
    FeatureSpec("diastolic_bp", "continuous", (40, 140)),
    FeatureSpec("heart_rate", "continuous", (35, 200)),
    FeatureSpec("daily_steps", "continuous", (0, 50000)),
    FeatureSpec("activity_raw_minutes", "continuous", (0, 1440), mutable=False, model_input=False),
]

SCHEMA_BY_NAME = {spec.name: spec for spec in SCHEMA}
MODEL_FEATURES = [spec for spec in SCHEMA if spec.model_input]
# counterfactual policy: demographics are not actionable interventions
IMMUTABLE_FEATURES = frozenset({"age", "gender"})
NUMERIC_KINDS = ("continuous", "ordinal")
UNKNOWN_CATEGORY = "<unknown>"

# physical_activity is derived, so the CSV rows carry the other 13 features,
# in header order (which differs from schema order for the audit column)
_COLUMN_TO_SPEC = {spec.column: spec for spec in SCHEMA if spec.column}
_CSV_FEATURES = [_COLUMN_TO_SPEC[c] for c in CSV_HEADER[2:-1]]


@dataclass
class FeatureVector:
    """One timestep of observations; ``None`` marks a missing cell."""

    age: Optional[float] = None
    gender: Optional[str] = None
    occupation: Optional[str] = None
    socioeconomic_indicator: Optional[float] = None
    sleep_duration: Optional[float] = None
    quality_of_sleep: Optional[float] = None
    physical_activity: Optional[float] = None
    stress_level: Optional[float] = None
    bmi_category: Optional[str] = None
    systolic_bp: Optional[float] = None
    diastolic_bp: Optional[float] = None
    heart_rate: Optional[float] = None
    daily_steps: Optional[float] = None
    activity_raw_minutes: Optional[float] = None

    def get(self, name):
        return getattr(self, name)

    def set(self, name, value):
        setattr(self, name, value)


@dataclass
class PatientSequence:
    """One subject's ordered feature vectors plus an optional label."""

    subject_id: str
    timesteps: list
    label: Optional[str] = None

    def __post_init__(self):
        if not self.timesteps:
            raise ContractError(f"subject {self.subject_id!r} has no timesteps")

    def copy(self):
        return PatientSequence(
            self.subject_id, [replace(fv) for fv in self.timesteps], self.label
        )


@dataclass
class NormalizationStats:
    """Fitted preprocessing state; computed on training data only."""

    continuous: dict = field(default_factory=dict)  # name -> mean/scale/median/mad
    categorical: dict = field(default_factory=dict)  # name -> vocab/mode
    activity_raw_min: float = 0.0
    activity_raw_max: float = 1.0
    warnings: list = field(default_factory=list)

    def scale_activity(self, raw_minutes):
        lo, hi = self.activity_raw_min, self.activity_raw_max
        if hi <= lo:
            return 60.0
        scaled = 30.0 + (raw_minutes - lo) * 60.0 / (hi - lo)
        return float(min(90.0, max(30.0, scaled)))

    def category_code(self, name, value):
        vocab = self.categorical[name]["vocab"]
        try:
            return vocab.index(value)
        except ValueError:
            return len(vocab)  # the explicit unknown slot

    def to_doc(self):
        return {
            "continuous": self.continuous,
            "categorical": self.categorical,
            "activity_raw_min": self.activity_raw_min,
            "activity_raw_max": self.activity_raw_max,
            "warnings": self.warnings,
        }

    @classmethod
    def from_doc(cls, doc):
        return cls(
            continuous={k: dict(v) for k, v in doc["continuous"].items()},
            categorical={k: {"vocab": list(v["vocab"]), "mode": v["mode"]} for k, v in doc["categorical"].items()},
            activity_raw_min=doc["activity_raw_min"],
            activity_raw_max=doc["activity_raw_max"],
            warnings=list(doc.get("warnings", [])),
        )


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_cell(text, spec, line_number):
    if text == "":
        return None
    if spec.kind == "categorical":
        return text
    try:
        return float(text)
    except ValueError:
        raise RowParseError(f"cannot parse {spec.column}={text!r} as a number", line_number)


def parse_csv(path, duration_unit="hours"):
    """Read the documented CSV layout into PatientSequences.

    Rows are grouped by subject_id and ordered by the timestep column.
    ``duration_unit="minutes"`` divides sleep_duration by 60 on ingest.
    """
    if duration_unit not in ("hours", "minutes"):
        raise ContractError(f"duration_unit must be 'hours' or 'minutes', got {duration_unit!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header row")
        if header != CSV_HEADER:
            unknown = [c for c in header if c not in CSV_HEADER]
            if unknown:
                raise SchemaError(f"unknown column(s) {unknown}; expected header {CSV_HEADER}")
            raise SchemaError(f"header {header} does not match expected {CSV_HEADER}")

        rows = {}  # subject -> {timestep: FeatureVector}
        labels = {}
        order = []
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise RowParseError(
                    f"expected {len(CSV_HEADER)} cells, got {len(row)}", line_number
                )
            subject = row[0]
            try:
                timestep = int(row[1])
            except ValueError:
                raise RowParseError(f"cannot parse timestep={row[1]!r} as an integer", line_number)
            fv = FeatureVector()
            for i, spec in enumerate(_CSV_FEATURES):
                value = _parse_cell(row[2 + i], spec, line_number)
                if spec.name == "sleep_duration" and value is not None and duration_unit == "minutes":
                    value = value / 60.0
                fv.set(spec.name, value)
            label_text = row[-1]
            if label_text not in ("",) + tuple(LABELS):
                raise RowParseError(f"unknown sleep_disorder value {label_text!r}", line_number)
            if subject not in rows:
                rows[subject] = {}
                labels[subject] = None
                order.append(subject)
            if timestep in rows[subject]:
                raise IntegrityError(f"duplicate (subject={subject!r}, timestep={timestep})")
            rows[subject][timestep] = fv
            if label_text:
                labels[subject] = label_text

        sequences = []
        for subject in order:
            steps = [rows[subject][t] for t in sorted(rows[subject])]
            sequences.append(PatientSequence(subject, steps, labels[subject]))
        return sequences


def _format_number(value):
    if value is None:
        return ""
    f = float(value)
    return str(int(f)) if f == int(f) else repr(f)


def write_csv(path, sequences):
    """Write PatientSequences in the documented layout (inverse of parse_csv)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for seq in sequences:
            for t, fv in enumerate(seq.timesteps):
                row = [seq.subject_id, str(t)]
                for spec in _CSV_FEATURES:
                    value = fv.get(spec.name)
                    if spec.kind == "categorical":
                        row.append("" if value is None else str(value))
                    else:
                        row.append(_format_number(value))
                row.append(seq.label or "")
                writer.writerow(row)


# ---------------------------------------------------------------------------
# preprocessing


def _observed(sequences, name):
    return [
        fv.get(name) for seq in sequences for fv in seq.timesteps if fv.get(name) is not None
    ]


def fit_stats(sequences):
    """Fit NormalizationStats on (training) sequences."""
    stats = NormalizationStats()
    raw_activity = _observed(sequences, "activity_raw_minutes")
    if raw_activity:
        stats.activity_raw_min = float(min(raw_activity))
        stats.activity_raw_max = float(max(raw_activity))
    if stats.activity_raw_max <= stats.activity_raw_min:
        stats.warnings.append("activity_raw_minutes has zero range; mapping all values to 60")

    # heart-rate averaging and activity scaling happen before moment fitting
    derived = [_derive_fields(seq, stats) for seq in sequences]

    for spec in SCHEMA:
        values = _observed(derived, spec.name)
        if spec.kind == "categorical":
            vocab = sorted(set(values))
            mode = max(vocab, key=lambda v: (values.count(v), v)) if vocab else UNKNOWN_CATEGORY
            stats.categorical[spec.name] = {"vocab": vocab, "mode": mode}
            continue
        if not values:
            stats.continuous[spec.name] = {"mean": 0.0, "scale": 1.0, "median": 0.0, "mad": 1.0}
            stats.warnings.append(f"{spec.name}: no observed values at fit time")
            continue
        arr = np.asarray(values, dtype=np.float64)
        median = float(np.median(arr))
        scale = float(arr.std())
        if scale == 0.0:
            scale = 1.0
            stats.warnings.append(f"{spec.name}: zero variance at fit time; scale set to 1")
        mad = float(np.median(np.abs(arr - median)))
        if mad == 0.0:
            mad = scale
        entry = {"mean": float(arr.mean()), "scale": scale, "median": median, "mad": mad}
        if spec.kind == "ordinal":
            entry["median"] = float(np.round(median))
        stats.continuous[spec.name] = entry
    return stats


def _derive_fields(seq, stats):
    """Per-subject heart-rate averaging plus activity rescaling."""
    out = seq.copy()
    hr_values = [fv.heart_rate for fv in out.timesteps if fv.heart_rate is not None]
    if not hr_values:
        hr_mean = None
    elif len(set(hr_values)) == 1:  # already averaged; keep idempotent
        hr_mean = hr_values[0]
    else:
        hr_mean = float(np.mean(hr_values))
    for fv in out.timesteps:
        fv.heart_rate = hr_mean
        if fv.activity_raw_minutes is not None:
            fv.physical_activity = stats.scale_activity(fv.activity_raw_minutes)
    return out


def preprocess(raw, stats=None):
    """Impute, derive, and normalize sequences.

    With ``stats=None`` the statistics are fitted from ``raw`` (training
    path) and returned; otherwise the supplied training stats are applied
    unchanged (test path never refits). Returned sequences keep features in
    interpretable units; z-scoring and one-hot encoding are materialized by
    ``encode_features`` using the same stats.
    """
    fitted = stats if stats is not None else fit_stats(raw)
    processed = []
    for seq in raw:
        out = _derive_fields(seq, fitted)
        for fv in out.timesteps:
            for spec in SCHEMA:
                if fv.get(spec.name) is not None:
                    continue
                if spec.kind == "categorical":
                    fv.set(spec.name, fitted.categorical[spec.name]["mode"])
                else:
                    fv.set(spec.name, fitted.continuous[spec.name]["median"])
        processed.append(out)
    return processed, fitted


def validate_instance(seq):
    """Domain check used at service boundaries; returns (field, message) pairs."""
    problems = []
    for t, fv in enumerate(seq.timesteps):
        for spec in SCHEMA:
            value = fv.get(spec.name)
            if value is None or spec.kind == "categorical" or spec.domain is None:
                continue
            lo, hi = spec.domain
            if not (lo <= value <= hi):
                problems.append(
                    (spec.name, f"timestep {t}: {spec.name}={value} outside [{lo}, {hi}]")
                )
    return problems


# ---------------------------------------------------------------------------
# tensor encoding


def encoded_columns(stats):
    """Documented fixed column order of the model input encoding."""
    columns = []
    for spec in MODEL_FEATURES:
        if spec.kind == "categorical":
            vocab = stats.categorical[spec.name]["vocab"]
            columns.extend(f"{spec.name}={v}" for v in vocab)
            columns.append(f"{spec.name}={UNKNOWN_CATEGORY}")
        else:
            columns.append(spec.name)
    return columns


def feature_column_slices(stats):
    """Map each model feature to its contiguous slice of encoded columns."""
    slices = {}
    start = 0
    for spec in MODEL_FEATURES:
        width = len(stats.categorical[spec.name]["vocab"]) + 1 if spec.kind == "categorical" else 1
        slices[spec.name] = slice(start, start + width)
        start += width
    return slices


def encoded_width(stats):
    return sum(
        len(stats.categorical[s.name]["vocab"]) + 1 if s.kind == "categorical" else 1
        for s in MODEL_FEATURES
    )


def encode_array(seq, stats):
    """Encode a preprocessed sequence as a [T, F_encoded] float64 array."""
    width = encoded_width(stats)
    out = np.zeros((len(seq.timesteps), width), dtype=np.float64)
    for t, fv in enumerate(seq.timesteps):
        col = 0
        for spec in MODEL_FEATURES:
            value = fv.get(spec.name)
            if spec.kind == "categorical":
                vocab_len = len(stats.categorical[spec.name]["vocab"])
                if value is None:
                    raise SchemaError(f"{spec.name} missing at timestep {t}; preprocess first")
                out[t, col + stats.category_code(spec.name, value)] = 1.0
                col += vocab_len + 1
            else:
                if value is None:
                    raise SchemaError(f"{spec.name} missing at timestep {t}; preprocess first")
                entry = stats.continuous[spec.name]
                out[t, col] = (value - entry["mean"]) / entry["scale"]
                col += 1
    return out


def encode_features(seq, stats):
    """Tensor view of :func:`encode_array` (the model input boundary)."""
    return Tensor(encode_array(seq, stats))


def encode_batch(sequences, stats):
    """Encode equal-length sequences as one [B, T, F_encoded] array."""
    lengths = {len(s.timesteps) for s in sequences}
    if len(lengths) != 1:
        raise ContractError(f"encode_batch requires equal-length sequences, got lengths {sorted(lengths)}")
    return np.stack([encode_array(s, stats) for s in sequences])


def decode_continuous(stats, name, encoded_value):
    entry = stats.continuous[name]
    return encoded_value * entry["scale"] + entry["mean"]


def label_index(label):
    if label not in LABEL_TO_INDEX:
        raise SchemaError(f"unknown label {label!r}; expected one of {LABELS}")
    return LABEL_TO_INDEX[label]


# ---------------------------------------------------------------------------
# wire format (service bodies and explanation documents share CSV names)


def sequence_to_doc(seq):
    doc = {"subject_id": seq.subject_id, "timesteps": []}
    for fv in seq.timesteps:
        step = {}
        for spec in SCHEMA:
            if spec.name == "physical_activity":
                continue
            step[spec.column] = fv.get(spec.name)
        if fv.physical_activity is not None:
            step["physical_activity"] = fv.physical_activity
        doc["timesteps"].append(step)
    doc["label"] = seq.label
    return doc


def sequence_from_doc(doc):
    """Parse the wire format; raises SchemaError naming the offending field."""
    if not isinstance(doc, dict):
        raise SchemaError("instance must be an object")
    timesteps = doc.get("timesteps")
    if not isinstance(timesteps, list) or not timesteps:
        raise SchemaError("field 'timesteps' must be a non-empty list")
    steps = []
    for t, step in enumerate(timesteps):
        if not isinstance(step, dict):
            raise SchemaError(f"timesteps[{t}] must be an object")
        fv = FeatureVector()
        for spec in SCHEMA:
            if spec.name == "physical_activity":
                value = step.get("physical_activity")
                if value is not None:
                    fv.physical_activity = float(value)
                continue
            if spec.column not in step:
                raise SchemaError(f"timesteps[{t}] is missing required field '{spec.column}'")
            value = step[spec.column]
            if value is None:
                continue
            if spec.kind == "categorical":
                fv.set(spec.name, str(value))
            else:
                try:
                    fv.set(spec.name, float(value))
                except (TypeError, ValueError):
                    raise SchemaError(f"timesteps[{t}].{spec.column} is not a number: {value!r}")
        steps.append(fv)
    label = doc.get("label")
    if label is not None and label not in LABELS:
        raise SchemaError(f"unknown label {label!r}; expected one of {LABELS}")
    return PatientSequence(str(doc.get("subject_id", "anonymous")), steps, label)


# ---------------------------------------------------------------------------
# synthetic generator

# Disorder rule: low sleep quality combined with high stress and high heart
# rate. The heart-rate cutoff is a generator constant, not a clinical claim.
RULE_QUALITY_MAX = 5
RULE_STRESS_MIN = 7
RULE_HEART_RATE_MIN = 75
LABEL_NOISE = 0.05

_OCCUPATIONS = ["Nurse", "Engineer", "Teacher", "Driver", "Accountant", "Chef"]
_BMI_LEVELS = ["Underweight", "Normal", "Overweight", "Obese"]


def rule_label(quality_of_sleep, stress_level, heart_rate):
    """The noiseless generative decision rule (disorder vs none)."""
    return (
        quality_of_sleep <= RULE_QUALITY_MAX
        and stress_level >= RULE_STRESS_MIN
        and heart_rate >= RULE_HEART_RATE_MIN
    )


def _wobble_ordinal(rng, base, lo, hi, side_lo, side_hi):
    # keep per-timestep wobble on the same side of the rule threshold
    step = int(rng.choice([-1, 0, 0, 0, 0, 1]))
    return float(min(side_hi, max(side_lo, min(hi, max(lo, base + step)))))


def synth_generate(n_subjects, timesteps_per_subject=7, seed=0):
    """Generate PatientSequences matching the documented marginals.

    A shared per-subject latent factor correlates sleep quality, stress,
    and heart rate so the three rule conditions overlap partially; labels
    follow the rule with 5% noise and the disorder subtype splits 50/50 by
    BMI category.
    """
    if n_subjects < 1:
        raise ContractError("n_subjects must be >= 1")
    rng = np.random.default_rng(seed)
    sequences = []
    for i in range(n_subjects):
        u = rng.normal()
        quality_base = float(np.clip(np.round(7.56 - 1.7 * u + rng.normal(0, 0.8)), 4, 9))
        stress_base = float(np.clip(np.round(5.38 + 1.45 * u + rng.normal(0, 0.9)), 3, 8))
        heart_rate = float(np.round(np.clip(70.5 + 7.0 * u + rng.normal(0, 4.0), 55, 95), 1))
        duration_base = float(np.clip(7.13 - 0.35 * u + rng.normal(0, 0.4), 5.8, 8.5))
        activity_base = float(np.clip(59.17 - 4.0 * u + rng.normal(0, 11.0), 30, 90))

        disorder = rule_label(quality_base, stress_base, heart_rate)
        if disorder:
            bmi = str(rng.choice(["Normal", "Overweight", "Obese"], p=[0.5, 0.3, 0.2]))
            label = "Insomnia" if bmi == "Normal" else "Sleep Apnea"
        else:
            bmi = str(rng.choice(_BMI_LEVELS, p=[0.05, 0.5, 0.3, 0.15]))
            label = NO_DISORDER
        if rng.random() < LABEL_NOISE:
            label = str(rng.choice([l for l in LABELS if l != label]))

        age = float(rng.integers(25, 61))
        gender = str(rng.choice(["Male", "Female"]))
        occupation = str(rng.choice(_OCCUPATIONS))
        socio = float(rng.integers(1, 6))
        systolic = float(np.round(np.clip(rng.normal(122 + 4 * u, 8), 95, 180)))
        diastolic = float(np.round(np.clip(rng.normal(80 + 2 * u, 6), 60, 110)))

        steps = []
        q_lo, q_hi = (4, RULE_QUALITY_MAX) if quality_base <= RULE_QUALITY_MAX else (RULE_QUALITY_MAX + 1, 9)
        s_lo, s_hi = (RULE_STRESS_MIN, 8) if stress_base >= RULE_STRESS_MIN else (3, RULE_STRESS_MIN - 1)
        for _ in range(timesteps_per_subject):
            fv = FeatureVector(
                age=age,
                gender=gender,
                occupation=occupation,
                socioeconomic_indicator=socio,
                sleep_duration=float(np.round(np.clip(duration_base + rng.normal(0, 0.15), 5.8, 8.5), 2)),
                quality_of_sleep=_wobble_ordinal(rng, quality_base, 4, 9, q_lo, q_hi),
                stress_level=_wobble_ordinal(rng, stress_base, 3, 8, s_lo, s_hi),
                bmi_category=bmi,
                systolic_bp=systolic,
                diastolic_bp=diastolic,
                heart_rate=heart_rate,
                daily_steps=float(np.round(np.clip(rng.normal(7000 - 250 * u, 1800), 2000, 15000))),
                activity_raw_minutes=float(np.round(np.clip(activity_base + rng.normal(0, 4.0), 30, 90), 1)),
            )
            steps.append(fv)
        sequences.append(PatientSequence(f"S{i:05d}", steps, label))
    return sequences
