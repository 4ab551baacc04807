"""Explainable sequence classifiers for sleep-disorder prediction.

A small float64 tensor core with reverse-mode autodiff underpins three
architectures (gated recurrent, dilated-causal convolutional, and a
variable-selection encoder), trained on tabular-sequential health records
and explained through exact/sampled Shapley attributions, temporal
attention traces, and Wachter-style counterfactual search.
"""

from .autodiff import Tensor, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    LABELS,
    FeatureVector,
    NormalizationStats,
    PatientSequence,
    encode_features,
    parse_csv,
    preprocess,
    synth_generate,
    write_csv,
)
from .explain import (
    AttentionTrace,
    Counterfactual,
    CounterfactualConfig,
    ShapReport,
    attention_trace,
    counterfactual_search,
    shap_exact,
    shap_kernel,
    shap_timestep_summary,
)
from .models import (
    ModelCheckpoint,
    attention_forward,
    classifier_predict,
    init_checkpoint,
    lstm_cell_step,
    lstm_forward,
    predict_proba,
    tcn_forward,
    tft_variable_select,
)
from .training import (
    AugmentSpec,
    DatasetSplit,
    Metrics,
    TrainConfig,
    augment,
    evaluate,
    prepare_split,
    split_dataset,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward",
    "load_checkpoint", "save_checkpoint",
    "LABELS", "FeatureVector", "NormalizationStats", "PatientSequence",
    "encode_features", "parse_csv", "preprocess", "synth_generate", "write_csv",
    "AttentionTrace", "Counterfactual", "CounterfactualConfig", "ShapReport",
    "attention_trace", "counterfactual_search",
    "shap_exact", "shap_kernel", "shap_timestep_summary",
    "ModelCheckpoint", "attention_forward", "classifier_predict", "init_checkpoint",
    "lstm_cell_step", "lstm_forward", "predict_proba", "tcn_forward", "tft_variable_select",
    "AugmentSpec", "DatasetSplit", "Metrics", "TrainConfig",
    "augment", "evaluate", "prepare_split", "split_dataset", "train",
]
