"""Condition-invariant speaker embeddings trained with gradient reversal."""

from ._core import (
    ConfigError,
    DataError,
    Model,
    NumericError,
    ShapeError,
    StateError,
    __version__,
    add_deltas,
    apply_cmvn,
    compute_eer,
    cosine_score,
    extract_features,
    fit_cmvn,
    gen_toy_dataset,
    grl_backward,
    load_model,
    log_mel_fbank,
    mix_at_snr,
    probe,
    snr_gain,
    splice,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "NumericError",
    "ShapeError",
    "StateError",
    "__version__",
    "add_deltas",
    "apply_cmvn",
    "compute_eer",
    "cosine_score",
    "extract_features",
    "fit_cmvn",
    "gen_toy_dataset",
    "grl_backward",
    "load_model",
    "log_mel_fbank",
    "mix_at_snr",
    "probe",
    "snr_gain",
    "splice",
    "train",
]
