"""Group-involution presentation attack detection: Python bindings."""

from ._core import (
    ConfigError,
    DataError,
    Model,
    UndefinedMetricError,
    anisotropy,
    auc,
    conv2d,
    eer,
    evaluate,
    group_involution,
    group_involution_backward,
    hf_lf_ratio,
    hter,
    involution,
    make_divisible,
    run_cli,
    synth_patch,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "UndefinedMetricError",
    "anisotropy",
    "auc",
    "conv2d",
    "eer",
    "evaluate",
    "group_involution",
    "group_involution_backward",
    "hf_lf_ratio",
    "hter",
    "involution",
    "make_divisible",
    "run_cli",
    "synth_patch",
]
