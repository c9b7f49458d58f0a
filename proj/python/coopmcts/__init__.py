"""Cooperative multi-agent MCTS with learned Gaussian-mixture priors."""

from ._core import (
    ChecksumError,
    ConfigError,
    DegenerateInputError,
    Error,
    Gmm1D,
    MdnWeights,
    OffsetError,
    ParseError,
    RandomizationError,
    Scenario,
    ShapeError,
    TruncationError,
    VersionError,
    classify_action,
    conv2d_reflect,
    evaluate,
    features,
    fit_dataset_labels,
    fit_em,
    generate_dataset,
    nnelu,
    plan,
    read_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
