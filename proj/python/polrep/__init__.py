"""Context-set policy representations: thin wrapper over the C++ core."""

from ._core import (
    Bundle,
    CoreError,
    Dataset,
    EnvConfig,
    SteerOptions,
    SteinTarget,
    TrainConfig,
    build_dataset,
    cf_estimate,
    cf_weights,
    load_bundle,
    load_dataset,
    mix_seed,
    save_bundle,
    save_dataset,
    spearman,
    stein_kernel,
    train,
)

__all__ = [
    "Bundle",
    "CoreError",
    "Dataset",
    "EnvConfig",
    "SteerOptions",
    "SteinTarget",
    "TrainConfig",
    "build_dataset",
    "cf_estimate",
    "cf_weights",
    "load_bundle",
    "load_dataset",
    "mix_seed",
    "save_bundle",
    "save_dataset",
    "spearman",
    "stein_kernel",
    "train",
]
