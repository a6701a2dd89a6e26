"""Layer-wise federated self-supervised training."""

from ._lwfs import (
    Config,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    NumericError,
    PartitionError,
    alignment,
    allocate_rounds,
    comm_totals,
    gradcheck,
    infonce,
    load_checkpoint,
    partition_dirichlet,
    partition_uniform,
    run,
    schedule,
)

__all__ = [
    "Config",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "PartitionError",
    "alignment",
    "allocate_rounds",
    "comm_totals",
    "gradcheck",
    "infonce",
    "load_checkpoint",
    "partition_dirichlet",
    "partition_uniform",
    "run",
    "schedule",
]
