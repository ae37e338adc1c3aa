"""fedsim: deterministic multi-algorithm federated learning simulator.

Composes ten FL algorithms (FedAvg, HFL, D2DFL, GFL, HD2DFL, HGFL, CFL,
iCFL, CD2DFL, iCD2DFL) from four aggregation flags, runs them over a
generated clustered edge topology with configurable label skew,
participation, channel noise, and asynchronous local work, and records
per-round accuracy plus per-link-type communication volume.
"""

from .aggregation import (
    AggregationWeights,
    NoiseModel,
    gradient_aggregate,
    participates,
    size_weights,
    transmit,
    uniform_weights,
    weighted_average,
)
from .datasets import (
    IdxFormatError,
    LabeledDataset,
    Partition,
    load_idx,
    partition_dirichlet,
    partition_iid,
    partition_shards,
    synthetic_blobs,
    train_test_split,
)
from .learner import (
    Architecture,
    Minibatch,
    ModelParams,
    NumericError,
    evaluate,
    init_model,
    local_update,
    loss_and_grad,
    params_from_bytes,
    params_to_bytes,
)
from .metrics import MetricsLog, SummaryRow, export, summarize
from .orchestrator import (
    AlgorithmFlags,
    PRESET_NAMES,
    RunConfig,
    SimulationState,
    canonical_preset_name,
    preset_flags,
    run,
)
from .topology import Topology, generate_topology, is_reachable, neighbors

__version__ = "0.1.0"

__all__ = [
    "AggregationWeights", "NoiseModel", "gradient_aggregate", "participates",
    "size_weights", "transmit", "uniform_weights", "weighted_average",
    "IdxFormatError", "LabeledDataset", "Partition", "load_idx",
    "partition_dirichlet", "partition_iid", "partition_shards",
    "synthetic_blobs", "train_test_split",
    "Architecture", "Minibatch", "ModelParams", "NumericError", "evaluate",
    "init_model", "local_update", "loss_and_grad", "params_from_bytes",
    "params_to_bytes",
    "MetricsLog", "SummaryRow", "export", "summarize",
    "AlgorithmFlags", "PRESET_NAMES", "RunConfig", "SimulationState",
    "canonical_preset_name", "preset_flags", "run",
    "Topology", "generate_topology", "is_reachable", "neighbors",
]
