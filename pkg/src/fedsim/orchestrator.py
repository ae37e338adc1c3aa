"""Flag-driven round engine composing the federated learning algorithms.

Four flags select what happens after local training each round: a device
aggregation mode (neighborhood D2D, random gossip pairing, or a central
server), optional edge-server aggregation, optional cluster-head
aggregation, and optional inter-cluster head gossip.  The ten named
presets are rows of that flag table; a round always applies the phases
in the fixed order device -> cluster -> inter-cluster -> edge, then
evaluates every node on the test set.

All randomness is drawn from streams keyed by (run seed, round, node,
purpose), so runs are bit-for-bit reproducible and independent of any
execution order within a phase.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .aggregation import (
    NoiseModel,
    participates,
    size_weights,
    transmit,
    uniform_weights,
    weighted_average,
)
from .datasets import LabeledDataset, Partition
from .learner import (
    Architecture,
    ModelParams,
    evaluate,
    init_model,
    local_update,
    params_from_bytes,
    params_to_bytes,
)
from .metrics import MetricsLog
from .seeds import derive_int, derive_rng
from .topology import Topology

__all__ = [
    "AlgorithmFlags",
    "RunConfig",
    "SimulationState",
    "PRESET_NAMES",
    "preset_flags",
    "canonical_preset_name",
    "run",
    "device_phase",
    "cluster_phase",
    "inter_cluster_phase",
    "edge_phase",
    "save_checkpoint",
    "load_checkpoint",
]

DEVICE_MODES = (None, "d2d", "random", "cserver")


@dataclass(frozen=True)
class AlgorithmFlags:
    """The four-flag tuple selecting an FL algorithm."""

    device_agg: str | None = None     # None | "d2d" | "random" | "cserver"
    edge_agg: bool = False
    cluster_agg: bool = False
    inter_cluster_agg: bool = False

    def __post_init__(self) -> None:
        if self.device_agg not in DEVICE_MODES:
            raise ValueError(f"device_agg must be one of {DEVICE_MODES}, got {self.device_agg!r}")
        if self.inter_cluster_agg and not self.cluster_agg:
            raise ValueError("inter-cluster aggregation requires cluster aggregation")
        if self.device_agg == "cserver" and (self.edge_agg or self.cluster_agg):
            raise ValueError("the central-server mode excludes edge and cluster aggregation")


_PRESETS: dict[str, AlgorithmFlags] = {
    "FedAvg": AlgorithmFlags("cserver", False, False, False),
    "HFL": AlgorithmFlags(None, True, False, False),
    "D2DFL": AlgorithmFlags("d2d", False, False, False),
    "GFL": AlgorithmFlags("random", False, False, False),
    "HD2DFL": AlgorithmFlags("d2d", True, False, False),
    "HGFL": AlgorithmFlags("random", True, False, False),
    "CFL": AlgorithmFlags(None, False, True, False),
    "iCFL": AlgorithmFlags(None, False, True, True),
    "CD2DFL": AlgorithmFlags("d2d", False, True, False),
    "iCD2DFL": AlgorithmFlags("d2d", False, True, True),
}

PRESET_NAMES = tuple(_PRESETS)


def canonical_preset_name(name: str) -> str:
    """Resolve a preset name case-insensitively to its canonical spelling."""
    lowered = name.lower()
    for canonical in _PRESETS:
        if canonical.lower() == lowered:
            return canonical
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


def preset_flags(name: str) -> AlgorithmFlags:
    """Flag settings for a named algorithm preset."""
    return _PRESETS[canonical_preset_name(name)]


@dataclass(frozen=True)
class RunConfig:
    """Everything one simulation run needs besides topology and data."""

    flags: AlgorithmFlags | None = None
    preset: str | None = None
    rounds: int = 30
    epochs_min: int = 1
    epochs_max: int = 2
    lr: float = 0.01
    batch_size: int = 32
    p_k: float = 0.9               # server-participation probability
    d_k: float = 0.9               # neighborhood-participation probability
    global_freq: int = 1           # rounds between global (cloud) aggregations
    server_sample_q: int | str = "all"
    ch_gossip_steps: int = 1       # inter-cluster gossip steps per round
    noise: dict[str, float] = field(default_factory=dict)  # link -> variance
    hidden_layers: tuple[int, ...] = (128,)
    seed: int = 0

    def __post_init__(self) -> None:
        flags = self.flags
        if self.preset is not None:
            canonical = canonical_preset_name(self.preset)
            preset = _PRESETS[canonical]
            if flags is not None and flags != preset:
                raise ValueError(f"flags {flags} contradict preset {canonical}")
            object.__setattr__(self, "preset", canonical)
            flags = preset
        if flags is None:
            raise ValueError("either flags or a preset name is required")
        object.__setattr__(self, "flags", flags)
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        if not 1 <= self.epochs_min <= self.epochs_max:
            raise ValueError("need 1 <= epochs_min <= epochs_max")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        for name, prob in (("p_k", self.p_k), ("d_k", self.d_k)):
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.global_freq < 1:
            raise ValueError("global_freq must be positive")
        if self.ch_gossip_steps < 1:
            raise ValueError("ch_gossip_steps must be positive")
        if self.server_sample_q != "all" and (
            not isinstance(self.server_sample_q, int) or self.server_sample_q < 1
        ):
            raise ValueError('server_sample_q must be a positive integer or "all"')
        unknown = set(self.noise) - {"d2d", "d2e", "e2c"}
        if unknown:
            raise ValueError(f"unknown noise link classes: {sorted(unknown)}")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))

    def noise_for(self, link: str) -> NoiseModel:
        return NoiseModel(self.noise.get(link, 0.0))

    def to_meta(self) -> dict:
        meta = asdict(self)
        meta["flags"] = asdict(self.flags)
        meta["hidden_layers"] = list(self.hidden_layers)
        return meta


@dataclass
class SimulationState:
    """Mutable model state threaded through the phases of a run."""

    node_models: dict[int, ModelParams]
    server_models: dict[int, ModelParams]
    global_model: ModelParams
    round_index: int = 0

    def arch(self) -> Architecture:
        return self.global_model.arch


def _cloud_id(topo: Topology) -> int:
    return topo.node_count + topo.cluster_count


def _server_id(topo: Topology, cluster: int) -> int:
    return topo.node_count + cluster


def run(cfg: RunConfig, topo: Topology, part: Partition, train: LabeledDataset,
        test: LabeledDataset, run_meta: dict | None = None,
        on_round=None) -> MetricsLog:
    """Execute cfg.rounds rounds and return the populated metrics log.

    Each round: every node draws its epoch count in [epochs_min,
    epochs_max] and trains locally, the enabled aggregation phases fire in
    fixed order, and every node is scored on the test set.  ``on_round``,
    if given, observes the SimulationState after each round's evaluation
    (used for checkpointing and state inspection; it must not mutate).
    """
    expected = set(range(topo.node_count))
    if set(part.assignments) != expected:
        raise ValueError("partition must cover exactly the topology's nodes")

    arch = Architecture((train.feature_dim, *cfg.hidden_layers, train.num_classes))
    theta0 = init_model(arch, cfg.seed)
    state = SimulationState(
        node_models={k: theta0 for k in range(topo.node_count)},
        server_models={s: theta0 for s in range(topo.cluster_count)},
        global_model=theta0,
    )

    meta = {"config": cfg.to_meta(), "topology_hash": topo.content_hash(),
            "train_size": len(train), "test_size": len(test)}
    if run_meta:
        meta.update(run_meta)
    log = MetricsLog(run_meta=meta)

    sizes = part.sizes()
    node_data = {k: (train.features[idx], train.labels[idx])
                 for k, idx in part.assignments.items()}
    flags = cfg.flags

    for round_index in range(cfg.rounds):
        state.round_index = round_index
        for k in range(topo.node_count):
            epochs = int(derive_rng(cfg.seed, "epochs", round_index, k)
                         .integers(cfg.epochs_min, cfg.epochs_max + 1))
            x, y = node_data[k]
            state.node_models[k] = local_update(
                state.node_models[k], x, y, cfg.lr, epochs, cfg.batch_size,
                seed=derive_int(cfg.seed, "local", round_index, k),
            )
        if flags.device_agg is not None:
            device_phase(state, cfg, topo, sizes, log)
        if flags.cluster_agg:
            cluster_phase(state, cfg, topo, log)
        if flags.inter_cluster_agg:
            inter_cluster_phase(state, cfg, topo, log)
        if flags.edge_agg:
            edge_phase(state, cfg, topo, sizes, log)
        _evaluate_round(state, test, log)
        if on_round is not None:
            on_round(state)
    return log


def _evaluate_round(state: SimulationState, test: LabeledDataset, log: MetricsLog) -> None:
    # identical parameter vectors (common after a broadcast) are scored once
    cache: dict[bytes, tuple[float, float]] = {}
    for k in sorted(state.node_models):
        model = state.node_models[k]
        digest = hashlib.md5(model.values.tobytes()).digest()
        if digest not in cache:
            cache[digest] = evaluate(model, test)
        accuracy, loss = cache[digest]
        log.record_eval(state.round_index, k, accuracy, loss)


def device_phase(state: SimulationState, cfg: RunConfig, topo: Topology,
                 sizes: dict[int, int], log: MetricsLog) -> SimulationState:
    """Device-level aggregation in one of the three modes.

    d2d:     every participating sender pushes its model to all 1-hop
             neighbors; each node then averages {self} + received uniformly.
    random:  participating nodes are matched into random exclusive pairs;
             each pair swaps models and both take the equal-weight mean.
    cserver: participants upload to the global server (D2E then E2C legs),
             which averages with dataset-size weights and pushes the result
             back to every node (E2C then D2E legs).
    """
    mode = cfg.flags.device_agg
    r = state.round_index
    if mode == "d2d":
        senders = [k for k in range(topo.node_count)
                   if participates(cfg.d_k, seed=cfg.seed, round_index=r, node=k, kind="d2d")]
        inbox: dict[int, dict[int, ModelParams]] = {k: {} for k in range(topo.node_count)}
        for k in senders:
            for j in sorted(np.flatnonzero(topo.adjacency[k])):
                inbox[int(j)][k] = transmit(
                    state.node_models[k], cfg.noise_for("d2d"), "d2d", log,
                    seed=cfg.seed, round_index=r, sender=k, receiver=int(j),
                )
        fresh = {}
        for k in range(topo.node_count):
            contributions = {k: state.node_models[k], **inbox[k]}
            fresh[k] = weighted_average(contributions, uniform_weights(list(contributions)))
        state.node_models = fresh
    elif mode == "random":
        members = [k for k in range(topo.node_count)
                   if participates(cfg.d_k, seed=cfg.seed, round_index=r, node=k, kind="gossip")]
        order = derive_rng(cfg.seed, "gossip-pairs", r).permutation(len(members))
        shuffled = [members[i] for i in order]
        for a, b in zip(shuffled[0::2], shuffled[1::2]):  # odd node out sits this round out
            recv_b = transmit(state.node_models[a], cfg.noise_for("d2d"), "d2d", log,
                              seed=cfg.seed, round_index=r, sender=a, receiver=b)
            recv_a = transmit(state.node_models[b], cfg.noise_for("d2d"), "d2d", log,
                              seed=cfg.seed, round_index=r, sender=b, receiver=a)
            half = uniform_weights([a, b])
            state.node_models[a] = weighted_average({a: state.node_models[a], b: recv_a}, half)
            state.node_models[b] = weighted_average({a: recv_b, b: state.node_models[b]}, half)
    elif mode == "cserver":
        cloud = _cloud_id(topo)
        received: dict[int, ModelParams] = {}
        for k in range(topo.node_count):
            if not participates(cfg.p_k, seed=cfg.seed, round_index=r, node=k, kind="cserver"):
                continue
            hop = transmit(state.node_models[k], cfg.noise_for("d2e"), "d2e", log,
                           seed=cfg.seed, round_index=r, sender=k,
                           receiver=_server_id(topo, int(topo.edge_server_of[k])))
            received[k] = transmit(hop, cfg.noise_for("e2c"), "e2c", log,
                                   seed=cfg.seed, round_index=r, sender=k, receiver=cloud)
        if received:
            weights = size_weights({k: sizes[k] for k in received})
            state.global_model = weighted_average(received, weights)
        for k in range(topo.node_count):
            hop = transmit(state.global_model, cfg.noise_for("e2c"), "e2c", log,
                           seed=cfg.seed, round_index=r, sender=cloud, receiver=k)
            state.node_models[k] = transmit(
                hop, cfg.noise_for("d2e"), "d2e", log, seed=cfg.seed, round_index=r,
                sender=_server_id(topo, int(topo.edge_server_of[k])), receiver=k,
            )
    else:
        raise ValueError(f"device_phase called with device_agg={mode!r}")
    return state


def cluster_phase(state: SimulationState, cfg: RunConfig, topo: Topology,
                  log: MetricsLog) -> SimulationState:
    """Members push models to their cluster head; the head averages and broadcasts."""
    r = state.round_index
    for cluster in range(topo.cluster_count):
        head = topo.cluster_heads[cluster]
        members = [k for k in topo.members(cluster) if k != head]
        received: dict[int, ModelParams] = {}
        for k in members:
            if participates(cfg.d_k, seed=cfg.seed, round_index=r, node=k, kind="cluster"):
                received[k] = transmit(state.node_models[k], cfg.noise_for("d2d"), "d2d", log,
                                       seed=cfg.seed, round_index=r, sender=k, receiver=head)
        contributions = {head: state.node_models[head], **received}
        merged = weighted_average(contributions, uniform_weights(list(contributions)))
        state.node_models[head] = merged
        for k in members:
            state.node_models[k] = transmit(merged, cfg.noise_for("d2d"), "d2d", log,
                                            seed=cfg.seed, round_index=r, sender=head, receiver=k)
    return state


def inter_cluster_phase(state: SimulationState, cfg: RunConfig, topo: Topology,
                        log: MetricsLog) -> SimulationState:
    """Cluster heads gossip their cluster models pairwise, then re-broadcast."""
    if topo.cluster_count < 2:
        return state
    r = state.round_index
    heads = list(topo.cluster_heads)
    for step in range(cfg.ch_gossip_steps):
        order = derive_rng(cfg.seed, "head-gossip", r, step).permutation(len(heads))
        shuffled = [heads[i] for i in order]
        for a, b in zip(shuffled[0::2], shuffled[1::2]):
            recv_b = transmit(state.node_models[a], cfg.noise_for("d2d"), "d2d", log,
                              seed=cfg.seed, round_index=r, sender=a, receiver=b)
            recv_a = transmit(state.node_models[b], cfg.noise_for("d2d"), "d2d", log,
                              seed=cfg.seed, round_index=r, sender=b, receiver=a)
            half = uniform_weights([a, b])
            state.node_models[a] = weighted_average({a: state.node_models[a], b: recv_a}, half)
            state.node_models[b] = weighted_average({a: recv_b, b: state.node_models[b]}, half)
    for cluster in range(topo.cluster_count):
        head = topo.cluster_heads[cluster]
        for k in topo.members(cluster):
            if k != head:
                state.node_models[k] = transmit(
                    state.node_models[head], cfg.noise_for("d2d"), "d2d", log,
                    seed=cfg.seed, round_index=r, sender=head, receiver=k,
                )
    return state


def edge_phase(state: SimulationState, cfg: RunConfig, topo: Topology,
               sizes: dict[int, int], log: MetricsLog) -> SimulationState:
    """Edge servers pull attached nodes' models; every f-th round the cloud
    aggregates the servers and the result is pushed back down to all nodes."""
    r = state.round_index
    cloud = _cloud_id(topo)
    for cluster in range(topo.cluster_count):
        attached = topo.members(cluster)
        if cfg.server_sample_q == "all":
            sampled = [k for k in attached
                       if participates(cfg.p_k, seed=cfg.seed, round_index=r, node=k, kind="edge")]
        else:
            q = min(cfg.server_sample_q, len(attached))
            picks = derive_rng(cfg.seed, "server-sample", r, cluster).choice(
                len(attached), size=q, replace=False)
            sampled = sorted(attached[i] for i in picks)
        received: dict[int, ModelParams] = {}
        for k in sampled:
            received[k] = transmit(state.node_models[k], cfg.noise_for("d2e"), "d2e", log,
                                   seed=cfg.seed, round_index=r, sender=k,
                                   receiver=_server_id(topo, cluster))
        if received:
            state.server_models[cluster] = weighted_average(
                received, size_weights({k: sizes[k] for k in received}))

    if (r + 1) % cfg.global_freq == 0:
        uploads: dict[int, ModelParams] = {}
        volumes: dict[int, int] = {}
        for cluster in range(topo.cluster_count):
            uploads[cluster] = transmit(state.server_models[cluster], cfg.noise_for("e2c"),
                                        "e2c", log, seed=cfg.seed, round_index=r,
                                        sender=_server_id(topo, cluster), receiver=cloud)
            volumes[cluster] = sum(sizes[k] for k in topo.members(cluster))
        state.global_model = weighted_average(uploads, size_weights(volumes))
        for cluster in range(topo.cluster_count):
            down = transmit(state.global_model, cfg.noise_for("e2c"), "e2c", log,
                            seed=cfg.seed, round_index=r, sender=cloud,
                            receiver=_server_id(topo, cluster))
            state.server_models[cluster] = down
            for k in topo.members(cluster):
                state.node_models[k] = transmit(down, cfg.noise_for("d2e"), "d2e", log,
                                                seed=cfg.seed, round_index=r,
                                                sender=_server_id(topo, cluster), receiver=k)
    return state


def save_checkpoint(state: SimulationState, directory: str | Path) -> None:
    """Write every model as a flat binary vector with an architecture header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, model in state.node_models.items():
        (directory / f"node_{k:04d}.bin").write_bytes(params_to_bytes(model))
    for s, model in state.server_models.items():
        (directory / f"server_{s:04d}.bin").write_bytes(params_to_bytes(model))
    (directory / "global.bin").write_bytes(params_to_bytes(state.global_model))
    (directory / "state.json").write_text(
        json.dumps({"round_index": state.round_index}) + "\n", encoding="utf-8")


def load_checkpoint(directory: str | Path) -> SimulationState:
    directory = Path(directory)
    node_models = {int(path.stem.split("_")[1]): params_from_bytes(path.read_bytes())
                   for path in sorted(directory.glob("node_*.bin"))}
    server_models = {int(path.stem.split("_")[1]): params_from_bytes(path.read_bytes())
                     for path in sorted(directory.glob("server_*.bin"))}
    global_model = params_from_bytes((directory / "global.bin").read_bytes())
    round_index = json.loads((directory / "state.json").read_text())["round_index"]
    return SimulationState(node_models, server_models, global_model, round_index)
