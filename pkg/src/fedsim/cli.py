"""Command-line entry point: validate a config, run experiments, export metrics.

A config is a JSON document; every key is named (nothing positional),
unknown keys are rejected with their full path so typos surface
immediately, and omitted keys take the documented defaults.  A run
directory is self-describing: its run.json echoes the fully resolved
configuration plus the seed actually used.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import (
    LabeledDataset,
    Partition,
    load_idx,
    partition_dirichlet,
    partition_iid,
    partition_shards,
    synthetic_blobs,
    train_test_split,
)
from .metrics import MetricsLog, export, summarize
from .orchestrator import (
    AlgorithmFlags,
    PRESET_NAMES,
    RunConfig,
    canonical_preset_name,
    preset_flags,
    run,
)
from .seeds import derive_rng
from .topology import generate_topology

__all__ = ["ConfigError", "ExperimentSpec", "parse_config", "run_experiment", "main"]

DATA_DIR_ENV = "FEDSIM_DATA_DIR"

MNIST_FILES = {
    "images": "train-images-idx3-ubyte",
    "labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


_DATASET_DEFAULTS = {
    "synthetic": {"num_classes": 10, "per_class": 120, "feature_dim": 32,
                  "spread": 1.0, "test_fraction": 0.25},
    "mnist": {"dir": None, "images": None, "labels": None,
              "test_images": None, "test_labels": None, "train_subset": None},
    "fashion_mnist": {"dir": None, "images": None, "labels": None,
                      "test_images": None, "test_labels": None, "train_subset": None},
}

_PARTITION_DEFAULTS = {
    "iid": {},
    "dirichlet": {"alpha": 0.1},
    "shards": {"classes_per_node": 2, "shard_size": 50},
}

_RUN_KEYS = ("rounds", "epochs_min", "epochs_max", "lr", "batch_size", "p_k", "d_k",
             "global_freq", "server_sample_q", "ch_gossip_steps", "noise", "hidden_layers")


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully validated experiment description with defaults resolved."""

    dataset: dict
    partition: dict
    nodes: int = 40
    clusters: int = 7
    gamma: float = 0.95
    upsilon: float = 0.1
    preset: str | None = None
    flags: AlgorithmFlags | None = None
    rounds: int = 30
    epochs_min: int = 1
    epochs_max: int = 2
    lr: float = 0.01
    batch_size: int = 32
    p_k: float = 0.9
    d_k: float = 0.9
    global_freq: int = 1
    server_sample_q: int | str = "all"
    ch_gossip_steps: int = 1
    noise: dict = field(default_factory=dict)
    hidden_layers: tuple[int, ...] = (128,)
    seed: int = 0
    repeats: int = 1
    output_dir: str = "runs/experiment"

    def run_config(self, seed: int) -> RunConfig:
        return RunConfig(
            flags=self.flags, preset=self.preset, rounds=self.rounds,
            epochs_min=self.epochs_min, epochs_max=self.epochs_max, lr=self.lr,
            batch_size=self.batch_size, p_k=self.p_k, d_k=self.d_k,
            global_freq=self.global_freq, server_sample_q=self.server_sample_q,
            ch_gossip_steps=self.ch_gossip_steps, noise=dict(self.noise),
            hidden_layers=self.hidden_layers, seed=seed,
        )

    def to_dict(self) -> dict:
        doc = {
            "dataset": dict(self.dataset),
            "partition": dict(self.partition),
            "nodes": self.nodes, "clusters": self.clusters,
            "gamma": self.gamma, "upsilon": self.upsilon,
            "rounds": self.rounds, "epochs_min": self.epochs_min,
            "epochs_max": self.epochs_max, "lr": self.lr,
            "batch_size": self.batch_size, "p_k": self.p_k, "d_k": self.d_k,
            "global_freq": self.global_freq, "server_sample_q": self.server_sample_q,
            "ch_gossip_steps": self.ch_gossip_steps, "noise": dict(self.noise),
            "hidden_layers": list(self.hidden_layers), "seed": self.seed,
            "repeats": self.repeats, "output_dir": self.output_dir,
        }
        if self.preset is not None:
            doc["preset"] = self.preset
        else:
            flags = self.flags
            doc["flags"] = {"device_agg": flags.device_agg, "edge_agg": flags.edge_agg,
                            "cluster_agg": flags.cluster_agg,
                            "inter_cluster_agg": flags.inter_cluster_agg}
        return doc


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{key}: {message}")


def _typed(doc: dict, key: str, kinds, default, path: str = ""):
    full = f"{path}{key}"
    value = doc.get(key, default)
    if value is None and default is None:
        return None
    if kinds is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kinds) or isinstance(value, bool) and kinds is not bool:
        raise ConfigError(f"{full}: expected {getattr(kinds, '__name__', kinds)}, got {value!r}")
    return value


def _check_unknown(doc: dict, allowed: set[str], path: str = "") -> None:
    unknown = set(doc) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown key '{path}{name}'")


def _parse_section(doc, name: str, defaults_table: dict[str, dict]) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{name}: expected an object with a 'kind' key")
    kind = doc.get("kind")
    if kind not in defaults_table:
        raise ConfigError(f"{name}.kind: expected one of {sorted(defaults_table)}, got {kind!r}")
    defaults = defaults_table[kind]
    _check_unknown(doc, {"kind", *defaults}, path=f"{name}.")
    out = {"kind": kind}
    for key, default in defaults.items():
        out[key] = doc.get(key, default)
    return out


def parse_config(path: str | Path) -> ExperimentSpec:
    """Read and validate a JSON experiment config, filling defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")

    allowed = {"dataset", "partition", "nodes", "clusters", "gamma", "upsilon",
               "preset", "flags", "seed", "repeats", "output_dir", *_RUN_KEYS}
    _check_unknown(doc, allowed)

    dataset = _parse_section(doc.get("dataset", {"kind": "synthetic"}), "dataset",
                             _DATASET_DEFAULTS)
    partition = _parse_section(doc.get("partition", {"kind": "dirichlet"}), "partition",
                               _PARTITION_DEFAULTS)

    nodes = _typed(doc, "nodes", int, 40)
    clusters = _typed(doc, "clusters", int, 7)
    gamma = _typed(doc, "gamma", float, 0.95)
    upsilon = _typed(doc, "upsilon", float, 0.1)
    _require(nodes >= 1, "nodes", "must be positive")
    _require(1 <= clusters <= nodes, "clusters", f"must lie in [1, nodes={nodes}]")
    _require(0.0 < gamma < 1.0, "gamma", f"must lie in (0, 1), got {gamma}")
    _require(0.0 < upsilon <= gamma, "upsilon", f"must lie in (0, gamma={gamma}], got {upsilon}")

    preset = doc.get("preset")
    flags_doc = doc.get("flags")
    if preset is not None and flags_doc is not None:
        raise ConfigError("preset: give either a preset or custom flags, not both")
    flags = None
    if flags_doc is not None:
        _check_unknown(flags_doc, {"device_agg", "edge_agg", "cluster_agg",
                                   "inter_cluster_agg"}, path="flags.")
        try:
            flags = AlgorithmFlags(
                device_agg=flags_doc.get("device_agg"),
                edge_agg=bool(flags_doc.get("edge_agg", False)),
                cluster_agg=bool(flags_doc.get("cluster_agg", False)),
                inter_cluster_agg=bool(flags_doc.get("inter_cluster_agg", False)),
            )
        except ValueError as err:
            raise ConfigError(f"flags: {err}") from err
    elif preset is None:
        preset = "FedAvg"
    if preset is not None:
        try:
            preset = canonical_preset_name(preset)
        except ValueError as err:
            raise ConfigError(f"preset: {err}") from err

    noise = doc.get("noise", {})
    if not isinstance(noise, dict):
        raise ConfigError("noise: expected an object mapping link class to variance")
    _check_unknown(noise, {"d2d", "d2e", "e2c"}, path="noise.")
    for link, variance in noise.items():
        _require(isinstance(variance, (int, float)) and variance >= 0,
                 f"noise.{link}", f"variance must be a non-negative number, got {variance!r}")

    hidden = doc.get("hidden_layers", [128])
    if not isinstance(hidden, list) or not all(isinstance(h, int) and h > 0 for h in hidden):
        raise ConfigError("hidden_layers: expected a list of positive integers")

    repeats = _typed(doc, "repeats", int, 1)
    _require(repeats >= 1, "repeats", "must be >= 1")

    spec = ExperimentSpec(
        dataset=dataset, partition=partition, nodes=nodes, clusters=clusters,
        gamma=gamma, upsilon=upsilon, preset=preset, flags=flags,
        rounds=_typed(doc, "rounds", int, 30),
        epochs_min=_typed(doc, "epochs_min", int, 1),
        epochs_max=_typed(doc, "epochs_max", int, 2),
        lr=_typed(doc, "lr", float, 0.01),
        batch_size=_typed(doc, "batch_size", int, 32),
        p_k=_typed(doc, "p_k", float, 0.9),
        d_k=_typed(doc, "d_k", float, 0.9),
        global_freq=_typed(doc, "global_freq", int, 1),
        server_sample_q=doc.get("server_sample_q", "all"),
        ch_gossip_steps=_typed(doc, "ch_gossip_steps", int, 1),
        noise={link: float(v) for link, v in noise.items()},
        hidden_layers=tuple(hidden),
        seed=_typed(doc, "seed", int, 0),
        repeats=repeats,
        output_dir=_typed(doc, "output_dir", str, "runs/experiment"),
    )
    try:
        spec.run_config(spec.seed)  # surface RunConfig range errors with config context
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return spec


def _resolve_idx_path(dataset: dict, key: str, kind: str) -> Path:
    if dataset.get(key):
        return Path(dataset[key])
    base = dataset.get("dir") or os.environ.get(DATA_DIR_ENV)
    if base is None:
        raise ConfigError(
            f"dataset.{key}: no path given and {DATA_DIR_ENV} is unset"
        )
    base = Path(base)
    if kind == "fashion_mnist":
        base = base / "fashion"
    candidate = base / MNIST_FILES[key]
    if not candidate.exists() and candidate.with_suffix(".gz").exists():
        candidate = candidate.with_suffix(".gz")
    return candidate


def load_dataset(spec: ExperimentSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Materialize (train, test) from the experiment's dataset section."""
    dataset = spec.dataset
    if dataset["kind"] == "synthetic":
        per_class = dataset["per_class"]
        test_fraction = dataset["test_fraction"]
        full = synthetic_blobs(dataset["num_classes"], per_class, dataset["feature_dim"],
                               dataset["spread"], seed=spec.seed)
        return train_test_split(full, test_fraction, seed=spec.seed)
    train = load_idx(str(_resolve_idx_path(dataset, "images", dataset["kind"])),
                     str(_resolve_idx_path(dataset, "labels", dataset["kind"])))
    test_full = load_idx(str(_resolve_idx_path(dataset, "test_images", dataset["kind"])),
                         str(_resolve_idx_path(dataset, "test_labels", dataset["kind"])))
    test = LabeledDataset(test_full.features, test_full.labels, test_full.num_classes, "test")
    subset = dataset.get("train_subset")
    if subset:
        order = derive_rng(spec.seed, "train-subset").permutation(len(train))[:subset]
        train = train.subset(np.sort(order))
    return train, test


def build_partition(spec: ExperimentSpec, train: LabeledDataset, seed: int) -> Partition:
    part = spec.partition
    if part["kind"] == "iid":
        return partition_iid(train, spec.nodes, seed)
    if part["kind"] == "dirichlet":
        return partition_dirichlet(train, spec.nodes, part["alpha"], seed)
    return partition_shards(train, spec.nodes, part["classes_per_node"],
                            part["shard_size"], seed)


def _write_summary(out_dir: Path, logs: list[MetricsLog]) -> None:
    """Aggregate across repeats: per round, mean/std of the node-mean accuracy."""
    per_run = [summarize(log) for log in logs]
    rounds = [row.round_index for row in per_run[0]]
    lines = ["round,mean_accuracy,std_accuracy,cum_d2d,cum_d2e,cum_e2c"]
    for i, round_index in enumerate(rounds):
        means = np.array([rows[i].mean_accuracy for rows in per_run])
        comm = {name: float(np.mean([getattr(rows[i], f"cum_{name}") for rows in per_run]))
                for name in ("d2d", "d2e", "e2c")}
        lines.append(f"{round_index},{float(means.mean())!r},{float(means.std())!r},"
                     f"{comm['d2d']!r},{comm['d2e']!r},{comm['e2c']!r}")
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_experiment(spec: ExperimentSpec) -> int:
    """Execute spec.repeats runs (seeds base, base+1, ...) and aggregate.

    Each run writes its own subdirectory; a partial run leaves an
    INCOMPLETE marker behind.  Returns a process exit status.
    """
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    top_marker = out_dir / "INCOMPLETE"
    top_marker.write_text("experiment in progress\n", encoding="utf-8")

    try:
        train, test = load_dataset(spec)
    except (ConfigError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    logs: list[MetricsLog] = []
    for i in range(spec.repeats):
        seed = spec.seed + i
        run_dir = out_dir / f"run_{i:02d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        marker = run_dir / "INCOMPLETE"
        marker.write_text("run in progress\n", encoding="utf-8")
        try:
            topo = generate_topology(spec.nodes, spec.clusters, spec.gamma, spec.upsilon,
                                     seed, require_reachable=True)
            part = build_partition(spec, train, seed)
            log = run(spec.run_config(seed), topo, part, train, test,
                      run_meta={"experiment": spec.to_dict(), "run_seed": seed,
                                "run_index": i, "preset": spec.preset})
            export(log, run_dir)
            (run_dir / "topology.json").write_text(topo.to_json() + "\n", encoding="utf-8")
            (run_dir / "partition.json").write_text(part.to_json() + "\n", encoding="utf-8")
        except Exception as err:  # marker stays behind for forensics
            print(f"error in run {i} (seed {seed}): {err}", file=sys.stderr)
            return 1
        marker.unlink()
        logs.append(log)

    _write_summary(out_dir, logs)
    top_marker.unlink()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Simulate federated learning algorithms over clustered edge networks.",
    )
    parser.add_argument("--list-presets", action="store_true",
                        help="print the built-in algorithm presets and exit")
    sub = parser.add_subparsers(dest="command")
    run_parser = sub.add_parser("run", help="run the experiment described by a config file")
    run_parser.add_argument("config", help="path to a JSON experiment config")
    run_parser.add_argument("--output-dir", help="override the config's output directory")
    run_parser.add_argument("--seed", type=int, help="override the config's base seed")
    run_parser.add_argument("--preset", help="override the config's algorithm preset")

    args = parser.parse_args(argv)
    if args.list_presets:
        for name in PRESET_NAMES:
            flags = preset_flags(name)
            print(f"{name}: device={flags.device_agg or 'none'} edge={flags.edge_agg} "
                  f"cluster={flags.cluster_agg} inter_cluster={flags.inter_cluster_agg}")
        return 0
    if args.command != "run":
        parser.print_help()
        return 2

    try:
        spec = parse_config(args.config)
        overrides = {}
        if args.output_dir is not None:
            overrides["output_dir"] = args.output_dir
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.preset is not None:
            overrides["preset"] = canonical_preset_name(args.preset)
            overrides["flags"] = None
        if overrides:
            from dataclasses import replace
            spec = replace(spec, **overrides)
            spec.run_config(spec.seed)  # re-validate after overrides
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return run_experiment(spec)


if __name__ == "__main__":
    sys.exit(main())
