"""Labeled datasets and node partitioning schemes.

Covers the IDX container format used by the MNIST family, a synthetic
Gaussian-blob generator for fast tests, and three ways of splitting a
dataset across nodes: IID, Dirichlet label skew, and the extreme
fixed-shard scheme where every node sees only 2-3 classes.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass

import numpy as np

from .seeds import derive_rng

__all__ = [
    "LabeledDataset",
    "Partition",
    "IdxFormatError",
    "load_idx",
    "synthetic_blobs",
    "train_test_split",
    "partition_iid",
    "partition_dirichlet",
    "partition_shards",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised for malformed IDX files (bad magic, truncation, count mismatch)."""


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix plus integer class labels."""

    features: np.ndarray      # (n_samples, feature_dim) float64 in [0, 1] for images
    labels: np.ndarray        # (n_samples,) int64 in [0, num_classes)
    num_classes: int
    split_tag: str = "train"  # "train" | "test"

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if feats.shape[0] != labs.shape[0]:
            raise ValueError(f"{feats.shape[0]} feature rows but {labs.shape[0]} labels")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[indices], self.labels[indices],
                              self.num_classes, self.split_tag)


@dataclass(frozen=True)
class Partition:
    """Disjoint sample-index lists, one per node."""

    assignments: dict[int, np.ndarray]
    source_size: int

    def __post_init__(self) -> None:
        seen: set[int] = set()
        clean: dict[int, np.ndarray] = {}
        for node, idx in self.assignments.items():
            arr = np.asarray(idx, dtype=np.int64)
            if arr.size == 0:
                raise ValueError(f"node {node} has no samples")
            if arr.min() < 0 or arr.max() >= self.source_size:
                raise ValueError(f"node {node} has out-of-range sample indices")
            as_set = set(arr.tolist())
            if len(as_set) != arr.size or as_set & seen:
                raise ValueError("sample index lists must be pairwise disjoint")
            seen |= as_set
            clean[node] = arr
        object.__setattr__(self, "assignments", clean)

    def sizes(self) -> dict[int, int]:
        return {node: int(idx.size) for node, idx in self.assignments.items()}

    def to_json(self) -> str:
        doc = {
            "source_size": self.source_size,
            "assignments": {str(node): idx.tolist() for node, idx in sorted(self.assignments.items())},
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        doc = json.loads(text)
        return cls(
            assignments={int(node): np.asarray(idx, dtype=np.int64)
                         for node, idx in doc["assignments"].items()},
            source_size=doc["source_size"],
        )


def _read_maybe_gzipped(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _read_idx_header(raw: bytes, path: str, expected_magic: int, n_dims: int) -> tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    fields = struct.unpack(f">{1 + n_dims}I", raw[:header_len])
    if fields[0] != expected_magic:
        raise IdxFormatError(
            f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{expected_magic:08x}"
        )
    return fields[1:]


def load_idx(path_images: str, path_labels: str) -> LabeledDataset:
    """Parse a big-endian IDX image/label file pair (the MNIST container).

    Pixels are scaled by 1/255 into [0, 1].  Gzipped files are handled
    transparently (the published MNIST archives are .gz).  Bad magic
    numbers, truncated payloads, and image/label count mismatches each
    raise IdxFormatError with a distinct message.
    """
    raw_images = _read_maybe_gzipped(path_images)
    raw_labels = _read_maybe_gzipped(path_labels)

    n_img, rows, cols = _read_idx_header(raw_images, str(path_images), IDX_IMAGES_MAGIC, 3)
    (n_lab,) = _read_idx_header(raw_labels, str(path_labels), IDX_LABELS_MAGIC, 1)

    if n_img != n_lab:
        raise IdxFormatError(
            f"{path_images} holds {n_img} images but {path_labels} holds {n_lab} labels"
        )
    pixel_bytes = n_img * rows * cols
    if len(raw_images) - 16 < pixel_bytes:
        raise IdxFormatError(f"{path_images}: truncated pixel data")
    if len(raw_labels) - 8 < n_lab:
        raise IdxFormatError(f"{path_labels}: truncated label data")

    pixels = np.frombuffer(raw_images, dtype=np.uint8, count=pixel_bytes, offset=16)
    features = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    return LabeledDataset(features, labels, num_classes=10, split_tag="train")


def synthetic_blobs(num_classes: int, per_class: int, feature_dim: int,
                    spread: float, seed: int) -> LabeledDataset:
    """Gaussian blobs: per_class points around a distinct mean per class.

    Class means are standard-normal draws keyed by the seed, so calling
    twice with the same seed reproduces the dataset exactly; spread=0
    collapses every class onto its mean (linearly separable).
    """
    if num_classes <= 0 or per_class <= 0 or feature_dim <= 0:
        raise ValueError("num_classes, per_class and feature_dim must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = derive_rng(seed, "blobs")
    means = rng.normal(0.0, 1.0, size=(num_classes, feature_dim))
    features = np.repeat(means, per_class, axis=0)
    if spread > 0:
        features = features + rng.normal(0.0, spread, size=features.shape)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    order = rng.permutation(num_classes * per_class)
    return LabeledDataset(features[order], labels[order], num_classes)


def train_test_split(d: LabeledDataset, test_fraction: float, seed: int,
                     ) -> tuple[LabeledDataset, LabeledDataset]:
    """Shuffle and split one dataset into train/test pieces."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = derive_rng(seed, "split")
    order = rng.permutation(len(d))
    n_test = max(1, int(round(len(d) * test_fraction)))
    test = d.subset(order[:n_test])
    train = d.subset(order[n_test:])
    return (
        LabeledDataset(train.features, train.labels, d.num_classes, "train"),
        LabeledDataset(test.features, test.labels, d.num_classes, "test"),
    )


def partition_iid(d: LabeledDataset, n: int, seed: int) -> Partition:
    """Shuffle all sample indices and deal them out as evenly as possible."""
    if n < 1:
        raise ValueError("need at least one node")
    if len(d) < n:
        raise ValueError(f"cannot give {n} nodes at least one of {len(d)} samples")
    rng = derive_rng(seed, "iid")
    order = rng.permutation(len(d))
    chunks = np.array_split(order, n)
    return Partition({node: chunk for node, chunk in enumerate(chunks)}, len(d))


def partition_dirichlet(d: LabeledDataset, n: int, alpha: float, seed: int) -> Partition:
    """Label-skewed partition: per class, split indices by Dirichlet(alpha) draws.

    Lower alpha concentrates each class on few nodes.  A node left empty by
    the draw steals one sample from the currently largest node so the
    coverage invariant holds without re-rolling the skew.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if n < 1:
        raise ValueError("need at least one node")
    if len(d) < n:
        raise ValueError(f"cannot give {n} nodes at least one of {len(d)} samples")

    rng = derive_rng(seed, "dirichlet")
    buckets: list[list[int]] = [[] for _ in range(n)]
    for cls in range(d.num_classes):
        idx = np.flatnonzero(d.labels == cls)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        proportions = rng.dirichlet(np.full(n, alpha))
        counts = np.floor(proportions * idx.size).astype(int)
        # hand the rounding remainder to the nodes with largest fractional parts
        remainder = idx.size - counts.sum()
        if remainder:
            frac_order = np.argsort(-(proportions * idx.size - counts), kind="stable")
            counts[frac_order[:remainder]] += 1
        start = 0
        for node, count in enumerate(counts):
            buckets[node].extend(idx[start:start + count].tolist())
            start += count

    # repair empty nodes: steal one sample from the largest bucket
    for node in range(n):
        while not buckets[node]:
            donor = max(range(n), key=lambda j: len(buckets[j]))
            buckets[node].append(buckets[donor].pop())
    return Partition(
        {node: np.asarray(sorted(bucket), dtype=np.int64) for node, bucket in enumerate(buckets)},
        len(d),
    )


def partition_shards(d: LabeledDataset, n: int, classes_per_node: int,
                     shard_size: int, seed: int) -> Partition:
    """Extreme non-IID partition: each node draws shards from a few classes.

    Every node is randomly assigned ``classes_per_node`` distinct classes;
    each class's (shuffled) indices are cut into shards of ``shard_size``
    (plus at most one smaller remainder shard), and every node receives a
    random number of shards from each of its classes -- at least one, so
    the node's label support is exactly its assigned classes.
    """
    if classes_per_node < 1 or classes_per_node > d.num_classes:
        raise ValueError("classes_per_node must lie in [1, num_classes]")
    if shard_size < 1:
        raise ValueError("shard_size must be >= 1")
    if n < 1:
        raise ValueError("need at least one node")

    rng = derive_rng(seed, "shards")
    class_shards: list[list[np.ndarray]] = []
    for cls in range(d.num_classes):
        idx = rng.permutation(np.flatnonzero(d.labels == cls))
        shards = [idx[i:i + shard_size] for i in range(0, idx.size, shard_size)]
        class_shards.append(shards)

    assigned = {node: rng.choice(d.num_classes, size=classes_per_node, replace=False).tolist()
                for node in range(n)}
    takers: dict[int, list[int]] = {cls: [] for cls in range(d.num_classes)}
    for node in range(n):
        for cls in assigned[node]:
            takers[cls].append(node)

    for cls, nodes in takers.items():
        if nodes and len(class_shards[cls]) < len(nodes):
            raise ValueError(
                f"class {cls} has {len(class_shards[cls])} shards for {len(nodes)} nodes; "
                "not enough to give every node one shard per assigned class"
            )

    buckets: dict[int, list[int]] = {node: [] for node in range(n)}
    for cls in range(d.num_classes):
        nodes = takers[cls]
        if not nodes:
            continue
        shards = class_shards[cls]
        cap = len(shards) // len(nodes)
        wanted = {node: int(rng.integers(1, cap + 1)) for node in nodes}
        cursor = 0
        for node in nodes:
            for _ in range(wanted[node]):
                buckets[node].extend(shards[cursor].tolist())
                cursor += 1
    return Partition(
        {node: np.asarray(sorted(bucket), dtype=np.int64) for node, bucket in buckets.items()},
        len(d),
    )
