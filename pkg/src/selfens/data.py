"""Dataset ingestion, semi-supervised splits, label corruption, and epoch
planning (including the capped extra-unlabeled-pool regime)."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from . import tensorio
from .errors import ConfigurationError, DataError

UNLABELED = -1


@dataclass
class LabeledDataset:
    """N inputs with per-item class ids; UNLABELED (-1) marks missing labels."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.inputs.shape[0]} inputs vs "
                            f"{self.labels.shape[0]} labels")
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")
        bad = (self.labels < UNLABELED) | (self.labels >= self.num_classes)
        if np.any(bad):
            raise DataError(f"labels out of range at indices {np.flatnonzero(bad)[:5]}")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    @property
    def m(self) -> int:
        return int(np.count_nonzero(self.labels != UNLABELED))


@dataclass
class EpochPlan:
    """Ordered minibatches of global indices for one epoch.

    Primary indices are 0..N-1; extra-pool items occupy N..N+P-1 so the
    ensemble matrix has rows for them. Every primary index appears exactly
    once; a short final batch is permitted.
    """

    batches: list[np.ndarray]
    batch_size: int
    seed: int

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate(self.batches) if self.batches else np.empty(0, np.int64)

    @property
    def size(self) -> int:
        return sum(len(b) for b in self.batches)


def split_semi_supervised(dataset: LabeledDataset, labels_per_class: int,
                          seed: int) -> LabeledDataset:
    """Keep exactly `labels_per_class` labels per class (uniformly at
    random given `seed`); every other item keeps its input but loses its
    label. The source dataset must be fully labeled."""
    if dataset.m != dataset.n:
        raise DataError("semi-supervised split expects a fully labeled dataset")
    rng = np.random.default_rng(seed)
    labels = np.full(dataset.n, UNLABELED, dtype=np.int64)
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < labels_per_class:
            raise DataError(f"class {c} has {members.size} items, "
                            f"need {labels_per_class}")
        keep = rng.choice(members, size=labels_per_class, replace=False)
        labels[keep] = c
    return replace(dataset, labels=labels)


def corrupt_labels(dataset: LabeledDataset, fraction: float,
                   seed: int) -> LabeledDataset:
    """Redraw the labels of a uniformly chosen floor(fraction * M) subset of
    the labeled items, uniformly over all classes (the original class may
    be redrawn, so the expected effective corruption is fraction*(C-1)/C)."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError(f"corruption fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0:
        return dataset
    rng = np.random.default_rng(seed)
    labeled = dataset.labeled_indices
    count = int(np.floor(fraction * labeled.size))
    picked = rng.choice(labeled, size=count, replace=False)
    labels = dataset.labels.copy()
    labels[picked] = rng.integers(0, dataset.num_classes, size=count)
    return replace(dataset, labels=labels)


def plan_epoch(dataset: LabeledDataset, extra_pool: np.ndarray | None = None,
               cap: int = 0, batch_size: int = 100, seed: int = 0) -> EpochPlan:
    """Shuffled minibatch plan covering every primary input once, plus up
    to `cap` extra-pool items sampled without replacement for this epoch."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    indices = np.arange(dataset.n, dtype=np.int64)
    pool_size = 0 if extra_pool is None else len(extra_pool)
    take = min(cap, pool_size)
    if take > 0:
        extra = rng.choice(pool_size, size=take, replace=False) + dataset.n
        indices = np.concatenate([indices, extra.astype(np.int64)])
    rng.shuffle(indices)
    batches = [indices[i:i + batch_size] for i in range(0, len(indices), batch_size)]
    return EpochPlan(batches=batches, batch_size=batch_size, seed=seed)


def generate_two_moons(n: int, noise_sigma: float, seed: int) -> LabeledDataset:
    """Two interleaved half-circles in 2-D; class 0 is the upper arc on the
    unit circle, class 1 the lower arc shifted to (1, 0.5)."""
    if n < 2:
        raise ConfigurationError("need at least 2 points")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, size=n0)
    t1 = rng.uniform(0.0, np.pi, size=n1)
    pts0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    pts1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    inputs = np.concatenate([pts0, pts1]).astype(np.float32)
    labels = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    if noise_sigma > 0:
        inputs = inputs + rng.normal(0.0, noise_sigma, size=inputs.shape).astype(np.float32)
    order = rng.permutation(n)
    return LabeledDataset(inputs=inputs[order], labels=labels[order], num_classes=2)


CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


def load_image_set(path: str, format: str) -> LabeledDataset:
    """Load a dataset file: 'cifar_binary' (1 label byte + 3072 channel-major
    pixel bytes per record), 'raw_tensor' (this package's tensor container),
    or 'csv' (header with a 'label' column, '?' meaning unlabeled)."""
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    if format == "cifar_binary":
        return _load_cifar_binary(path)
    if format == "raw_tensor":
        return _load_raw_tensor(path)
    if format == "csv":
        return _load_csv(path)
    raise ConfigurationError(f"unknown dataset format '{format}'")


def _load_cifar_binary(path: str) -> LabeledDataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES:
        raise DataError(f"{path}: size {raw.size} is not a multiple of "
                        f"{CIFAR_RECORD_BYTES}-byte records")
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(f"{path}: label byte {labels.max()} out of range 0..9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return LabeledDataset(inputs=images, labels=labels, num_classes=10)


def _load_raw_tensor(path: str) -> LabeledDataset:
    records = tensorio.load_tensors(path)
    for key in ("inputs", "labels", "num_classes"):
        if key not in records:
            raise DataError(f"{path}: missing tensor '{key}'")
    return LabeledDataset(inputs=records["inputs"],
                          labels=records["labels"].astype(np.int64),
                          num_classes=int(records["num_classes"][0]))


def save_raw_tensor(path: str, dataset: LabeledDataset) -> None:
    tensorio.save_tensors(path, {
        "inputs": dataset.inputs,
        "labels": dataset.labels.astype(np.float32),
        "num_classes": np.array([dataset.num_classes], dtype=np.float32),
    })


def _load_csv(path: str) -> LabeledDataset:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty csv") from None
        if "label" not in header:
            raise DataError(f"{path}: header must contain a 'label' column, got {header}")
        label_col = header.index("label")
        feature_cols = [j for j in range(len(header)) if j != label_col]
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, "
                                f"got {len(row)}")
            try:
                rows.append([float(row[j]) for j in feature_cols])
                labels.append(UNLABELED if row[label_col].strip() == "?"
                              else int(row[label_col]))
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    known = labels_arr[labels_arr != UNLABELED]
    if known.size == 0:
        raise DataError(f"{path}: every row is unlabeled")
    return LabeledDataset(inputs=np.asarray(rows, dtype=np.float32),
                          labels=labels_arr,
                          num_classes=int(known.max()) + 1)
