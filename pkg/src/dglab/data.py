"""Multi-domain datasets: synthetic generators, file round-trip, splits, batching.

Domain tags live only on :class:`DomainDataset`. The leave-one-domain-out
split hands training code a :class:`TrainView`, which has no domain field
at all, so nothing downstream can condition on domains even by accident.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DataFormatError

DATA_FILE = "data.csv"
META_FILE = "meta.json"
FLOAT_FORMAT = "%.17g"  # 17 significant digits round-trip float64 exactly


@dataclass
class DomainDataset:
    """Samples with class labels and a domain tag per row."""

    X: np.ndarray
    y: np.ndarray
    domain: np.ndarray
    num_classes: int
    domain_names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.domain = np.asarray(self.domain)
        n = self.X.shape[0]
        if self.y.shape != (n,) or self.domain.shape != (n,):
            raise ContractError(
                f"row counts disagree: X {self.X.shape}, y {self.y.shape}, domain {self.domain.shape}"
            )
        if n and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        known = set(self.domain_names)
        present = set(self.domain.tolist())
        if not present <= known:
            raise ContractError(f"unknown domain tags: {sorted(present - known)}")
        missing = [
            (d, c)
            for d in sorted(present)
            for c in range(self.num_classes)
            if not np.any((self.domain == d) & (self.y == c))
        ]
        if missing:
            warnings.warn(f"classes missing from some domains: {missing}", stacklevel=2)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.X.shape[1:]


@dataclass
class TrainView:
    """Domain-free view: samples and class labels, nothing else."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.y.shape != (self.X.shape[0],):
            raise ContractError(f"row counts disagree: X {self.X.shape}, y {self.y.shape}")


# ---------------------------------------------------------------------------
# synthetic generators


def generate_spurious_gaussian(
    num_domains: int = 4,
    classes: int = 3,
    signal_dims: int = 2,
    nuisance_dims: int = 8,
    nuisance_strength: float = 3.0,
    noise_sd: float = 0.5,
    n_per_domain_class: int = 500,
    seed: int = 0,
) -> DomainDataset:
    """Gaussian blobs whose nuisance coordinates are predictive only in-domain.

    Signal dims get class-conditional means shared by every domain, spaced
    one unit apart along a common direction. Nuisance dims get means drawn
    per (domain, class), so they separate classes cleanly inside each source
    domain but point nowhere useful in a held-out domain. A model that leans
    on them looks strong in-domain and falls over under the LODO split.
    """
    if num_domains < 1 or signal_dims < 1 or n_per_domain_class < 1 or nuisance_dims < 0:
        raise ConfigError("generate_spurious_gaussian: counts must be positive")
    if classes < 2:
        raise ConfigError(f"generate_spurious_gaussian: need >= 2 classes, got {classes}")

    rng = np.random.default_rng(seed)
    direction = np.ones(signal_dims) / math.sqrt(signal_dims)
    signal_means = np.outer(np.arange(classes), direction)
    nuisance_means = nuisance_strength * rng.standard_normal((num_domains, classes, nuisance_dims))

    blocks, labels, domains = [], [], []
    names = [f"d{i}" for i in range(num_domains)]
    for d in range(num_domains):
        for c in range(classes):
            sig = signal_means[c] + noise_sd * rng.standard_normal((n_per_domain_class, signal_dims))
            nui = nuisance_means[d, c] + noise_sd * rng.standard_normal(
                (n_per_domain_class, nuisance_dims)
            )
            blocks.append(np.concatenate([sig, nui], axis=1))
            labels.append(np.full(n_per_domain_class, c, dtype=np.int64))
            domains.extend([names[d]] * n_per_domain_class)

    return DomainDataset(
        X=np.concatenate(blocks, axis=0),
        y=np.concatenate(labels),
        domain=np.asarray(domains),
        num_classes=classes,
        domain_names=names,
    )


def generate_shifted_waveforms(
    num_domains: int = 4,
    classes: int = 3,
    length: int = 64,
    n_per_domain_class: int = 200,
    seed: int = 0,
    background_amplitude: float = 1.0,
    noise_sd: float = 0.05,
) -> DomainDataset:
    """Time series whose class lives in a central burst and whose domain
    lives in the background.

    The class sets the burst frequency inside a fixed central window; the
    domain sets a baseline drift plus periodic interference on every step
    outside that window. With background_amplitude 0 all domains share one
    distribution. Output shape is (n, 1, length).
    """
    if length < 16:
        raise ConfigError(f"generate_shifted_waveforms: length must be >= 16, got {length}")
    if num_domains < 1 or n_per_domain_class < 1:
        raise ConfigError("generate_shifted_waveforms: counts must be positive")
    if classes < 2:
        raise ConfigError(f"generate_shifted_waveforms: need >= 2 classes, got {classes}")

    rng = np.random.default_rng(seed)
    window = length // 2
    start = (length - window) // 2
    t_window = np.arange(window)
    taper = np.hanning(window)
    motif_mask = np.zeros(length, dtype=bool)
    motif_mask[start : start + window] = True

    # per-domain background parameters, fixed for the dataset
    slopes = background_amplitude * rng.uniform(-1.0, 1.0, num_domains)
    offsets = background_amplitude * rng.uniform(-0.5, 0.5, num_domains)
    interference_amp = background_amplitude * rng.uniform(0.5, 1.0, num_domains)
    interference_freq = rng.uniform(2.0, 6.0, num_domains)
    ramp = np.linspace(-1.0, 1.0, length)
    t_full = np.arange(length)

    rows, labels, domains = [], [], []
    names = [f"d{i}" for i in range(num_domains)]
    for d in range(num_domains):
        for c in range(classes):
            for _ in range(n_per_domain_class):
                # small phase jitter keeps the burst learnable at desk scale
                phase = rng.uniform(-0.4, 0.4)
                burst = 2.0 * taper * np.sin(2.0 * math.pi * (c + 1) * t_window / window + phase)
                bg_phase = rng.uniform(0.0, 2.0 * math.pi)
                background = (
                    slopes[d] * ramp
                    + offsets[d]
                    + interference_amp[d]
                    * np.sin(2.0 * math.pi * interference_freq[d] * t_full / length + bg_phase)
                )
                series = np.where(motif_mask, 0.0, background)
                series[start : start + window] += burst
                series += noise_sd * rng.standard_normal(length)
                rows.append(series)
                labels.append(c)
                domains.append(names[d])

    return DomainDataset(
        X=np.asarray(rows)[:, None, :],
        y=np.asarray(labels, dtype=np.int64),
        domain=np.asarray(domains),
        num_classes=classes,
        domain_names=names,
    )


# ---------------------------------------------------------------------------
# file round-trip


def save_dataset(ds: DomainDataset, path) -> None:
    """Write data.csv plus a meta.json sidecar into the directory ``path``."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "input_shape": [int(d) for d in ds.input_shape],
        "num_classes": int(ds.num_classes),
        "domain_names": list(ds.domain_names),
    }
    with open(os.path.join(path, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    width = int(np.prod(ds.input_shape, dtype=np.int64)) if ds.input_shape else 1
    flat = ds.X.reshape(ds.n, width)
    with open(os.path.join(path, DATA_FILE), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "label"] + [f"x{i}" for i in range(width)])
        for i in range(ds.n):
            writer.writerow(
                [str(ds.domain[i]), int(ds.y[i])] + [FLOAT_FORMAT % v for v in flat[i]]
            )


def load_dataset(path) -> DomainDataset:
    """Read a dataset directory; validates invariants and names bad rows."""
    meta_path = os.path.join(path, META_FILE)
    data_path = os.path.join(path, DATA_FILE)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{meta_path}: invalid JSON sidecar: {e}") from e
    try:
        input_shape = tuple(int(d) for d in meta["input_shape"])
        num_classes = int(meta["num_classes"])
        domain_names = [str(d) for d in meta["domain_names"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{meta_path}: bad sidecar fields: {e}") from e
    width = int(np.prod(input_shape, dtype=np.int64)) if input_shape else 1

    rows, labels, domains = [], [], []
    with open(data_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{data_path}: empty file")
        if len(header) != width + 2 or header[:2] != ["domain", "label"]:
            raise DataFormatError(
                f"{data_path}: header has {len(header) - 2} feature columns, "
                f"sidecar input_shape {list(input_shape)} implies {width}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 2:
                raise DataFormatError(f"{data_path}: row {lineno}: expected {width + 2} fields, got {len(row)}")
            domain = row[0]
            if domain not in domain_names:
                raise DataFormatError(f"{data_path}: row {lineno}: unknown domain {domain!r}")
            try:
                label = int(row[1])
            except ValueError:
                raise DataFormatError(f"{data_path}: row {lineno}: label {row[1]!r} is not an integer") from None
            if not 0 <= label < num_classes:
                raise DataFormatError(
                    f"{data_path}: row {lineno}: label {label} outside [0, {num_classes})"
                )
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as e:
                raise DataFormatError(f"{data_path}: row {lineno}: bad float: {e}") from None
            domains.append(domain)
            labels.append(label)
            rows.append(values)

    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), *input_shape)
    return DomainDataset(
        X=X,
        y=np.asarray(labels, dtype=np.int64),
        domain=np.asarray(domains),
        num_classes=num_classes,
        domain_names=domain_names,
    )


# ---------------------------------------------------------------------------
# splits and batching


def leave_one_domain_out(ds: DomainDataset, target: str):
    """Partition into (domain-free train view, tagged sources, target test set)."""
    if len(ds.domain_names) < 2:
        raise ConfigError("leave_one_domain_out needs at least 2 domains")
    if target not in ds.domain_names:
        raise ConfigError(f"unknown target domain {target!r}; have {ds.domain_names}")
    test_mask = ds.domain == target
    train = TrainView(X=ds.X[~test_mask].copy(), y=ds.y[~test_mask].copy())
    held = DomainDataset(
        X=ds.X[~test_mask].copy(),
        y=ds.y[~test_mask].copy(),
        domain=ds.domain[~test_mask].copy(),
        num_classes=ds.num_classes,
        domain_names=list(ds.domain_names),
    )
    test = DomainDataset(
        X=ds.X[test_mask].copy(),
        y=ds.y[test_mask].copy(),
        domain=ds.domain[test_mask].copy(),
        num_classes=ds.num_classes,
        domain_names=list(ds.domain_names),
    )
    return train, held, test


def split_holdout(view: TrainView, fraction: float = 0.1, seed: int = 0):
    """Split off a stratified in-source validation fraction; returns (train, held)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    held_idx = []
    for c in np.unique(view.y):
        pool = np.flatnonzero(view.y == c)
        take = max(1, int(round(fraction * pool.size)))
        held_idx.append(rng.permutation(pool)[:take])
    held_idx = np.sort(np.concatenate(held_idx))
    keep = np.setdiff1d(np.arange(view.y.size), held_idx)
    return (
        TrainView(X=view.X[keep].copy(), y=view.y[keep].copy()),
        TrainView(X=view.X[held_idx].copy(), y=view.y[held_idx].copy()),
    )


def class_balanced_batches(train: TrainView, batch_size: int, min_ratio: float, rng):
    """Endless stream of fixed-size batches holding every class at
    count >= ceil(min_ratio * majority count).

    Each batch starts as a uniform draw; deficient classes are upsampled
    uniformly at random with replacement from their pool, each duplicate
    replacing a uniformly chosen row of the currently largest class, so the
    batch size never changes.
    """
    if not 0.0 < min_ratio <= 1.0:
        raise ConfigError(f"min_ratio must be in (0, 1], got {min_ratio}")
    y = train.y
    if y.size == 0:
        raise ConfigError("class_balanced_batches: empty training view")
    num_classes = int(y.max()) + 1
    if batch_size < num_classes:
        raise ConfigError(f"batch_size {batch_size} is below the class count {num_classes}")
    pools = [np.flatnonzero(y == c) for c in range(num_classes)]
    for c, pool in enumerate(pools):
        if pool.size == 0:
            raise ConfigError(f"class {c} has no training samples")

    n = y.size
    max_fixes = 10 * batch_size

    def stream():
        while True:
            idx = rng.choice(n, size=batch_size, replace=n < batch_size)
            for _ in range(max_fixes):
                counts = np.bincount(y[idx], minlength=num_classes)
                majority = int(counts.max())
                need = math.ceil(min_ratio * majority)
                deficient = np.flatnonzero((counts < need) | (counts == 0))
                if deficient.size == 0:
                    break
                worst = int(deficient[np.argmin(counts[deficient])])
                donor_class = int(np.argmax(counts))
                donor_positions = np.flatnonzero(y[idx] == donor_class)
                slot = int(rng.choice(donor_positions))
                idx[slot] = int(rng.choice(pools[worst]))
            else:
                raise ConfigError(
                    f"cannot satisfy min_ratio {min_ratio} with batch_size {batch_size} "
                    f"and {num_classes} classes"
                )
            yield train.X[idx].copy(), train.y[idx].copy()

    return stream()
