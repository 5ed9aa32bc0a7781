"""Latent datasets: file formats, synthetic Gaussian blobs and OOD holdout splits."""
import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidInputError
from .numerics import make_rng

LATF_MAGIC = b"LATF"
LATF_VERSION = 1
_LATF_HEADER = struct.Struct("<4sIIII")

TRAIN, TEST = "train", "test"


@dataclass(frozen=True, eq=False)
class LatentDataset:
    """Frozen encoder latents with labels and a train/test tag per row."""

    features: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int64
    is_test: np.ndarray  # (N,) bool
    class_names: tuple

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        is_test = np.asarray(self.is_test, dtype=bool)
        # subsets (e.g. an empty test split) may have N = 0; files and generators never do
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise InvalidInputError(f"features must be an N x D matrix with D >= 1, got {feats.shape}")
        n = feats.shape[0]
        if labels.shape != (n,) or is_test.shape != (n,):
            raise InvalidInputError("labels and split tags must have one entry per row")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("features contain non-finite values")
        c = len(self.class_names)
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise InvalidInputError(f"labels must lie in [0, {c})")
        for arr in (feats, labels, is_test):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "is_test", is_test)
        object.__setattr__(self, "class_names", tuple(str(s) for s in self.class_names))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return len(self.class_names)

    def subset(self, mask, class_names=None, labels=None):
        mask = np.asarray(mask)
        return LatentDataset(
            self.features[mask],
            self.labels[mask] if labels is None else labels,
            self.is_test[mask],
            self.class_names if class_names is None else class_names,
        )

    def train(self):
        return self.subset(~self.is_test)

    def test(self):
        return self.subset(self.is_test)

    def class_counts(self, split=TRAIN):
        mask = self.is_test if split == TEST else ~self.is_test
        return np.bincount(self.labels[mask], minlength=self.num_classes)

    def equals(self, other):
        return (
            self.class_names == other.class_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.is_test, other.is_test)
        )


def _default_names(c):
    return tuple(f"class{i}" for i in range(c))


def _read_csv(path, num_classes):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if len(header) < 3 or header[-2:] != ["label", "split"]:
            raise FormatError(f"{path}: header must be f0,...,f{{D-1}},label,split", row=0)
        d = len(header) - 2
        if header[:d] != [f"f{i}" for i in range(d)]:
            raise FormatError(f"{path}: header feature columns must be named f0..f{d - 1}", row=0)
        feats, labels, tags = [], [], []
        for lineno, rec in enumerate(reader, start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != d + 2:
                raise FormatError(f"expected {d + 2} fields, got {len(rec)}", row=lineno)
            try:
                vals = [float(v) for v in rec[:d]]
                label = int(rec[d])
            except ValueError as exc:
                raise FormatError(str(exc), row=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError("non-finite feature value", row=lineno)
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise FormatError(f"label {label} outside [0, {num_classes})", row=lineno)
            tag = rec[d + 1].strip()
            if tag not in (TRAIN, TEST):
                raise FormatError(f"split must be train or test, got {tag!r}", row=lineno)
            feats.append(vals)
            labels.append(label)
            tags.append(tag == TEST)
    if not feats:
        raise FormatError(f"{path}: no data rows")
    labels = np.array(labels, dtype=np.int64)
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    return LatentDataset(np.array(feats), labels, np.array(tags), _default_names(c))


def _read_latf(path, num_classes):
    raw = Path(path).read_bytes()
    if len(raw) < _LATF_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, d, c = _LATF_HEADER.unpack_from(raw)
    if magic != LATF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LATF_VERSION:
        raise FormatError(f"{path}: unsupported LATF version {version}")
    if n < 1 or d < 1 or c < 1:
        raise FormatError(f"{path}: header has N={n}, D={d}, C={c}")
    if num_classes is not None and num_classes != c:
        raise FormatError(f"{path}: file declares C={c}, expected {num_classes}")
    off = _LATF_HEADER.size
    expected = off + n + 4 * n + 4 * n * d
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flags = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off + n).astype(np.int64)
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off + 5 * n).reshape(n, d)
    for i in range(n):
        if flags[i] > 1:
            raise FormatError(f"split flag {flags[i]} not in {{0, 1}}", row=i)
        if labels[i] >= c:
            raise FormatError(f"label {labels[i]} outside [0, {c})", row=i)
        if not np.all(np.isfinite(feats[i])):
            raise FormatError("non-finite feature value", row=i)
    return LatentDataset(feats.astype(np.float64), labels, flags == 1, _default_names(c))


def _infer_format(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix == ".latf":
        return "latf"
    raise FormatError(f"{path}: cannot infer format from extension; pass csv or latf")


def load_latents(path, format=None, num_classes=None):
    """Read a dataset from CSV or LATF.

    ``num_classes`` declares C for CSV files; labels at or above it are
    rejected. Without it C is one more than the largest label.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    fmt = format or _infer_format(path)
    if fmt == "csv":
        return _read_csv(path, num_classes)
    if fmt == "latf":
        return _read_latf(path, num_classes)
    raise FormatError(f"unknown dataset format {fmt!r}")


def save_latents(ds, path, format=None):
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{i}" for i in range(ds.dim)] + ["label", "split"])
            for x, y, t in zip(ds.features, ds.labels, ds.is_test):
                w.writerow([repr(float(v)) for v in x] + [int(y), TEST if t else TRAIN])
    elif fmt == "latf":
        with open(path, "wb") as fh:
            fh.write(_LATF_HEADER.pack(LATF_MAGIC, LATF_VERSION, ds.n, ds.dim, ds.num_classes))
            fh.write(ds.is_test.astype(np.uint8).tobytes())
            fh.write(ds.labels.astype("<u4").tobytes())
            fh.write(ds.features.astype("<f4").tobytes())
    else:
        raise FormatError(f"unknown dataset format {fmt!r}")


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 5
    dim: int = 16
    per_class_count: int | Sequence[int] = 200
    cluster_mean_scale: float = 3.0
    cluster_stdev: float = 0.5
    seed: int = 0
    test_fraction: float = 0.2

    def counts(self):
        if isinstance(self.per_class_count, int):
            return [self.per_class_count] * self.classes
        counts = [int(c) for c in self.per_class_count]
        if len(counts) != self.classes:
            raise InvalidInputError("per_class_count list must have one entry per class")
        return counts

    def validate(self):
        if self.classes < 1 or self.dim < 1:
            raise InvalidInputError("classes and dim must be >= 1")
        if min(self.counts()) < 1:
            raise InvalidInputError("every class needs at least one row")
        if not self.cluster_stdev > 0:
            raise InvalidInputError("cluster_stdev must be > 0")
        if not self.cluster_mean_scale >= 0:
            raise InvalidInputError("cluster_mean_scale must be >= 0")
        if not 0 <= self.test_fraction < 1:
            raise InvalidInputError("test_fraction must lie in [0, 1)")


def gen_synthetic(spec):
    """Isotropic Gaussian class clusters, deterministic in ``spec.seed``.

    Within each class a random ``test_fraction`` of rows (rounded) is
    tagged test.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    means = rng.normal(0.0, spec.cluster_mean_scale, size=(spec.classes, spec.dim))
    feats, labels, tags = [], [], []
    for c, count in enumerate(spec.counts()):
        feats.append(means[c] + spec.cluster_stdev * rng.normal(size=(count, spec.dim)))
        labels.append(np.full(count, c, dtype=np.int64))
        n_test = int(round(spec.test_fraction * count))
        tag = np.zeros(count, dtype=bool)
        tag[rng.permutation(count)[:n_test]] = True
        tags.append(tag)
    return LatentDataset(
        np.concatenate(feats), np.concatenate(labels), np.concatenate(tags), _default_names(spec.classes)
    )


@dataclass(frozen=True, eq=False)
class OODSplit:
    in_train: LatentDataset
    in_test: LatentDataset
    ood: LatentDataset
    held_out_class: int
    mode: str
    label_map: dict = field(default_factory=dict)  # original label -> re-indexed label


def make_ood_split(ds, mode):
    """Hold out the most (``"max"``) or least (``"min"``) frequent class.

    Frequencies are counted over train rows; ties go to the lowest class
    index. Held-out rows from both splits form the OOD pool.
    """
    if mode not in ("min", "max"):
        raise InvalidInputError(f"mode must be 'min' or 'max', got {mode!r}")
    if ds.num_classes < 2:
        raise InvalidInputError("an OOD split needs at least two classes")
    counts = ds.class_counts(TRAIN)
    if np.any(counts == 0):
        empty = [ds.class_names[i] for i in np.flatnonzero(counts == 0)]
        raise InvalidInputError(f"classes without train rows: {', '.join(empty)}")
    held = int(np.argmax(counts) if mode == "max" else np.argmin(counts))
    kept = [c for c in range(ds.num_classes) if c != held]
    label_map = {c: i for i, c in enumerate(kept)}
    lut = np.full(ds.num_classes, -1, dtype=np.int64)
    lut[kept] = np.arange(len(kept))
    names = tuple(ds.class_names[c] for c in kept)

    in_mask = ds.labels != held
    in_ds = ds.subset(in_mask, class_names=names, labels=lut[ds.labels[in_mask]])
    ood_mask = ~in_mask
    ood = ds.subset(ood_mask, class_names=(ds.class_names[held],), labels=np.zeros(int(ood_mask.sum()), dtype=np.int64))
    return OODSplit(in_ds.train(), in_ds.test(), ood, held, mode, label_map)
