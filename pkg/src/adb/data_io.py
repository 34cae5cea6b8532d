"""Embedding datasets: ingestion, synthetic generation, splits and persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

from .errors import (
    ArgumentError,
    DimensionMismatchError,
    EmptyDatasetError,
    InsufficientDataError,
    ModelFormatError,
    ParseError,
)

if TYPE_CHECKING:
    from .boundary import AdbModel

OPEN_LABEL = "open"
FORMAT_VERSION = 1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LabelMap:
    """Ordered known-class names; index ``i`` is class ``names[i]``.

    The reserved name ``"open"`` sits implicitly at index ``K`` and may not
    appear among the known names.
    """

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if len(set(self.names)) != len(self.names):
            raise ArgumentError(f"duplicate class names in label map: {self.names}")
        if OPEN_LABEL in self.names:
            raise ArgumentError(f"{OPEN_LABEL!r} is reserved and cannot be a known class")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ArgumentError(f"unknown class label {name!r}") from None

    @property
    def open_index(self) -> int:
        return len(self.names)

    @property
    def all_names(self) -> tuple[str, ...]:
        """Known names followed by the open label."""
        return self.names + (OPEN_LABEL,)


@dataclass(frozen=True, eq=False)
class EmbeddedDataset:
    """Labeled feature vectors sharing one dimension ``dim``.

    ``vectors`` is an ``(n, dim)`` float64 array and ``labels`` holds one
    class name per row. Rows labeled ``"open"`` are only expected in test
    partitions.
    """

    labels: tuple[str, ...]
    vectors: np.ndarray
    label_map: LabelMap
    dim: int = field(default=-1)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        labels = tuple(str(l) for l in self.labels)
        dim = self.dim
        if vectors.size == 0 and vectors.ndim != 2:
            if dim < 1:
                raise ArgumentError("empty dataset needs an explicit dim")
            vectors = vectors.reshape(0, dim)
        if vectors.ndim != 2:
            raise ArgumentError(f"vectors must be 2-D, got shape {vectors.shape}")
        if dim < 0:
            dim = vectors.shape[1]
        if vectors.shape[1] != dim:
            raise DimensionMismatchError(dim, vectors.shape[1])
        if dim < 1:
            raise ArgumentError("feature dimension must be >= 1")
        if vectors.shape[0] != len(labels):
            raise ArgumentError(f"{len(labels)} labels for {vectors.shape[0]} vectors")
        if not np.all(np.isfinite(vectors)):
            raise ArgumentError("feature vectors must be finite")
        known = set(self.label_map.names)
        for name in labels:
            if name not in known and name != OPEN_LABEL:
                raise ArgumentError(f"label {name!r} not in label map")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dim", int(dim))

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddedDataset):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.label_map == other.label_map
            and self.dim == other.dim
            and np.array_equal(self.vectors, other.vectors)
        )

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(zip(self.labels, self.vectors))

    def label_indices(self) -> np.ndarray:
        """Integer class index per row; ``"open"`` rows map to ``K``."""
        lookup = {name: i for i, name in enumerate(self.label_map.all_names)}
        return np.array([lookup[l] for l in self.labels], dtype=np.int64)

    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in self.label_map.names}
        for l in self.labels:
            if l in counts:
                counts[l] += 1
        return counts

    def subset(self, indices: Sequence[int], label_map: LabelMap | None = None) -> EmbeddedDataset:
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddedDataset(
            labels=tuple(self.labels[i] for i in idx),
            vectors=self.vectors[idx],
            label_map=label_map or self.label_map,
            dim=self.dim,
        )

    def with_vectors(self, vectors: np.ndarray) -> EmbeddedDataset:
        vectors = np.asarray(vectors, dtype=np.float64)
        return EmbeddedDataset(self.labels, vectors, self.label_map, dim=vectors.shape[1])


@dataclass(frozen=True, eq=False)
class SplitResult:
    train: EmbeddedDataset
    validation: EmbeddedDataset
    test: EmbeddedDataset
    known_classes: tuple[str, ...]
    known_ratio: float
    seed: int
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __eq__(self, other) -> bool:
        if not isinstance(other, SplitResult):
            return NotImplemented
        return self.manifest() == other.manifest() and (
            self.train == other.train
            and self.validation == other.validation
            and self.test == other.test
        )

    all_classes: tuple[str, ...] = ()

    @property
    def open_classes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.all_classes) - set(self.known_classes)))

    def manifest(self) -> dict:
        n_open = sum(1 for l in self.test.labels if l == OPEN_LABEL)
        return {
            "known_classes": list(self.known_classes),
            "open_classes": list(self.open_classes),
            "known_ratio": self.known_ratio,
            "seed": self.seed,
            "class_selection": "resampled per seed",
            "val_fraction": self.val_fraction,
            "test_fraction": self.test_fraction,
            "counts": {
                "train": len(self.train),
                "validation": len(self.validation),
                "test": len(self.test),
                "test_known": len(self.test) - n_open,
                "test_open": n_open,
            },
        }


def mean_pool(tokens) -> np.ndarray:
    """Component-wise arithmetic mean of a non-empty sequence of token vectors."""
    arr = np.asarray(tokens, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ArgumentError(f"mean_pool needs a non-empty (n, H) token sequence, got shape {arr.shape}")
    return arr.mean(axis=0)


# -- ingestion ---------------------------------------------------------------


def _parse_float(text: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value: {text!r}", line)
    return value


def _read_csv(path: Path) -> tuple[list[str], list[list[float]], int | None]:
    labels, rows = [], []
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return labels, rows, dim
        if not header or header[0].strip() != "label":
            raise ParseError("header must start with 'label'", 1)
        dim = len(header) - 1
        if dim < 1:
            raise ParseError("header declares no feature columns", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) - 1 != dim:
                raise DimensionMismatchError(dim, len(row) - 1, line)
            label = row[0].strip()
            if not label:
                raise ParseError("empty label", line)
            labels.append(label)
            rows.append([_parse_float(c, line) for c in row[1:]])
    return labels, rows, dim


def _read_jsonl(path: Path) -> tuple[list[str], list[np.ndarray], int | None]:
    labels, rows = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
            if not isinstance(obj, dict) or "label" not in obj:
                raise ParseError("expected an object with a 'label' field", line_no)
            if "vector" in obj:
                raw = obj["vector"]
                if not isinstance(raw, list) or not raw:
                    raise ParseError("'vector' must be a non-empty list", line_no)
                vec = np.array([_parse_float(str(v), line_no) for v in raw])
            elif "tokens" in obj:
                toks = obj["tokens"]
                if not isinstance(toks, list) or not toks or not all(isinstance(t, list) for t in toks):
                    raise ParseError("'tokens' must be a non-empty list of vectors", line_no)
                width = len(toks[0])
                for t in toks:
                    if len(t) != width:
                        raise DimensionMismatchError(width, len(t), line_no)
                vec = mean_pool([[_parse_float(str(v), line_no) for v in t] for t in toks])
            else:
                raise ParseError("object needs a 'vector' or 'tokens' field", line_no)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DimensionMismatchError(dim, len(vec), line_no)
            labels.append(str(obj["label"]))
            rows.append(vec)
    return labels, rows, dim


def load_dataset(path, format: str | None = None) -> EmbeddedDataset:
    """Read a CSV or JSONL embedding file.

    The label map lists distinct labels in first-appearance order. A label
    of ``"open"`` is kept as the reserved open class. ``format`` defaults to
    the file extension.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".json", ".ndjson") else "csv"
    if format == "csv":
        labels, rows, dim = _read_csv(path)
    elif format == "jsonl":
        labels, rows, dim = _read_jsonl(path)
    else:
        raise ArgumentError(f"unsupported format {format!r}; use 'csv' or 'jsonl'")
    if not labels:
        raise EmptyDatasetError(f"{path}: no records")
    names = list(dict.fromkeys(l for l in labels if l != OPEN_LABEL))
    return EmbeddedDataset(tuple(labels), np.array(rows, dtype=np.float64), LabelMap(tuple(names)))


def save_dataset(dataset: EmbeddedDataset, path) -> None:
    """Write ``dataset`` as CSV; floats use shortest round-trip repr."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{j}" for j in range(dataset.dim)])
        for label, vec in dataset:
            writer.writerow([label] + [repr(float(v)) for v in vec])


# -- splits ------------------------------------------------------------------


def make_known_open_split(
    dataset: EmbeddedDataset,
    known_ratio: float,
    seed: int,
    val_fraction: float = 0.1,
    test_fraction: float = 0.2,
) -> SplitResult:
    """Choose known classes and partition records into train/validation/test.

    Known classes are drawn without replacement from the lexicographically
    sorted class names. Every class is cut into train/validation/test by the
    given fractions; the test portion of an unselected class is kept and
    relabeled ``"open"``, its train and validation portions are dropped.
    Row order inside each partition follows the input order.
    """
    if not 0.0 < known_ratio <= 1.0:
        raise ArgumentError(f"known_ratio must be in (0, 1], got {known_ratio}")
    if not (0.0 < val_fraction < 1.0 and 0.0 < test_fraction < 1.0 and val_fraction + test_fraction < 1.0):
        raise ArgumentError("val_fraction and test_fraction must lie in (0, 1) and sum below 1")
    classes = sorted(set(dataset.label_map.names))
    if known_ratio < 1.0 and len(classes) < 2:
        raise ArgumentError("an open split needs at least 2 classes")
    n_known = max(1, round_half_up(len(classes) * known_ratio))

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(classes))
    known = tuple(sorted(classes[i] for i in order[:n_known]))
    known_set = set(known)

    by_class: dict[str, list[int]] = {c: [] for c in classes}
    for i, l in enumerate(dataset.labels):
        if l in by_class:
            by_class[l].append(i)

    train_idx, val_idx, test_idx = [], [], []
    for c in classes:
        idx = np.array(by_class[c], dtype=np.int64)
        n = len(idx)
        if c in known_set and n < 3:
            raise InsufficientDataError(f"class {c!r} has {n} records; at least 3 are needed")
        perm = idx[rng.permutation(n)]
        n_test = max(1, round_half_up(n * test_fraction)) if n else 0
        n_val = max(1, round_half_up(n * val_fraction)) if n else 0
        if c in known_set and n - n_test - n_val < 1:
            raise InsufficientDataError(f"class {c!r} has no records left for training")
        test_idx.extend(perm[:n_test].tolist())
        if c in known_set:
            val_idx.extend(perm[n_test : n_test + n_val].tolist())
            train_idx.extend(perm[n_test + n_val :].tolist())

    known_map = LabelMap(known)
    test_idx.sort()
    test_labels = tuple(
        dataset.labels[i] if dataset.labels[i] in known_set else OPEN_LABEL for i in test_idx
    )
    test = EmbeddedDataset(test_labels, dataset.vectors[np.array(test_idx, dtype=np.int64)], known_map, dim=dataset.dim)
    return SplitResult(
        train=dataset.subset(sorted(train_idx), known_map),
        validation=dataset.subset(sorted(val_idx), known_map),
        test=test,
        known_classes=known,
        known_ratio=float(known_ratio),
        seed=int(seed),
        val_fraction=float(val_fraction),
        test_fraction=float(test_fraction),
        all_classes=tuple(classes),
    )


def subsample_labeled(train: EmbeddedDataset, labeled_ratio: float, seed: int) -> EmbeddedDataset:
    """Keep ``round(n_k * labeled_ratio)`` records of each class (at least one)."""
    if not 0.0 < labeled_ratio <= 1.0:
        raise ArgumentError(f"labeled_ratio must be in (0, 1], got {labeled_ratio}")
    if labeled_ratio == 1.0:
        return train
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for name in sorted(train.label_map.names):
        idx = np.array([i for i, l in enumerate(train.labels) if l == name], dtype=np.int64)
        if len(idx) == 0:
            continue
        n_keep = max(1, round_half_up(len(idx) * labeled_ratio))
        keep.extend(idx[rng.permutation(len(idx))[:n_keep]].tolist())
    return train.subset(sorted(keep))


def generate_synthetic(
    n_classes: int,
    per_class: int,
    dim: int,
    centroid_scale: float = 10.0,
    noise_sigma: float = 1.0,
    seed: int = 0,
    *,
    min_centroid_gap: float | None = None,
    max_tries: int = 1000,
) -> EmbeddedDataset:
    """Isotropic Gaussian clusters around uniformly drawn centroids.

    Centroids are uniform in ``[-centroid_scale, centroid_scale]^dim``. With
    ``min_centroid_gap`` set, centroid draws are repeated until every pair is
    at least that far apart. Labels are ``class_00``, ``class_01``, ...
    """
    if n_classes < 2 or per_class < 1 or dim < 1:
        raise ArgumentError("need n_classes >= 2, per_class >= 1, dim >= 1")
    if not noise_sigma > 0 or not math.isfinite(noise_sigma):
        raise ArgumentError(f"noise_sigma must be > 0, got {noise_sigma}")
    if not centroid_scale >= 0:
        raise ArgumentError(f"centroid_scale must be >= 0, got {centroid_scale}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        centroids = rng.uniform(-centroid_scale, centroid_scale, size=(n_classes, dim))
        if min_centroid_gap is None or pairwise_min_distance(centroids) >= min_centroid_gap:
            break
    else:
        raise ArgumentError(f"could not place centroids {min_centroid_gap} apart in {max_tries} draws")
    width = max(2, len(str(n_classes - 1)))
    names = tuple(f"class_{k:0{width}d}" for k in range(n_classes))
    points = centroids[:, None, :] + noise_sigma * rng.standard_normal((n_classes, per_class, dim))
    labels = tuple(name for name in names for _ in range(per_class))
    return EmbeddedDataset(labels, points.reshape(-1, dim), LabelMap(names))


def pairwise_min_distance(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    dist[np.diag_indices(len(points))] = np.inf
    return float(dist.min())


# -- persistence -------------------------------------------------------------


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_split(split: SplitResult, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(split.train, out_dir / "train.csv")
    save_dataset(split.validation, out_dir / "validation.csv")
    save_dataset(split.test, out_dir / "test.csv")
    write_json(split.manifest(), out_dir / "manifest.json")


def model_to_dict(model: AdbModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dim": model.dim,
        "labels": list(model.label_map.names),
        "centroids": model.centroids.c.tolist(),
        "counts": model.centroids.counts.tolist(),
        "delta_hat": model.params.delta_hat.tolist(),
        "radii": model.radii.tolist(),
        "config": dict(model.config),
        "seed": model.seed,
    }


def model_from_dict(obj) -> AdbModel:
    from .boundary import AdbModel, BoundaryParams, Centroids, softplus

    if not isinstance(obj, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if obj.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {obj.get('format_version')!r}")
    if obj.get("kind", "adb") != "adb":
        raise ModelFormatError(f"expected an ADB model, found kind {obj.get('kind')!r}")
    for key in ("dim", "labels", "centroids", "delta_hat", "radii"):
        if key not in obj:
            raise ModelFormatError(f"missing field {key!r}")
    try:
        dim = int(obj["dim"])
        labels = LabelMap(tuple(obj["labels"]))
        c = np.array(obj["centroids"], dtype=np.float64)
        delta_hat = np.array(obj["delta_hat"], dtype=np.float64)
        radii = np.array(obj["radii"], dtype=np.float64)
        counts = np.array(obj.get("counts", [1] * len(labels)), dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model field: {exc}") from None
    k = len(labels)
    if c.shape != (k, dim):
        raise ModelFormatError(f"centroids have shape {c.shape}, expected ({k}, {dim})")
    if delta_hat.shape != (k,) or radii.shape != (k,) or counts.shape != (k,):
        raise ModelFormatError(f"delta_hat, radii and counts must each have length {k}")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(delta_hat)) and np.all(np.isfinite(radii))):
        raise ModelFormatError("model contains non-finite values")
    if np.any(radii <= 0):
        raise ModelFormatError("radii must be strictly positive")
    if not np.allclose(radii, softplus(delta_hat), rtol=1e-12, atol=0.0):
        raise ModelFormatError("radii disagree with softplus(delta_hat)")
    try:
        return AdbModel(
            centroids=Centroids(c, counts),
            params=BoundaryParams(delta_hat),
            label_map=labels,
            config=dict(obj.get("config", {})),
            seed=obj.get("seed"),
        )
    except ArgumentError as exc:
        raise ModelFormatError(str(exc)) from None


def save_model(model: AdbModel, path) -> None:
    write_json(model_to_dict(model), path)


def load_model(path) -> AdbModel:
    try:
        obj = read_json(path)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc.msg})") from None
    return model_from_dict(obj)
