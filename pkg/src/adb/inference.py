"""Open-set prediction with learned boundaries, and the softmax-threshold baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boundary import AdbModel
from .data_io import OPEN_LABEL, EmbeddedDataset
from .errors import ArgumentError, DimensionMismatchError


@dataclass(frozen=True)
class Prediction:
    """One decision.

    For boundary predictions ``distance`` is the Euclidean distance to the
    nearest centroid and ``margin`` is that distance minus the nearest
    class radius. For the softmax baseline, ``distance`` is ``1 - max_prob``
    and ``margin`` is ``threshold - max_prob``. In both cases a positive
    margin on the nearest class is necessary for rejection.
    """

    label: str
    nearest_class: str
    distance: float
    margin: float

    @property
    def is_open(self) -> bool:
        return self.label == OPEN_LABEL


def _distances(model: AdbModel, z: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - model.centroids.c[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _classify_matrix(model: AdbModel, z: np.ndarray, radius_scale: float) -> list[Prediction]:
    if z.shape[1] != model.dim:
        raise DimensionMismatchError(model.dim, z.shape[1])
    if not np.all(np.isfinite(z)):
        raise ArgumentError("features must be finite")
    names = model.label_map.names
    radii = model.radii * radius_scale
    dist = _distances(model, z)
    nearest = np.argmin(dist, axis=1)  # first minimum wins ties
    rejected = np.all(dist > radii[None, :], axis=1)
    out = []
    for i, k in enumerate(nearest):
        out.append(
            Prediction(
                label=OPEN_LABEL if rejected[i] else names[k],
                nearest_class=names[k],
                distance=float(dist[i, k]),
                margin=float(dist[i, k] - radii[k]),
            )
        )
    return out


def classify(model: AdbModel, z, radius_scale: float = 1.0) -> Prediction:
    """Label ``z`` open if it lies outside every ball, else its nearest centroid's class.

    A point exactly on a boundary is inside. ``radius_scale`` multiplies every
    radius at decision time and leaves the model untouched.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ArgumentError(f"expected a single feature vector, got shape {z.shape}")
    return _classify_matrix(model, z[None, :], radius_scale)[0]


def classify_batch(model: AdbModel, data: EmbeddedDataset | np.ndarray, radius_scale: float = 1.0) -> list[Prediction]:
    vectors = data.vectors if isinstance(data, EmbeddedDataset) else np.asarray(data, dtype=np.float64)
    if len(vectors) == 0:
        return []
    return _classify_matrix(model, vectors, radius_scale)


def msp_classify(probs, threshold: float = 0.5, names: Sequence[str] | None = None) -> Prediction:
    """Maximum-softmax-probability rejection: open when ``max(probs) < threshold``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(~np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ArgumentError("probs must be a finite probability distribution")
    if not 0.0 < threshold < 1.0:
        raise ArgumentError(f"threshold must lie in (0, 1), got {threshold}")
    if names is None:
        names = [str(i) for i in range(p.size)]
    if len(names) != p.size:
        raise ArgumentError(f"{len(names)} class names for {p.size} probabilities")
    k = int(np.argmax(p))
    top = float(p[k])
    return Prediction(
        label=OPEN_LABEL if top < threshold else names[k],
        nearest_class=names[k],
        distance=1.0 - top,
        margin=threshold - top,
    )


def write_predictions(preds: Sequence[Prediction], golds: Sequence[str], path) -> None:
    if len(preds) != len(golds):
        raise ArgumentError(f"{len(preds)} predictions for {len(golds)} gold labels")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "gold", "pred", "nearest", "distance", "margin"])
        for i, (p, g) in enumerate(zip(preds, golds)):
            writer.writerow([i, g, p.label, p.nearest_class, repr(p.distance), repr(p.margin)])
