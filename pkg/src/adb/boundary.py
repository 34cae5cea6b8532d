"""Adaptive spherical decision boundaries over frozen features.

Each known class ``k`` gets a centroid ``c_k`` (the mean of its training
features) and a radius ``softplus(delta_hat_k)``. The radii are learned by
minimising the mean absolute gap between each sample's distance to its own
centroid and that class radius, so a converged radius sits at the median
own-class distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data_io import EmbeddedDataset, LabelMap
from .errors import ArgumentError, InsufficientDataError
from .optim import AdamMoments, adam_update

log = logging.getLogger(__name__)


def softplus(x):
    """``log(1 + exp(x))`` without overflow; strictly positive for finite input."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class Centroids:
    c: np.ndarray  # (K, D)
    counts: np.ndarray  # (K,)

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64)
        counts = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or counts.shape != (c.shape[0],):
            raise ArgumentError(f"centroids {c.shape} and counts {counts.shape} disagree")
        if np.any(counts < 1):
            raise InsufficientDataError("every class needs at least one record")
        if not np.all(np.isfinite(c)):
            raise ArgumentError("centroids must be finite")
        c.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "counts", counts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Centroids):
            return NotImplemented
        return np.array_equal(self.c, other.c) and np.array_equal(self.counts, other.counts)

    @property
    def k(self) -> int:
        return self.c.shape[0]

    @property
    def dim(self) -> int:
        return self.c.shape[1]


@dataclass(frozen=True, eq=False)
class BoundaryParams:
    delta_hat: np.ndarray  # (K,), unconstrained

    def __post_init__(self):
        d = np.array(self.delta_hat, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(d)):
            raise ArgumentError("boundary parameters must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "delta_hat", d)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoundaryParams):
            return NotImplemented
        return np.array_equal(self.delta_hat, other.delta_hat)

    @property
    def radii(self) -> np.ndarray:
        return softplus(self.delta_hat)


@dataclass(frozen=True)
class BoundaryTrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 128
    max_epochs: int = 100
    convergence_tol: float = 1e-4
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ArgumentError("batch_size and max_epochs must be >= 1")
        if self.convergence_tol < 0 or self.patience < 1:
            raise ArgumentError("convergence_tol must be >= 0 and patience >= 1")


@dataclass(frozen=True, eq=False)
class AdbModel:
    """Centroids plus learned radii: the deployable open-set classifier."""

    centroids: Centroids
    params: BoundaryParams
    label_map: LabelMap
    config: dict = field(default_factory=dict)
    seed: int | None = None
    curve: tuple = ()

    def __post_init__(self):
        k = len(self.label_map)
        if self.centroids.k != k or self.params.delta_hat.shape != (k,):
            raise ArgumentError(
                f"label map has {k} classes but centroids have {self.centroids.k} "
                f"and boundary parameters {self.params.delta_hat.shape[0]}"
            )
        if np.any(self.radii <= 0):
            raise ArgumentError("radii must be strictly positive")

    @property
    def radii(self) -> np.ndarray:
        return self.params.radii

    @property
    def dim(self) -> int:
        return self.centroids.dim

    def __eq__(self, other) -> bool:
        if not isinstance(other, AdbModel):
            return NotImplemented
        return (
            self.centroids == other.centroids
            and self.params == other.params
            and self.label_map == other.label_map
            and self.config == other.config
            and self.seed == other.seed
        )


def compute_centroids(train: EmbeddedDataset) -> Centroids:
    """Mean feature vector of each known class, in label-map order."""
    y = train.label_indices()
    k = len(train.label_map)
    counts = np.bincount(y[y < k], minlength=k)[:k]
    missing = [train.label_map.names[i] for i in np.flatnonzero(counts == 0)]
    if missing:
        raise InsufficientDataError(f"classes without training records: {missing}")
    c = np.stack([train.vectors[y == i].mean(axis=0) for i in range(k)])
    return Centroids(c, counts)


# -- loss and gradient -------------------------------------------------------


def _check_batch(z, y, centroids: Centroids):
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if z.ndim == 1:
        z = z[None, :]
    if len(y) == 0 or len(z) == 0:
        raise ArgumentError("empty batch")
    if z.shape != (len(y), centroids.dim):
        raise ArgumentError(f"batch features {z.shape} do not match ({len(y)}, {centroids.dim})")
    if np.any(y < 0) or np.any(y >= centroids.k):
        raise ArgumentError("batch contains labels outside the known classes")
    return z, y


def own_class_distances(z, y, centroids: Centroids) -> np.ndarray:
    """Euclidean distance from each sample to its own-class centroid."""
    z, y = _check_batch(z, y, centroids)
    return np.sqrt(((z - centroids.c[y]) ** 2).sum(axis=1))


def boundary_loss(z, y, centroids: Centroids, params: BoundaryParams) -> float:
    """Mean over the batch of ``|d_i - radius_{y_i}|``, written in the two-branch form."""
    d = own_class_distances(z, y, centroids)
    r = params.radii[y]
    outside = d > r  # d == r counts as inside
    terms = np.where(outside, d - r, r - d)
    return float(terms.mean())


def _per_class_gradient(d, y, k: int, delta_hat: np.ndarray):
    outside = d > softplus(delta_hat)[y]
    sign = np.where(outside, -1.0, 1.0)
    n = np.bincount(y, minlength=k).astype(np.float64)
    s = np.bincount(y, weights=sign, minlength=k)
    present = n > 0
    grad = np.zeros(k)
    grad[present] = s[present] / n[present] * sigmoid(delta_hat[present])
    return grad, present


def boundary_gradient(z, y, centroids: Centroids, params: BoundaryParams):
    """Per-class derivative of the boundary loss w.r.t. ``delta_hat``.

    Each class is normalised by its own count in the batch, so the value for
    class ``k`` is ``(#inside_k - #outside_k) / n_k * sigmoid(delta_hat_k)``.

    Returns:
        ``(grad, present)``: a length-K gradient and a boolean mask of the
        classes that occur in the batch. Absent classes carry 0 and must not
        be updated.
    """
    d = own_class_distances(z, y, centroids)
    return _per_class_gradient(d, np.asarray(y, dtype=np.int64), centroids.k, params.delta_hat)


def per_class_loss(z, y, centroids: Centroids, params: BoundaryParams) -> np.ndarray:
    """Per-class mean of ``|d_i - radius_k|`` over the class's batch members (NaN if absent)."""
    d = own_class_distances(z, y, centroids)
    y = np.asarray(y, dtype=np.int64)
    k = centroids.k
    gap = np.abs(d - params.radii[y])
    n = np.bincount(y, minlength=k).astype(np.float64)
    s = np.bincount(y, weights=gap, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, s / n, np.nan)


def finite_difference_loss_gradient(z, y, centroids: Centroids, params: BoundaryParams, h: float = 1e-6):
    """Central-difference gradient of :func:`per_class_loss`, one class at a time.

    Returns ``(grad, present)`` with the same layout as :func:`boundary_gradient`.
    """
    if not 0 < h <= 1e-3:
        raise ArgumentError(f"step h must be in (0, 1e-3], got {h}")
    z, y = _check_batch(z, y, centroids)
    k = centroids.k
    present = np.bincount(y, minlength=k) > 0
    grad = np.zeros(k)
    base = params.delta_hat
    for j in np.flatnonzero(present):
        up = base.copy()
        up[j] += h
        down = base.copy()
        down[j] -= h
        lp = per_class_loss(z, y, centroids, BoundaryParams(up))[j]
        lm = per_class_loss(z, y, centroids, BoundaryParams(down))[j]
        grad[j] = (lp - lm) / (2.0 * h)
    return grad, present


# -- optimisation ------------------------------------------------------------


def init_adam_state(k: int) -> AdamMoments:
    return AdamMoments.zeros_like(np.zeros(k))


def adam_step(params: BoundaryParams, grads, mask, state: AdamMoments, lr: float):
    """Adam update of the boundary parameters restricted to ``mask``.

    Masked-out classes keep their parameter, both moments and their step
    counter, so bias correction is per class.
    """
    k = params.delta_hat.shape[0]
    grads = np.asarray(grads, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if grads.shape != (k,) or mask.shape != (k,) or state.m.shape != (k,):
        raise ArgumentError(f"expected length-{k} gradient, mask and Adam state")
    new, state = adam_update(params.delta_hat, grads, state, lr, mask=mask)
    return BoundaryParams(new), state


def train_boundaries(
    train: EmbeddedDataset, centroids: Centroids, cfg: BoundaryTrainConfig = BoundaryTrainConfig()
) -> AdbModel:
    """Learn one radius per class with mini-batch Adam on the boundary loss.

    ``delta_hat`` starts from a standard normal draw of
    ``numpy.random.default_rng(cfg.seed)``; the same generator shuffles every
    epoch. Training stops once the largest per-class radius change over an
    epoch stays below ``cfg.convergence_tol`` for ``cfg.patience`` epochs in
    a row, or after ``cfg.max_epochs``.

    The returned model's ``curve`` holds ``(epoch, mean_radius, loss)`` rows,
    starting with epoch 0 at initialisation.
    """
    k = len(train.label_map)
    if centroids.k != k or centroids.dim != train.dim:
        raise ArgumentError(
            f"centroids ({centroids.k}x{centroids.dim}) do not match training data ({k} classes, D={train.dim})"
        )
    y = train.label_indices()
    if np.any(y >= k):
        raise ArgumentError("training data must not contain open records")
    d = own_class_distances(train.vectors, y, centroids)  # features are frozen

    rng = np.random.default_rng(cfg.seed)
    delta_hat = rng.standard_normal(k)
    state = init_adam_state(k)
    n = len(y)

    def full_loss(dh):
        return float(np.abs(d - softplus(dh)[y]).mean())

    curve = [(0, float(softplus(delta_hat).mean()), full_loss(delta_hat))]
    calm = 0
    for epoch in range(1, cfg.max_epochs + 1):
        before = softplus(delta_hat)
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = perm[start : start + cfg.batch_size]
            grad, present = _per_class_gradient(d[b], y[b], k, delta_hat)
            delta_hat, state = adam_update(delta_hat, grad, state, cfg.learning_rate, mask=present)
        after = softplus(delta_hat)
        curve.append((epoch, float(after.mean()), full_loss(delta_hat)))
        change = float(np.max(np.abs(after - before)))
        calm = calm + 1 if change < cfg.convergence_tol else 0
        if calm >= cfg.patience:
            log.debug("boundaries converged after %d epochs", epoch)
            break

    return AdbModel(
        centroids=centroids,
        params=BoundaryParams(delta_hat),
        label_map=train.label_map,
        config={
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "max_epochs": cfg.max_epochs,
            "convergence_tol": cfg.convergence_tol,
            "patience": cfg.patience,
        },
        seed=cfg.seed,
        curve=tuple(curve),
    )


def write_curve(model: AdbModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_radius,loss\n")
        for epoch, radius, loss in model.curve:
            fh.write(f"{epoch},{radius!r},{loss!r}\n")
