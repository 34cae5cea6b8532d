"""Pre-training of the intent representation.

A dense rectifier layer maps input features ``x`` to ``z = relu(W_h x + b_h)``
and a linear softmax head ``W_phi z + b_phi`` is trained with cross-entropy
on the known classes. After training, ``z`` is the frozen feature space the
boundaries are learned in.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import FORMAT_VERSION, EmbeddedDataset, LabelMap, write_json
from .errors import ArgumentError, DimensionMismatchError, ModelFormatError
from .optim import AdamMoments, adam_update

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
PARAM_NAMES = ("W_h", "b_h", "W_phi", "b_phi")


@dataclass(frozen=True, eq=False)
class RepresentationModel:
    W_h: np.ndarray  # (D_out, D_in)
    b_h: np.ndarray  # (D_out,)
    W_phi: np.ndarray  # (K, D_out)
    b_phi: np.ndarray  # (K,)
    label_map: LabelMap

    def __post_init__(self):
        arrays = {n: np.array(getattr(self, n), dtype=np.float64) for n in PARAM_NAMES}
        d_out, d_in = arrays["W_h"].shape
        k = len(self.label_map)
        if arrays["b_h"].shape != (d_out,) or arrays["W_phi"].shape != (k, d_out) or arrays["b_phi"].shape != (k,):
            raise ArgumentError(
                f"inconsistent parameter shapes: W_h {arrays['W_h'].shape}, b_h {arrays['b_h'].shape}, "
                f"W_phi {arrays['W_phi'].shape}, b_phi {arrays['b_phi'].shape} for K={k}"
            )
        for name, a in arrays.items():
            if not np.all(np.isfinite(a)):
                raise ArgumentError(f"{name} contains non-finite values")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def d_in(self) -> int:
        return self.W_h.shape[1]

    @property
    def d_out(self) -> int:
        return self.W_h.shape[0]

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def replace(self, **params) -> RepresentationModel:
        merged = {**self.params, **params}
        return RepresentationModel(label_map=self.label_map, **merged)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RepresentationModel):
            return NotImplemented
        return self.label_map == other.label_map and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES
        )


@dataclass(frozen=True)
class RepTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    seed: int = 0
    early_stop_patience: int = 10
    hidden_dim: int | None = None  # D_out; defaults to D_in

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ArgumentError("max_epochs must be >= 1")
        if self.early_stop_patience < 0:
            raise ArgumentError("early_stop_patience must be >= 0")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ArgumentError("hidden_dim must be >= 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model: RepresentationModel, x: np.ndarray):
    pre = x @ model.W_h.T + model.b_h
    z = np.maximum(pre, 0.0)
    logits = z @ model.W_phi.T + model.b_phi
    return pre, z, logits, softmax(logits)


def rep_forward(model: RepresentationModel, x):
    """Return ``(z, logits, probs)`` for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d_in:
        raise DimensionMismatchError(model.d_in, x.shape[-1])
    if not np.all(np.isfinite(x)):
        raise ArgumentError("input must be finite")
    _, z, logits, probs = _forward(model, x)
    return z, logits, probs


def cross_entropy(probs, label_index: int) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label_index < p.shape[-1]:
        raise ArgumentError(f"label index {label_index} out of range for K={p.shape[-1]}")
    return float(-np.log(max(p[label_index], PROB_FLOOR)))


def batch_loss(model: RepresentationModel, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy over a batch."""
    _, _, _, probs = _forward(model, x)
    picked = np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)
    return float(-np.log(picked).mean())


def batch_gradients(model: RepresentationModel, x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`batch_loss` for all four parameter tensors."""
    pre, z, _, probs = _forward(model, x)
    n = len(y)
    g_logits = probs.copy()
    g_logits[np.arange(n), y] -= 1.0
    g_logits /= n
    g_z = g_logits @ model.W_phi
    g_pre = g_z * (pre > 0)
    return {
        "W_h": g_pre.T @ x,
        "b_h": g_pre.sum(axis=0),
        "W_phi": g_logits.T @ z,
        "b_phi": g_logits.sum(axis=0),
    }


def init_representation(d_in: int, d_out: int, label_map: LabelMap, seed: int) -> RepresentationModel:
    """Glorot-uniform weights and zero biases drawn from ``default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    k = len(label_map)

    def glorot(fan_out, fan_in):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    return RepresentationModel(glorot(d_out, d_in), np.zeros(d_out), glorot(k, d_out), np.zeros(k), label_map)


def predict_indices(model: RepresentationModel, x: np.ndarray) -> np.ndarray:
    _, _, _, probs = _forward(model, x)
    return np.argmax(probs, axis=1)


def _accuracy(model, data: EmbeddedDataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(predict_indices(model, data.vectors) == data.label_indices()))


def train_representation(
    train: EmbeddedDataset, val: EmbeddedDataset | None, cfg: RepTrainConfig = RepTrainConfig()
) -> RepresentationModel:
    """Mini-batch Adam on mean cross-entropy; keeps the best-validation parameters.

    Without a (non-empty) validation set the training accuracy is used for
    model selection and early stopping.
    """
    if len(train) == 0:
        raise ArgumentError("empty training set")
    y = train.label_indices()
    k = len(train.label_map)
    if np.any(y >= k):
        raise ArgumentError("training data must not contain open records")
    if val is not None and len(val) and val.dim != train.dim:
        raise DimensionMismatchError(train.dim, val.dim)
    select = val if val is not None and len(val) else train

    x = train.vectors
    model = init_representation(train.dim, cfg.hidden_dim or train.dim, train.label_map, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    states = {n: AdamMoments.zeros_like(p) for n, p in model.params.items()}
    step = 0

    best, best_acc, stale = model, _accuracy(model, select), 0
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            b = perm[start : start + cfg.batch_size]
            grads = batch_gradients(model, x[b], y[b])
            params = {}
            for name, p in model.params.items():
                params[name], states[name] = adam_update(p, grads[name], states[name], cfg.learning_rate)
            model = model.replace(**params)
            step += 1
        acc = _accuracy(model, select)
        if acc > best_acc:
            best, best_acc, stale = model, acc, 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                log.debug("representation early stop at epoch %d (best acc %.4f)", epoch, best_acc)
                break
    return best


def embed_dataset(model: RepresentationModel, data: EmbeddedDataset) -> EmbeddedDataset:
    """Replace every vector by its representation ``z``; labels are kept."""
    if data.dim != model.d_in:
        raise DimensionMismatchError(model.d_in, data.dim)
    if len(data) == 0:
        return EmbeddedDataset((), np.zeros((0, model.d_out)), data.label_map, dim=model.d_out)
    z, _, _ = rep_forward(model, data.vectors)
    return EmbeddedDataset(data.labels, z, data.label_map, dim=model.d_out)


def representation_to_dict(model: RepresentationModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "representation",
        "dim_in": model.d_in,
        "dim": model.d_out,
        "labels": list(model.label_map.names),
        **{n: getattr(model, n).tolist() for n in PARAM_NAMES},
    }


def save_representation(model: RepresentationModel, path) -> None:
    write_json(representation_to_dict(model), path)


def load_representation(path) -> RepresentationModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or obj.get("kind") != "representation":
        raise ModelFormatError(f"{path}: not a representation model")
    if obj.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {obj.get('format_version')!r}")
    try:
        return RepresentationModel(label_map=LabelMap(tuple(obj["labels"])), **{n: obj[n] for n in PARAM_NAMES})
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed representation model ({exc})") from None
