"""Metrics and the experiment protocol: known-ratio splits, repeated runs and sweeps."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .boundary import AdbModel, BoundaryTrainConfig, compute_centroids, train_boundaries
from .data_io import EmbeddedDataset, LabelMap, make_known_open_split, subsample_labeled
from .errors import AdbError, ArgumentError, RunFailedError
from .inference import Prediction, classify_batch, msp_classify
from .representation import RepTrainConfig, embed_dataset, rep_forward, train_representation

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "f1_all", "f1_known", "f1_open")
DEFAULT_SWEEP_RATIOS = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed ``[gold, predicted]`` over the known classes followed by open."""

    counts: np.ndarray
    labels: tuple[str, ...]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key: tuple[str, str]) -> int:
        gold, pred = key
        return int(self.counts[self.labels.index(gold), self.labels.index(pred)])


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1_all: float
    f1_known: float
    f1_open: float
    per_class_f1: tuple[float, ...]
    open_recall: float = 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["per_class_f1"] = list(self.per_class_f1)
        return d


def confusion_matrix(preds: Sequence[Prediction | str], golds: Sequence[str], label_map: LabelMap) -> ConfusionMatrix:
    if len(preds) != len(golds):
        raise ArgumentError(f"{len(preds)} predictions for {len(golds)} gold labels")
    names = label_map.all_names
    index = {n: i for i, n in enumerate(names)}
    counts = np.zeros((len(names), len(names)), dtype=np.int64)
    for p, g in zip(preds, golds):
        label = p.label if isinstance(p, Prediction) else p
        if g not in index or label not in index:
            raise ArgumentError(f"label outside label map: gold={g!r}, pred={label!r}")
        counts[index[g], index[label]] += 1
    return ConfusionMatrix(counts, names)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy and macro-F1 over all, known-only and open classes.

    Precision, recall or F1 with a zero denominator count as 0. F1 is
    evaluated as ``2TP / (2TP + FP + FN)``, which equals ``2PR / (P + R)``
    wherever both are defined and avoids an extra rounding step.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise ArgumentError("confusion matrix is empty")
    tp = np.diag(counts)
    recall = _safe_div(tp, counts.sum(axis=1))
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        f1_all=float(f1.mean()),
        f1_known=float(f1[:-1].mean()),
        f1_open=float(f1[-1]),
        per_class_f1=tuple(float(v) for v in f1),
        open_recall=float(recall[-1]),
    )


def evaluate_predictions(preds: Sequence[Prediction], test: EmbeddedDataset) -> MetricsReport:
    return compute_metrics(confusion_matrix(preds, test.labels, test.label_map))


# -- experiment protocol -----------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    known_ratio: float = 0.5
    labeled_ratio: float = 1.0
    n_runs: int = 10
    base_seed: int = 0
    method: str = "adb"
    msp_threshold: float = 0.5
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    skip_rep: bool = False
    vary_split: bool = True
    rep: RepTrainConfig = field(default_factory=RepTrainConfig)
    boundary: BoundaryTrainConfig = field(default_factory=BoundaryTrainConfig)

    def __post_init__(self):
        if self.n_runs < 1:
            raise ArgumentError("n_runs must be >= 1")
        if self.method not in ("adb", "msp"):
            raise ArgumentError(f"method must be 'adb' or 'msp', got {self.method!r}")
        if self.method == "msp" and self.skip_rep:
            raise ArgumentError("the msp baseline needs the representation classifier; drop skip_rep")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        rep = RepTrainConfig(**d.pop("rep", {}))
        boundary = BoundaryTrainConfig(**d.pop("boundary", {}))
        return cls(rep=rep, boundary=boundary, **d)


@dataclass(frozen=True)
class RunResult:
    seed: int
    metrics: MetricsReport
    train_size: int
    test_size: int
    known_classes: tuple[str, ...]


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    runs: tuple[RunResult, ...]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(r.metrics, metric) for r in self.runs])

    @property
    def mean(self) -> dict[str, float]:
        return {m: float(np.mean(self.values(m))) for m in METRIC_NAMES}

    @property
    def std(self) -> dict[str, float]:
        return {m: float(np.std(self.values(m))) for m in METRIC_NAMES}

    def as_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "mean": self.mean,
            "std": self.std,
            "runs": [
                {
                    "run": i,
                    "seed": r.seed,
                    "train_size": r.train_size,
                    "test_size": r.test_size,
                    "known_classes": list(r.known_classes),
                    "metrics": r.metrics.as_dict(),
                }
                for i, r in enumerate(self.runs)
            ],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", *METRIC_NAMES])
            for i, r in enumerate(self.runs):
                w.writerow([i, *(repr(getattr(r.metrics, m)) for m in METRIC_NAMES)])


@dataclass(frozen=True, eq=False)
class TrainedPipeline:
    """Everything one run produces before scoring the test set."""

    split: object
    train: EmbeddedDataset
    representation: object | None
    model: AdbModel | None


def train_pipeline(dataset: EmbeddedDataset, cfg: ExperimentConfig, seed: int) -> TrainedPipeline:
    split_seed = seed if cfg.vary_split else cfg.base_seed
    split = make_known_open_split(dataset, cfg.known_ratio, split_seed, cfg.val_fraction, cfg.test_fraction)
    train = subsample_labeled(split.train, cfg.labeled_ratio, seed)
    rep = None
    feats = train
    if not cfg.skip_rep:
        rep = train_representation(train, split.validation, replace(cfg.rep, seed=seed))
        feats = embed_dataset(rep, train)
    model = None
    if cfg.method == "adb":
        model = train_boundaries(feats, compute_centroids(feats), replace(cfg.boundary, seed=seed))
    return TrainedPipeline(split, train, rep, model)


def predict_test(pipe: TrainedPipeline, cfg: ExperimentConfig, test: EmbeddedDataset | None = None) -> list[Prediction]:
    test = test if test is not None else pipe.split.test
    if cfg.method == "msp":
        _, _, probs = rep_forward(pipe.representation, test.vectors)
        names = pipe.representation.label_map.names
        return [msp_classify(p, cfg.msp_threshold, names) for p in probs]
    feats = embed_dataset(pipe.representation, test) if pipe.representation is not None else test
    return classify_batch(pipe.model, feats)


def _single_run(dataset: EmbeddedDataset, cfg: ExperimentConfig, run: int) -> RunResult:
    seed = cfg.base_seed + run
    pipe = train_pipeline(dataset, cfg, seed)
    metrics = evaluate_predictions(predict_test(pipe, cfg), pipe.split.test)
    return RunResult(seed, metrics, len(pipe.train), len(pipe.split.test), pipe.split.known_classes)


def _guarded_run(args) -> RunResult:
    dataset, cfg, run = args
    try:
        return _single_run(dataset, cfg, run)
    except AdbError as exc:
        raise RunFailedError(run, cfg.base_seed + run, exc) from exc


def run_experiment(dataset: EmbeddedDataset, cfg: ExperimentConfig, parallel: int = 1) -> ExperimentReport:
    """Repeat split, train and evaluate ``cfg.n_runs`` times with seeds ``base_seed + run``.

    Runs are independent and individually seeded, so ``parallel > 1``
    (worker processes) returns the same report as serial execution.
    """
    jobs = [(dataset, cfg, r) for r in range(cfg.n_runs)]
    if parallel > 1 and cfg.n_runs > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            runs = tuple(pool.map(_guarded_run, jobs))
    else:
        runs = tuple(_guarded_run(j) for j in jobs)
    return ExperimentReport(cfg, runs)


def boundary_ratio_sweep(
    model: AdbModel, test: EmbeddedDataset, ratios: Sequence[float] = DEFAULT_SWEEP_RATIOS
) -> list[tuple[float, MetricsReport]]:
    """Score ``test`` with every radius multiplied by each ratio in turn."""
    ratios = [float(r) for r in ratios]
    if any(not (r > 0 and math.isfinite(r)) for r in ratios):
        raise ArgumentError(f"sweep ratios must be positive and finite: {ratios}")
    return [(r, evaluate_predictions(classify_batch(model, test, radius_scale=r), test)) for r in ratios]


def labeled_ratio_sweep(
    dataset: EmbeddedDataset, cfg: ExperimentConfig, ratios: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 1.0),
    parallel: int = 1,
) -> list[tuple[float, ExperimentReport]]:
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ArgumentError(f"labeled ratios must lie in (0, 1], got {r}")
    return [(float(r), run_experiment(dataset, replace(cfg, labeled_ratio=float(r)), parallel)) for r in ratios]


def write_boundary_sweep(rows: Sequence[tuple[float, MetricsReport]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", *METRIC_NAMES, "open_recall"])
        for ratio, m in rows:
            w.writerow([repr(ratio), *(repr(getattr(m, k)) for k in METRIC_NAMES), repr(m.open_recall)])


def write_labeled_sweep(rows: Sequence[tuple[float, ExperimentReport]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["labeled_ratio", "mean_train_size"]
        for m in METRIC_NAMES:
            header += [f"{m}_mean", f"{m}_std"]
        w.writerow(header)
        for ratio, rep in rows:
            row = [repr(ratio), repr(float(np.mean([r.train_size for r in rep.runs])))]
            for m in METRIC_NAMES:
                row += [repr(rep.mean[m]), repr(rep.std[m])]
            w.writerow(row)
