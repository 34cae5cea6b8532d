"""Command-line entry point: ``adb <subcommand> ...``.

Every subcommand resolves its settings as built-in defaults, then an
optional ``--config`` JSON file, then explicit flags, and writes the
resolved settings to ``config.json`` in its output directory. Passing that
file back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import data_io
from .boundary import BoundaryTrainConfig, write_curve
from .data_io import load_dataset, load_model, save_dataset, save_model, write_json
from .errors import AdbError, ArgumentError, DimensionMismatchError, RunFailedError
from .evaluation import (
    DEFAULT_SWEEP_RATIOS,
    ExperimentConfig,
    TrainedPipeline,
    boundary_ratio_sweep,
    evaluate_predictions,
    labeled_ratio_sweep,
    predict_test,
    run_experiment,
    train_pipeline,
    write_boundary_sweep,
    write_labeled_sweep,
)
from .inference import write_predictions
from .representation import RepTrainConfig, load_representation, save_representation

log = logging.getLogger("adb")

DEFAULTS = {
    # synth
    "classes": None,
    "per_class": 100,
    "dim": 16,
    "centroid_scale": 10.0,
    "noise_sigma": 1.0,
    "min_gap": None,
    # protocol
    "known_ratio": 0.5,
    "labeled_ratio": 1.0,
    "val_fraction": 0.1,
    "test_fraction": 0.2,
    "runs": 10,
    "method": "adb",
    "threshold": 0.5,
    "skip_rep": False,
    "vary_split": True,
    # representation
    "hidden_dim": None,
    "rep_lr": 1e-3,
    "rep_batch_size": 128,
    "rep_epochs": 200,
    "rep_patience": 10,
    # boundary
    "lr": 0.05,
    "batch_size": 128,
    "max_epochs": 100,
    "tol": 1e-4,
    "patience": 5,
    # sweeps
    "ratios": None,
}


def _ratios(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_seed() -> int:
    env = os.environ.get("ADB_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ArgumentError(f"ADB_SEED must be an integer, got {env!r}") from None


def resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    """Merge defaults, the config file and explicit flags for ``keys``."""
    cfg = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"{args.config}: invalid JSON ({exc.msg})") from None
        if not isinstance(file_cfg, dict):
            raise ArgumentError(f"{args.config}: config must be a JSON object")
        cfg.update({k: v for k, v in file_cfg.items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if "seed" in keys and cfg.get("seed") is None:
        cfg["seed"] = _default_seed()
    return cfg


def experiment_config(cfg: dict) -> ExperimentConfig:
    return ExperimentConfig(
        known_ratio=cfg["known_ratio"],
        labeled_ratio=cfg["labeled_ratio"],
        n_runs=cfg.get("runs", 1),
        base_seed=cfg["seed"],
        method=cfg["method"],
        msp_threshold=cfg["threshold"],
        val_fraction=cfg["val_fraction"],
        test_fraction=cfg["test_fraction"],
        skip_rep=cfg["skip_rep"],
        vary_split=cfg["vary_split"],
        rep=RepTrainConfig(
            learning_rate=cfg["rep_lr"],
            batch_size=cfg["rep_batch_size"],
            max_epochs=cfg["rep_epochs"],
            early_stop_patience=cfg["rep_patience"],
            hidden_dim=cfg["hidden_dim"],
        ),
        boundary=BoundaryTrainConfig(
            learning_rate=cfg["lr"],
            batch_size=cfg["batch_size"],
            max_epochs=cfg["max_epochs"],
            convergence_tol=cfg["tol"],
            patience=cfg["patience"],
        ),
    )


PROTOCOL_KEYS = ["known_ratio", "labeled_ratio", "val_fraction", "test_fraction", "seed", "method", "threshold",
                 "skip_rep", "vary_split", "hidden_dim", "rep_lr", "rep_batch_size", "rep_epochs", "rep_patience",
                 "lr", "batch_size", "max_epochs", "tol", "patience"]


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = resolve(args, ["classes", "per_class", "dim", "centroid_scale", "noise_sigma", "min_gap", "seed"])
    if cfg["classes"] is None:
        raise ArgumentError("--classes is required")
    ds = data_io.generate_synthetic(
        cfg["classes"], cfg["per_class"], cfg["dim"], cfg["centroid_scale"], cfg["noise_sigma"], cfg["seed"],
        min_centroid_gap=cfg["min_gap"],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} records, {len(ds.label_map)} classes, D={ds.dim} to {out}")
    return 0


def cmd_split(args) -> int:
    cfg = resolve(args, ["known_ratio", "val_fraction", "test_fraction", "seed"])
    ds = load_dataset(args.data)
    split = data_io.make_known_open_split(ds, cfg["known_ratio"], cfg["seed"], cfg["val_fraction"], cfg["test_fraction"])
    out = _out_dir(args.out_dir)
    data_io.save_split(split, out)
    write_json(cfg, out / "config.json")
    counts = split.manifest()["counts"]
    print(f"known classes: {', '.join(split.known_classes)}")
    print(f"train {counts['train']}, validation {counts['validation']}, test {counts['test']} "
          f"({counts['test_open']} open)")
    return 0


def cmd_train(args) -> int:
    cfg = resolve(args, PROTOCOL_KEYS)
    exp = experiment_config(cfg)
    if exp.method != "adb" and exp.skip_rep:
        raise ArgumentError("--skip-rep only applies to the adb method")
    ds = load_dataset(args.data)
    pipe = train_pipeline(ds, exp, cfg["seed"])
    out = _out_dir(args.out_dir)
    manifest = pipe.split.manifest()
    manifest["labeled_ratio"] = exp.labeled_ratio
    manifest["counts"]["train_labeled"] = len(pipe.train)
    write_json(manifest, out / "manifest.json")
    save_dataset(pipe.split.test, out / "test.csv")
    if pipe.representation is not None:
        save_representation(pipe.representation, out / "representation.json")
    else:
        # a stale file from an earlier run would be picked up by eval
        (out / "representation.json").unlink(missing_ok=True)
    if pipe.model is not None:
        save_model(pipe.model, out / "model.json")
        write_curve(pipe.model, out / "curve.csv")
        print(f"radii: {', '.join(f'{n}={r:.4f}' for n, r in zip(pipe.model.label_map.names, pipe.model.radii))}")
    write_json(cfg, out / "config.json")
    print(f"trained on {len(pipe.train)} records; outputs in {out}")
    return 0


def _load_trained(model_dir: Path, method: str) -> TrainedPipeline:
    rep_path = model_dir / "representation.json"
    rep = load_representation(rep_path) if rep_path.exists() else None
    model = None
    if method == "adb":
        path = model_dir / "model.json"
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        model = load_model(path)
    elif rep is None:
        raise FileNotFoundError(f"msp needs a representation model: {rep_path} not found")
    return TrainedPipeline(split=None, train=None, representation=rep, model=model)


def _check_dims(pipe: TrainedPipeline, data_dim: int) -> None:
    expected = pipe.representation.d_in if pipe.representation is not None else pipe.model.dim
    if data_dim != expected:
        raise DimensionMismatchError(expected, data_dim)
    if pipe.representation is not None and pipe.model is not None and pipe.model.dim != pipe.representation.d_out:
        raise DimensionMismatchError(pipe.model.dim, pipe.representation.d_out)


def cmd_eval(args) -> int:
    cfg = resolve(args, ["method", "threshold"])
    model_dir = Path(args.model_dir)
    pipe = _load_trained(model_dir, cfg["method"])
    test = load_dataset(args.data if args.data else model_dir / "test.csv")
    _check_dims(pipe, test.dim)
    label_map = pipe.model.label_map if pipe.model is not None else pipe.representation.label_map
    if label_map != test.label_map:
        # classes the model never saw are, by definition, open
        known = set(label_map.names)
        labels = tuple(l if l in known else data_io.OPEN_LABEL for l in test.labels)
        test = data_io.EmbeddedDataset(labels, test.vectors, label_map)
    exp = ExperimentConfig(method=cfg["method"], msp_threshold=cfg["threshold"], n_runs=1)
    preds = predict_test(pipe, exp, test)
    metrics = evaluate_predictions(preds, test)
    out = _out_dir(args.out_dir or model_dir)
    write_predictions(preds, test.labels, out / "predictions.csv")
    write_json(metrics.as_dict(), out / "metrics.json")
    with open(out / "report.csv", "w", encoding="utf-8") as fh:
        fh.write("run,accuracy,f1_all,f1_known,f1_open\n")
        fh.write(f"0,{metrics.accuracy!r},{metrics.f1_all!r},{metrics.f1_known!r},{metrics.f1_open!r}\n")
    print(f"accuracy {metrics.accuracy:.4f}  f1_all {metrics.f1_all:.4f}  "
          f"f1_known {metrics.f1_known:.4f}  f1_open {metrics.f1_open:.4f}")
    return 0


def cmd_experiment(args) -> int:
    cfg = resolve(args, PROTOCOL_KEYS + ["runs"])
    exp = experiment_config(cfg)
    ds = load_dataset(args.data)
    report = run_experiment(ds, exp, parallel=args.parallel)
    out = _out_dir(args.out_dir)
    write_json(report.as_dict(), out / "report.json")
    report.write_csv(out / "report.csv")
    write_json(cfg, out / "config.json")
    mean, std = report.mean, report.std
    for m in mean:
        print(f"{m:9s} {mean[m]:.4f} ± {std[m]:.4f}")
    return 0


def cmd_sweep_boundary(args) -> int:
    cfg = resolve(args, ["ratios"])
    ratios = cfg["ratios"] or list(DEFAULT_SWEEP_RATIOS)
    model_dir = Path(args.model_dir)
    pipe = _load_trained(model_dir, "adb")
    test = load_dataset(args.data if args.data else model_dir / "test.csv")
    test = data_io.EmbeddedDataset(test.labels, test.vectors, pipe.model.label_map)
    _check_dims(pipe, test.dim)
    if pipe.representation is not None:
        from .representation import embed_dataset

        test = embed_dataset(pipe.representation, test)
    rows = boundary_ratio_sweep(pipe.model, test, ratios)
    out = _out_dir(args.out_dir or model_dir)
    write_boundary_sweep(rows, out / "sweep_boundary.csv")
    write_json({**cfg, "ratios": ratios}, out / "config.json")
    for ratio, m in rows:
        print(f"ratio {ratio:g}: accuracy {m.accuracy:.4f}  f1_all {m.f1_all:.4f}  open recall {m.open_recall:.4f}")
    return 0


def cmd_sweep_labeled(args) -> int:
    cfg = resolve(args, PROTOCOL_KEYS + ["runs", "ratios"])
    ratios = cfg["ratios"] or [0.2, 0.4, 0.6, 0.8, 1.0]
    exp = experiment_config(cfg)
    ds = load_dataset(args.data)
    rows = labeled_ratio_sweep(ds, exp, ratios, parallel=args.parallel)
    out = _out_dir(args.out_dir)
    write_labeled_sweep(rows, out / "sweep_labeled.csv")
    write_json({**cfg, "ratios": ratios}, out / "config.json")
    for ratio, rep in rows:
        print(f"labeled {ratio:g}: accuracy {rep.mean['accuracy']:.4f}  f1_all {rep.mean['f1_all']:.4f}")
    return 0


# -- parser ------------------------------------------------------------------


def _add_protocol_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("protocol")
    g.add_argument("--known-ratio", type=float)
    g.add_argument("--labeled-ratio", type=float)
    g.add_argument("--val-fraction", type=float)
    g.add_argument("--test-fraction", type=float)
    g.add_argument("--method", choices=["adb", "msp"])
    g.add_argument("--threshold", type=float, help="MSP rejection threshold (default 0.5)")
    g.add_argument("--skip-rep", action="store_true", default=None,
                   help="learn boundaries directly on the input vectors (precomputed embeddings)")
    g.add_argument("--fixed-split", dest="vary_split", action="store_false", default=None,
                   help="reuse the base-seed split for every run")
    r = p.add_argument_group("representation")
    r.add_argument("--hidden-dim", type=int)
    r.add_argument("--rep-lr", type=float)
    r.add_argument("--rep-batch-size", type=int)
    r.add_argument("--rep-epochs", type=int)
    r.add_argument("--rep-patience", type=int)
    b = p.add_argument_group("boundary")
    b.add_argument("--lr", type=float, help="boundary learning rate (default 0.05)")
    b.add_argument("--batch-size", type=int)
    b.add_argument("--max-epochs", type=int)
    b.add_argument("--tol", type=float)
    b.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adb", description="Adaptive decision boundaries for open-set classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of settings; explicit flags win")
        p.add_argument("--seed", type=int, help="defaults to $ADB_SEED, then 0")

    p = sub.add_parser("synth", help="generate a synthetic Gaussian-cluster dataset")
    common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--centroid-scale", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--min-gap", type=float, help="minimum pairwise centroid distance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="known/open split of a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--known-ratio", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="split, pre-train and learn boundaries")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on a test file")
    common(p)
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data", help="test file (default: <model-dir>/test.csv)")
    p.add_argument("--method", choices=["adb", "msp"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--out-dir", help="default: the model directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="repeated runs of the full protocol")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--parallel", type=int, default=1)
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="boundary-ratio or labeled-ratio sweeps")
    sweeps = p.add_subparsers(dest="sweep", required=True)
    s = sweeps.add_parser("boundary", help="rescale learned radii at test time")
    common(s)
    s.add_argument("--model-dir", required=True)
    s.add_argument("--data")
    s.add_argument("--ratios", type=_ratios)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_sweep_boundary)
    s = sweeps.add_parser("labeled", help="vary the labeled fraction of the training set")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--runs", type=int)
    s.add_argument("--ratios", type=_ratios)
    s.add_argument("--parallel", type=int, default=1)
    _add_protocol_flags(s)
    s.set_defaults(func=cmd_sweep_labeled)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RunFailedError as exc:
        print(f"adb {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.original, ArgumentError) else 1
    except ArgumentError as exc:
        print(f"adb {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (AdbError, OSError) as exc:
        print(f"adb {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
