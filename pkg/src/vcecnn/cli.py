"""Command-line entry point: ``vcecnn {train,eval,predict,synth}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from . import metrics
from .errors import ConfigError, DataError, SpecError, VCECNNError
from .model import ModelSpec, build, load, padding_policy, save_atomic
from .optim import AdamState, evaluate, train_epoch
from .rng import SplitMix64

log = logging.getLogger("vcecnn")

HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")
DEFAULT_IMAGE_SIZE = (224, 224)
DEFAULT_SYNTH_SIZE = 64


@dataclass
class RunConfig:
    command: str
    data: str | None = None
    image_size: tuple[int, int] | None = None
    batch_size: int = 32
    epochs: int = 40
    lr: float = 1e-4
    seed: int = 42
    checkpoint: str | None = None
    out_dir: str | None = None
    report_format: str = "both"
    padding_policy: str = "per-block"
    workers: int = 4
    split: str = "val"
    n_per_class: int = 10
    plots: bool = False
    images: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        if d["image_size"] is not None:
            d["image_size"] = list(d["image_size"])
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().replace(",", "x").split("x")
    try:
        dims = [int(p) for p in parts if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid image size {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"invalid image size {text!r}; use e.g. 224 or 224x224")
    return dims[0], dims[1]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcecnn", description="Five-block CNN for capsule-endoscopy frames.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_help):
        p.add_argument("--data", help=data_help)
        p.add_argument("--image-size", type=parse_size, default=None, help="HxW or a single side length")
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--checkpoint")
        p.add_argument("--out-dir")
        p.add_argument("--workers", type=int, default=4, help="image decoding threads")

    p = sub.add_parser("train", help="train from a root holding train/ and val/")
    common(p, "dataset root containing train/ and val/")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--report-format", choices=("json", "csv", "both"), default="both")
    p.add_argument("--padding-policy", choices=("per-block", "first-only"), default="per-block")
    p.add_argument("--plots", action="store_true", help="also render history.png and confusion.png")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, "class-per-directory root, labels CSV, or a root with train/ and val/")
    p.add_argument("--split", default="val", help="subdirectory to use when --data has split folders")
    p.add_argument("--report-format", choices=("json", "csv", "both"), default="both")
    p.add_argument("--plots", action="store_true", help="also render confusion.png")

    p = sub.add_parser("predict", help="class probabilities for individual images")
    common(p, "unused")
    p.add_argument("images", nargs="+")

    p = sub.add_parser("synth", help="write the synthetic ten-class dataset as PNG files")
    common(p, "unused")
    p.add_argument("--n-per-class", type=int, default=10)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    for name in RunConfig.__dataclass_fields__:
        if name != "command" and hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if cfg.command == "train" and cfg.image_size is None:
        cfg.image_size = DEFAULT_IMAGE_SIZE
    if cfg.command == "synth" and cfg.image_size is None:
        cfg.image_size = (DEFAULT_SYNTH_SIZE, DEFAULT_SYNTH_SIZE)
    return cfg


def _require(value, flag: str, command: str):
    if not value:
        raise ConfigError(f"{command} requires {flag}")
    return value


def _validate_common(cfg: RunConfig) -> None:
    if cfg.batch_size < 1:
        raise ConfigError("--batch-size must be >= 1")
    if cfg.epochs < 0:
        raise ConfigError("--epochs must be >= 0")
    if cfg.lr < 0:
        raise ConfigError("--lr must be >= 0")


def _write_config(cfg: RunConfig, out_dir: Path) -> None:
    (out_dir / "run-config.json").write_text(cfg.to_json(), encoding="utf-8")


def _emit_reports(report, out_dir: Path, fmt: str, stem: str = "metrics") -> list[Path]:
    paths = []
    if fmt in ("json", "both"):
        paths.append(metrics.emit_report(report, out_dir / f"{stem}.json", "json"))
    if fmt in ("csv", "both"):
        paths.append(metrics.emit_report(report, out_dir / f"{stem}.csv", "csv"))
    return paths


def _load_split(root: Path, split: str, size, workers: int) -> datamod.Dataset:
    index = datamod.scan_dataset(root / split, split=split)
    if not index.entries:
        raise DataError(f"{root / split}: no images found")
    return datamod.load_dataset(index, size, workers)


def cmd_train(cfg: RunConfig) -> dict:
    """Train from seed, log one history row per epoch, save the checkpoint and a validation report."""
    _validate_common(cfg)
    root = Path(_require(cfg.data, "--data", "train"))
    out_dir = Path(_require(cfg.out_dir, "--out-dir", "train"))
    for split in ("train", "val"):
        if not (root / split).is_dir():
            raise DataError(f"{root / split}: split directory not found")
    spec = ModelSpec(input_size=cfg.image_size, padding=padding_policy(cfg.padding_policy))
    spec.validate()
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = Path(cfg.checkpoint) if cfg.checkpoint else out_dir / "model.cvc"
    _write_config(cfg, out_dir)

    train_data = _load_split(root, "train", spec.input_size, cfg.workers)
    val_data = _load_split(root, "val", spec.input_size, cfg.workers)
    log.info("train: %d images, val: %d images, size %dx%d", len(train_data), len(val_data), *spec.input_size)

    model = build(spec, SplitMix64.substream(cfg.seed, "init"))
    shuffle_rng = SplitMix64.substream(cfg.seed, "shuffle")
    dropout_rng = SplitMix64.substream(cfg.seed, "dropout")
    adam = AdamState(lr=cfg.lr)

    history_path = out_dir / "history.csv"
    partial = out_dir / "history.csv.partial"
    records = []
    with open(partial, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        fh.flush()
        for epoch in range(1, cfg.epochs + 1):
            train = train_epoch(model, train_data, adam, shuffle_rng, cfg.batch_size, dropout_rng, epoch=epoch)
            val = evaluate(model, val_data, cfg.batch_size)
            rec = {
                "epoch": epoch,
                "train_loss": train.loss,
                "train_acc": train.accuracy,
                "val_loss": val.loss,
                "val_acc": val.accuracy,
            }
            records.append(rec)
            writer.writerow([epoch] + [f"{rec[c]:.6f}" for c in HISTORY_COLUMNS[1:]])
            fh.flush()
            os.fsync(fh.fileno())
            log.info(
                "epoch %d/%d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f",
                epoch, cfg.epochs, train.loss, train.accuracy, val.loss, val.accuracy,
            )
    os.replace(partial, history_path)
    save_atomic(model, checkpoint)

    final = evaluate(model, val_data, cfg.batch_size)
    report = metrics.build_report(val_data.labels, final.predictions, final.probabilities)
    outputs = _emit_reports(report, out_dir, cfg.report_format)
    summary = {
        "epochs": cfg.epochs,
        "final_train_loss": records[-1]["train_loss"] if records else None,
        "final_train_acc": records[-1]["train_acc"] if records else None,
        "final_val_loss": final.loss,
        "final_val_acc": final.accuracy,
        "max_abs_update": adam.max_abs_update,
        "adam_steps": adam.t,
        "parameters": model.num_parameters,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if cfg.plots:
        from .plotting import plot_confusion, plot_history

        if records:
            outputs.append(plot_history(records, out_dir / "history.png"))
        outputs.append(plot_confusion(report.confusion, report.class_names, out_dir / "confusion.png"))
    summary["outputs"] = [str(p) for p in [checkpoint, history_path, *outputs]]
    return summary


def _eval_root(cfg: RunConfig) -> Path:
    root = Path(_require(cfg.data, "--data", cfg.command))
    if root.is_dir() and (root / cfg.split).is_dir():
        return root / cfg.split
    return root


def cmd_eval(cfg: RunConfig) -> metrics.MetricsReport:
    _validate_common(cfg)
    model = load(_require(cfg.checkpoint, "--checkpoint", "eval"))
    if cfg.image_size is not None and tuple(cfg.image_size) != model.spec.input_size:
        raise SpecError(
            f"--image-size {cfg.image_size[0]}x{cfg.image_size[1]} does not match the checkpoint's "
            f"{model.spec.input_size[0]}x{model.spec.input_size[1]}"
        )
    cfg.image_size = model.spec.input_size
    out_dir = Path(_require(cfg.out_dir, "--out-dir", "eval"))
    index = datamod.scan_dataset(_eval_root(cfg))
    if not index.entries:
        raise DataError(f"{cfg.data}: no images found")
    dataset = datamod.load_dataset(index, model.spec.input_size, cfg.workers)
    result = evaluate(model, dataset, cfg.batch_size)
    report = metrics.build_report(dataset.labels, result.predictions, result.probabilities, model.class_names)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out_dir)
    _emit_reports(report, out_dir, cfg.report_format)
    if cfg.plots:
        from .plotting import plot_confusion

        plot_confusion(report.confusion, report.class_names, out_dir / "confusion.png")
    return report


def format_prediction(path: str, probs: np.ndarray, class_names) -> list[str]:
    top = int(np.argmax(probs))
    return [path, class_names[top]] + [f"{p:.6f}" for p in probs]


def cmd_predict(cfg: RunConfig, stdout=None) -> int:
    """Print ``path,top1,p_0..p_9`` per image; returns the number of images that failed."""
    stdout = stdout or sys.stdout
    model = load(_require(cfg.checkpoint, "--checkpoint", "predict"))
    if cfg.image_size is not None and tuple(cfg.image_size) != model.spec.input_size:
        raise SpecError("--image-size does not match the checkpoint")
    cfg.image_size = model.spec.input_size
    writer = csv.writer(stdout, lineterminator="\n")
    rows = []
    failures = 0
    for path in cfg.images:
        try:
            image = datamod.load_image(path, model.spec.input_size).array
        except (VCECNNError, OSError) as exc:
            failures += 1
            print(f"error: {exc}", file=sys.stderr)
            continue
        probs = model.forward(image[None], "eval").array[0]
        row = format_prediction(path, probs, model.class_names)
        rows.append(row)
        writer.writerow(row)
    if cfg.out_dir:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_config(cfg, out_dir)
        with open(out_dir / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "top1", *model.class_names])
            w.writerows(rows)
    return failures


def cmd_synth(cfg: RunConfig) -> dict:
    """Write the synthetic set under ``out_dir/{train,val}/<Class>/``, split 80/20 per class."""
    out_dir = Path(_require(cfg.out_dir, "--out-dir", "synth"))
    if cfg.n_per_class < 1:
        raise ConfigError("--n-per-class must be >= 1")
    height, width = cfg.image_size
    if height != width:
        raise ConfigError("synthetic images are square; pass a single --image-size")
    dataset = datamod.synth_dataset(cfg.n_per_class, height, cfg.seed)
    train_idx, val_idx = datamod.synth_split(dataset, cfg.seed)
    counts = {}
    for split, indices in (("train", train_idx), ("val", val_idx)):
        for name in dataset.class_names:
            (out_dir / split / name).mkdir(parents=True, exist_ok=True)
        for i in indices:
            name = dataset.class_names[dataset.labels[i]]
            datamod.write_png(out_dir / split / name / f"{i:05d}.png", dataset.images[i])
        counts[split] = len(indices)
    _write_config(cfg, out_dir)
    return counts


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = config_from_args(args)
    try:
        if cfg.command == "train":
            summary = cmd_train(cfg)
            print(f"train_acc={summary['final_train_acc']} val_acc={summary['final_val_acc']:.6f}")
            for path in summary["outputs"]:
                print(path)
        elif cfg.command == "eval":
            report = cmd_eval(cfg)
            print(f"accuracy={report.accuracy} balanced_accuracy={report.balanced_accuracy}")
        elif cfg.command == "predict":
            if cmd_predict(cfg):
                return 1
        elif cfg.command == "synth":
            counts = cmd_synth(cfg)
            print(f"train={counts['train']} val={counts['val']} -> {cfg.out_dir}")
    except VCECNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
