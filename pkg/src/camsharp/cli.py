"""Command-line entry points: train, explain, metrics."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import Dataset, generate_synthetic, load_image_dir, split_dataset
from .gradcam import cam_range_stats, gradcam_map, visual_normalize
from .measures import measure_all
from .network import Architecture, forward
from .trainer import (ConfigError, NonFiniteLossError, TrainConfig, metrics_path, read_metrics_records, train,
                      write_metrics_csv)

PANELS = ("accuracy", "ce", "ca", "cd")
CONSTANT_MAP_NOTE = "constant map; visual normalization degenerate"


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camsharp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a classifier with the CAM-entropy loss term")
    t.add_argument("--beta", type=float, default=0.0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--classes", type=int, default=None, help="synthetic classes (default 4)")
    t.add_argument("--image-size", type=int, default=32)
    t.add_argument("--data-dir", default=None, help="<class>/<file> image tree instead of synthetic data")
    t.add_argument("--out", required=True)
    t.add_argument("--per-class", type=int, default=200)
    t.add_argument("--noise", type=float, default=0.1)
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--target-layer", type=int, default=-1)
    t.add_argument("--max-steps", type=int, default=None)

    e = sub.add_parser("explain", help="dump the GradCAM map of one sample")
    e.add_argument("--checkpoint", required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--sample-index", type=int, help="index into the checkpoint's test split")
    src.add_argument("--input-image", help="path to an image file")
    e.add_argument("--class", dest="class_index", type=int, default=None, help="default: predicted class")
    e.add_argument("--out", required=True)
    e.add_argument("--target-layer", type=int, default=-1)

    m = sub.add_parser("metrics", help="split a metrics CSV into one long-format CSV per panel")
    m.add_argument("--metrics-csv", required=True)
    m.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"train": cmd_train, "explain": cmd_explain, "metrics": cmd_metrics}[args.command]
    try:
        return handler(args)
    except CliError as err:
        return _fail(str(err), err.code)
    except NonFiniteLossError as err:
        return _fail(str(err), 2)
    except (ConfigError, CheckpointError, ValueError, OSError) as err:
        return _fail(str(err), 1)


def _fail(message: str, code: int) -> int:
    print("error: " + " ".join(message.split()), file=sys.stderr)
    return code


# -- train ------------------------------------------------------------------

def _build_dataset(args) -> Dataset:
    if args.data_dir is None:
        return generate_synthetic(args.classes or 4, args.per_class, args.image_size, args.noise, args.seed)
    folder = load_image_dir(args.data_dir, args.image_size)
    n = len(folder.class_names)
    if n < 2:
        raise ConfigError("image directory needs at least two classes")
    if args.classes is not None and args.classes != n:
        raise ConfigError(f"--classes {args.classes} but {args.data_dir} has {n} class directories")
    descriptor = {"kind": "image_dir", "path": str(Path(args.data_dir).resolve()), "image_size": args.image_size,
                  "seed": args.seed, "n_classes": n, "skipped": folder.skipped}
    return split_dataset(folder.samples, n, folder.class_names, np.random.default_rng(args.seed), 0.2, descriptor)


def dataset_from_descriptor(descriptor: dict) -> Dataset:
    """Rebuild the dataset a checkpoint was trained on."""
    kind = descriptor.get("kind")
    if kind == "synthetic":
        return generate_synthetic(descriptor["n_classes"], descriptor["n_per_class"], descriptor["image_size"],
                                  descriptor["noise_level"], descriptor["seed"])
    if kind == "image_dir":
        folder = load_image_dir(descriptor["path"], descriptor["image_size"])
        return split_dataset(folder.samples, len(folder.class_names), folder.class_names,
                             np.random.default_rng(descriptor["seed"]), 0.2, descriptor)
    raise CliError(f"checkpoint has no usable dataset descriptor (kind={kind!r})")


def run_id(config: dict, descriptor: dict) -> str:
    blob = json.dumps({"config": config, "dataset": descriptor}, sort_keys=True)
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:12]


def write_manifest(path: Path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key, value in entries.items():
            if isinstance(value, (dict, list)):
                value = json.dumps(value, sort_keys=True)
            fh.write(f"{key}: {value}\n")


def cmd_train(args) -> int:
    config = TrainConfig(beta=args.beta, learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         seed=args.seed, target_layer=args.target_layer, log_every=args.log_every)
    config.validate()
    if args.image_size < 16 or (args.classes is not None and args.classes < 2):
        raise ConfigError("--image-size must be >= 16 and --classes >= 2")
    dataset = _build_dataset(args)
    arch = Architecture.default(dataset.n_classes, dataset.image_shape[1], dataset.image_shape[0])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, dataset, arch, max_steps=args.max_steps)

    ckpt, metrics, manifest = out / "model.ckpt", metrics_path(out), out / "manifest.txt"
    cfg = config.to_dict() | {"max_steps": args.max_steps}
    save_checkpoint(result.params, ckpt, {"dataset": dataset.descriptor, "class_names": dataset.class_names,
                                          "config": cfg, "steps": result.steps})
    write_metrics_csv(result.rows, metrics)
    write_manifest(manifest, {
        "run_id": run_id(cfg, dataset.descriptor),
        "config": cfg,
        "dataset": dataset.descriptor,
        "architecture": arch.to_dict(),
        "steps": result.steps,
        "checkpoint": ckpt,
        "metrics_csv": metrics,
        "manifest": manifest,
    })
    final = {}
    for row in result.rows:
        final[row.split] = row
    for row in final.values():
        print(",".join(row.csv_fields()))
    return 0


# -- explain ----------------------------------------------------------------

def _load_image(path, arch: Architecture) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    c, h, w = arch.input_shape
    try:
        with Image.open(path) as im:
            im = im.convert("L" if c == 1 else "RGB").resize((w, h), Image.NEAREST)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as err:
        raise CliError(f"cannot read input image {path}: {err}") from None
    return arr[None, None] if c == 1 else arr.transpose(2, 0, 1)[None]


def format_report(class_index: int, probability: float, logits: np.ndarray, cam: np.ndarray) -> str:
    stats = cam_range_stats(cam)
    rec = measure_all(cam)
    rel = "undefined" if stats.relative_range is None else f"{stats.relative_range:.6g}"
    fields = [
        f"class={class_index}",
        f"probability={probability:.6f}",
        f"max_logit={logits.max():.6g}",
        f"min_logit={logits.min():.6g}",
        f"max_gradcam={stats.max:.6g}",
        f"min_gradcam={stats.min:.6g}",
        f"absolute_range={stats.absolute_range:.6g}",
        f"relative_range={rel}",
        f"ce={rec.ce:.6g}",
        f"ca={rec.ca:.6g}",
        f"cd={rec.cd:.6g}",
    ]
    if stats.absolute_range == 0.0:
        fields.append(f'note="{CONSTANT_MAP_NOTE}"')
    return " ".join(fields)


def cmd_explain(args) -> int:
    from PIL import Image

    params, meta = load_checkpoint(args.checkpoint)
    if args.input_image is not None:
        image = _load_image(args.input_image, params.arch)
    else:
        test = dataset_from_descriptor(meta.get("dataset", {})).test
        if not 0 <= args.sample_index < len(test):
            raise CliError(f"sample index {args.sample_index} out of range [0, {len(test)})")
        image = test[args.sample_index].image

    trace = forward(params, image, args.target_layer)
    (logits,) = trace.evaluate(trace.logits)
    logits = np.array(logits[0])
    n_classes = params.arch.n_classes
    class_index = int(np.argmax(logits)) if args.class_index is None else args.class_index
    if not 0 <= class_index < n_classes:
        raise CliError(f"class {class_index} out of range [0, {n_classes})")
    z = np.exp(logits - logits.max())
    probability = float(z[class_index] / z.sum())
    cam = gradcam_map(trace, class_index, 0).values

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "cam.txt", cam, fmt="%.12g", delimiter=" ")
    visual, _ = visual_normalize(cam)
    Image.fromarray(np.round(visual * 255.0).astype(np.uint8), mode="L").save(out / "cam.png")
    report = format_report(class_index, probability, logits, cam)
    (out / "report.txt").write_text(report + "\n")
    write_manifest(out / "manifest.txt", {
        "checkpoint": args.checkpoint,
        "source": args.input_image if args.input_image is not None else f"test[{args.sample_index}]",
        "class": class_index,
        "target_layer": args.target_layer,
        "cam_text": out / "cam.txt",
        "cam_image": out / "cam.png",
        "report": out / "report.txt",
        "manifest": out / "manifest.txt",
    })
    print(report)
    return 0


# -- metrics ----------------------------------------------------------------

def cmd_metrics(args) -> int:
    records = read_metrics_records(args.metrics_csv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ordered = [r for r in records if r[1] == "train"] + [r for r in records if r[1] == "test"]
    for col, panel in enumerate(PANELS, start=2):
        with open(out / f"{panel}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("step", "split", "value"))
            for r in ordered:
                w.writerow((r[0], r[1], r[col]))
    print(f"wrote {len(PANELS)} panel files for {len(records)} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
