"""Command-line entry point: ``demgrade <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import CLASS_NAMES, load_dataset, load_manifest_dataset, resize_area, write_manifest
from .errors import DemgradeError
from .metrics import confusion_matrix, score
from .persistence import load_bundle
from .pgm import scale_to_byte, write_pgm
from .pipeline import ExperimentConfig, compare_all, extract_features, predict_features, run_experiment
from .synth import synthesize_dataset
from .watershed import WatershedParams, segment

logger = logging.getLogger("demgrade")


def _load_config(args):
    cfg = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {}
    if getattr(args, "dataset", None):
        overrides["dataset_root"] = args.dataset
    if getattr(args, "output", None):
        overrides["output_dir"] = args.output
    if getattr(args, "seed", None) is not None:
        overrides["split_seed"] = args.seed
    if getattr(args, "augment", False):
        overrides["augment"] = True
    return replace(cfg, **overrides) if overrides else cfg


def cmd_ingest(args):
    ds = load_dataset(args.root)
    write_manifest(ds, args.output)
    counts = ", ".join(f"{n}={c}" for n, c in zip(ds.class_names, ds.class_counts()))
    print(f"ingested {len(ds)} images ({counts}); {ds.nonstandard_size_count} not 128x128 -> {args.output}")


def cmd_segment(args):
    manifest_path = Path(args.manifest)
    manifest = json.loads(manifest_path.read_text())
    ds = load_manifest_dataset(manifest)
    out_dir = Path(args.output) if args.output else manifest_path.parent / "features"
    dump = Path(args.dump_steps) if args.dump_steps else None
    params = WatershedParams(**json.loads(args.params)) if args.params else WatershedParams()
    w, h = args.resolution
    degenerate = 0
    for entry, sample in zip(manifest["samples"], ds.samples):
        seg = segment(resize_area(sample.image, w, h), params)
        rel = Path(sample.path).with_suffix(".pgm")
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(target, seg.features)
        entry["feature_path"] = target.as_posix()
        entry["degenerate"] = seg.degenerate
        degenerate += seg.degenerate
        if dump is not None:
            base = dump / rel.with_suffix("")
            base.parent.mkdir(parents=True, exist_ok=True)
            write_pgm(f"{base}_mask.pgm", seg.mask.astype(np.uint8) * 255)
            write_pgm(f"{base}_distance.pgm", scale_to_byte(seg.distance))
            write_pgm(f"{base}_markers.pgm", scale_to_byte(seg.markers))
            if seg.labels is not None:
                write_pgm(f"{base}_labels.pgm", scale_to_byte(seg.labels))
    manifest["segmentation"] = {"params": params.to_dict(), "resolution": [w, h], "degenerate_count": degenerate}
    updated = Path(args.manifest_out) if args.manifest_out else manifest_path.with_name(manifest_path.stem + ".segmented.json")
    updated.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"segmented {len(ds)} images ({degenerate} degenerate) -> {out_dir}; manifest {updated}")


def cmd_train(args):
    cfg = replace(_load_config(args), model=args.model, watershed=args.watershed)
    report = run_experiment(cfg)
    card = report.scorecard
    print(f"{report.run_name}: accuracy={card.accuracy:.4f} macro-F1={card.macro['f1']:.4f} model={report.model_path}")


def cmd_evaluate(args):
    model, meta = load_bundle(args.model_path)
    ds = load_manifest_dataset(args.manifest)
    feats = extract_features(ds.images, meta["features"])
    pred = predict_features(model, feats)
    names = meta.get("class_names", list(CLASS_NAMES))
    cm = confusion_matrix(ds.labels, pred, len(names))
    card = score(cm)
    print(cm.to_csv(names), end="")
    print(json.dumps(card.to_dict(), indent=2, sort_keys=True))


def cmd_compare(args):
    cfg = _load_config(args)
    table, _ = compare_all(cfg)
    print(table.to_text(), end="")


def cmd_synthesize(args):
    root = synthesize_dataset(args.output, per_class=args.per_class, size=args.size, seed=args.seed)
    print(f"wrote {4 * args.per_class} synthetic images under {root}")


def build_parser():
    p = argparse.ArgumentParser(prog="demgrade", description="Watershed features + RF/SVM/CNN dementia staging")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="scan a class-per-directory image tree into a manifest")
    s.add_argument("root")
    s.add_argument("-o", "--output", default="manifest.json")
    s.set_defaults(func=cmd_ingest, phase="ingest")

    s = sub.add_parser("segment", help="write watershed feature images (PGM) for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("-o", "--output", help="feature image directory (default: <manifest dir>/features)")
    s.add_argument("--manifest-out")
    s.add_argument("--dump-steps", metavar="DIR")
    s.add_argument("--params", help="WatershedParams as JSON")
    s.add_argument("--resolution", type=int, nargs=2, default=(32, 32), metavar=("W", "H"))
    s.set_defaults(func=cmd_segment, phase="segment")

    s = sub.add_parser("train", help="train and evaluate one configuration")
    s.add_argument("--model", choices=("rf", "svm", "cnn"), required=True)
    s.add_argument("--watershed", action="store_true")
    s.add_argument("--augment", action="store_true", help="concatenate raw pixels with the overlay")
    s.add_argument("--config")
    s.add_argument("--dataset")
    s.add_argument("--output")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train, phase="train")

    s = sub.add_parser("evaluate", help="score a saved model on every image in a manifest")
    s.add_argument("--model-path", required=True)
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_evaluate, phase="evaluate")

    s = sub.add_parser("compare", help="run all six configurations and print the comparison table")
    s.add_argument("--config")
    s.add_argument("--dataset")
    s.add_argument("--output")
    s.add_argument("--seed", type=int)
    s.add_argument("--augment", action="store_true")
    s.set_defaults(func=cmd_compare, phase="compare")

    s = sub.add_parser("synthesize-dataset", help="generate the 4-class geometric mini-dataset")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synthesize, phase="synthesize")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DemgradeError as exc:
        print(f"error [{exc.phase or args.phase}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error [{args.phase}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
