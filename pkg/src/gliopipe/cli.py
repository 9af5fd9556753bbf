"""Command-line entry point exposing the pipeline stages."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import histo, metrics, radio
from .checkpoint import load_checkpoint
from .dcn import TUMOR_CLASSES
from .ensemble import Prediction, aggregate_slices, aggregate_tiles, fuse_modalities
from .manifest import SliceRecord, TileRecord, read_manifest, write_manifest
from .trainer import (AugmentFlags, TrainConfig, load_record_image,
                      predict_batch, read_curves, train)
from .plots import write_curves_svg

log = logging.getLogger("gliopipe")


def _read_labels_csv(path) -> dict[str, str]:
    labels = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[row["case_id"]] = row["label"]
    return labels


def _read_positivity_csv(path) -> dict[tuple[str, str], list[tuple[int, int]]]:
    ranges: dict[tuple[str, str], list[tuple[int, int]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["case_id"], row["modality"])
            ranges.setdefault(key, []).append((int(row["z_start"]), int(row["z_end"])))
    return ranges


# ---- subcommands -------------------------------------------------------------


def cmd_extract_tiles(args) -> int:
    labels = _read_labels_csv(args.labels_csv)
    quota_table = None
    if args.quota_table:
        with open(args.quota_table) as fh:
            quota_table = {float(k): v for k, v in json.load(fh).items()}
    out_manifest = Path(args.out_manifest)
    tile_dir = Path(args.tile_dir) if args.tile_dir else out_manifest.parent / "tiles"

    records = []
    for case_id in sorted(labels):
        slide_path = Path(args.slide_dir) / f"{case_id}.png"
        if not slide_path.exists():
            raise FileNotFoundError(f"no slide image for case {case_id}: {slide_path}")
        slide = np.asarray(Image.open(slide_path).convert("RGB"))
        quota = histo.quota_for(args.resolution, labels[case_id], quota_table)
        records.extend(histo.extract_tiles(
            slide, case_id, str(slide_path), labels[case_id],
            resolution=args.resolution, quota=quota, seed=args.seed,
            tile_size=args.tile_size, out_dir=tile_dir,
        ))
        log.info("case %s: %d tiles so far", case_id, len(records))
    out_manifest.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(records, out_manifest)
    log.info("wrote %d tile records to %s", len(records), out_manifest)
    return 0


def cmd_extract_slices(args) -> int:
    labels = _read_labels_csv(args.labels_csv)
    positivity = _read_positivity_csv(args.positivity_csv)
    out_manifest = Path(args.out_manifest)
    slice_dir = Path(args.slice_dir) if args.slice_dir else out_manifest.parent / "slices"

    records = []
    for case_id in sorted(labels):
        vol_path = None
        for ext in (".vol", ".nii"):
            cand = Path(args.volume_dir) / f"{case_id}_{args.modality}{ext}"
            if cand.exists():
                vol_path = cand
                break
        if vol_path is None:
            raise FileNotFoundError(
                f"no {args.modality} volume for case {case_id} in {args.volume_dir}"
            )
        volume = radio.read_volume(vol_path, case_id=case_id, modality=args.modality)
        ranges = positivity.get((case_id, args.modality), [])
        records.extend(radio.extract_slices(
            volume, ranges, labels[case_id], input_size=args.input_size,
            out_dir=slice_dir,
        ))
    if args.balance_target:
        records = radio.balance_slices(records, args.balance_target, args.seed,
                                       strict=False)
    out_manifest.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(records, out_manifest)
    log.info("wrote %d slice records to %s", len(records), out_manifest)
    return 0


def _load_toml(path) -> dict:
    try:
        import tomllib  # Python 3.11+
    except ImportError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def cmd_train(args) -> int:
    defaults: dict = {}
    if args.config:
        defaults = _load_toml(args.config).get("train", {})

    def pick(name, flag_value):
        return flag_value if flag_value is not None else defaults.get(name)

    augment = AugmentFlags()
    if args.no_augment or defaults.get("augment") is False:
        augment = AugmentFlags(flip=False, rotate=False, scale=False, crop=False)
    config = TrainConfig(
        model_preset=pick("preset", args.preset) or "DCN1",
        epochs=int(pick("epochs", args.epochs) or 300),
        batch_size=int(pick("batch_size", args.batch_size) or 128),
        lr=float(pick("lr", args.lr) or 0.001),
        val_fraction=float(pick("val_fraction", args.val_fraction) or 0.10),
        seed=int(pick("seed", args.seed) or 0),
        input_size=int(pick("input_size", args.input_size) or 224),
        augment=augment,
    )
    records = read_manifest(args.manifest)
    best, curves = train(config, records, args.out_dir)
    write_curves_svg(curves, Path(args.out_dir) / "curves.svg")
    log.info("best checkpoint: %s (final val acc %.3f)", best, curves[-1].val_acc)
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    records = read_manifest(args.manifest)
    by_case: dict[str, list] = {}
    for rec in records:
        by_case.setdefault(rec.case_id, []).append(rec)

    is_tiles = isinstance(records[0], TileRecord)
    out = {"modality": args.modality, "cases": {}}
    for case_id in sorted(by_case):
        case_recs = by_case[case_id]
        images = np.stack([load_record_image(r, model.config.input_size)
                           for r in case_recs])
        preds = predict_batch(model, images, batch_size=args.batch_size)
        agg = aggregate_tiles(preds) if is_tiles else aggregate_slices(preds)
        units = []
        for rec, p in zip(case_recs, preds):
            unit_id = (f"r{rec.row}c{rec.col}" if isinstance(rec, TileRecord)
                       else f"z{rec.z_index}")
            units.append({"id": unit_id, **p.to_dict()})
        out["cases"][case_id] = {
            "units": units,
            "aggregate": agg.to_dict(),
            "n_units": len(preds),
            "n_dropped_n": sum(1 for p in preds if p.label == "N"),
        }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    log.info("wrote predictions for %d cases to %s", len(by_case), args.out)
    return 0


def cmd_fuse(args) -> int:
    weights = {}
    if args.weights:
        for item in args.weights.split(","):
            name, value = item.split("=")
            weights[name] = float(value)
    wanted = args.modalities.split(",") if args.modalities else None

    per_case: dict[str, dict[str, Prediction]] = {}
    for pred_file in args.case_preds:
        with open(pred_file) as fh:
            doc = json.load(fh)
        modality = doc["modality"]
        if wanted is not None and modality not in wanted:
            continue
        for case_id, case in doc["cases"].items():
            agg = case["aggregate"]
            pred = Prediction.from_probs(agg["probs"], tuple(agg["classes"]))
            per_case.setdefault(case_id, {})[modality] = pred

    decisions = []
    for case_id in sorted(per_case):
        decisions.append(fuse_modalities(case_id, per_case[case_id], weights))

    out_json = Path(args.out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    with open(out_json, "w") as fh:
        json.dump([d.to_dict() for d in decisions], fh, indent=2, sort_keys=True)
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case_id", "label"])
            for d in decisions:
                writer.writerow([d.case_id, d.fused.label])
    log.info("fused %d cases", len(decisions))
    return 0


def cmd_evaluate(args) -> int:
    truth = _read_labels_csv(args.truth_csv)
    pred = _read_labels_csv(args.pred_csv)
    missing = sorted(set(pred) - set(truth))
    if missing:
        raise ValueError(f"predictions for unknown cases: {missing}")
    cases = sorted(pred)
    report = metrics.evaluate([truth[c] for c in cases], [pred[c] for c in cases])
    with open(args.out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    print(f"f1_micro={report.f1_micro:.3f} f1_macro={report.f1_macro:.3f} "
          f"kappa={report.kappa:.3f} balanced_accuracy={report.balanced_accuracy:.3f}")
    return 0


def cmd_plot_curves(args) -> int:
    curves = read_curves(args.curves)
    out = args.out or str(Path(args.curves).with_suffix(".svg"))
    write_curves_svg(curves, out)
    log.info("wrote %s", out)
    return 0


def cmd_gradcheck(args) -> int:
    from .selfcheck import run_gradient_checks

    worst = run_gradient_checks(n_cases=args.cases, seed=args.seed, verbose=True)
    print(f"max relative error over {args.cases} cases: {worst:.2e}")
    return 0 if worst < 1e-2 else 1


def cmd_selftest(args) -> int:
    from .selfcheck import run_selftest

    return 0 if run_selftest() else 1


# ---- dispatcher --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gliopipe",
                                     description="Multimodal glioma sub-typing pipeline")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-tiles", help="tile slides into a labeled manifest")
    p.add_argument("--slide-dir", required=True)
    p.add_argument("--labels-csv", required=True)
    p.add_argument("--resolution", type=float, required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--quota-table", help="JSON {resolution: {label: per-case quota}}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile-size", type=int, default=histo.TILE_SIZE)
    p.add_argument("--tile-dir", help="where tile images go (default: next to manifest)")
    p.set_defaults(func=cmd_extract_tiles)

    p = sub.add_parser("extract-slices", help="slice MRI volumes into a manifest")
    p.add_argument("--volume-dir", required=True)
    p.add_argument("--labels-csv", required=True)
    p.add_argument("--positivity-csv", required=True)
    p.add_argument("--modality", required=True, choices=radio.MODALITIES)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--balance-target", type=int, default=0,
                   help="per-class cap after extraction (0 = keep everything)")
    p.add_argument("--slice-dir")
    p.set_defaults(func=cmd_extract_slices)

    p = sub.add_parser("train", help="train a DCN on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=["DCN1", "DCN2"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--input-size", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--config", help="TOML defaults; flags take precedence")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-unit and per-case predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--modality", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="fuse per-modality case predictions")
    p.add_argument("--case-preds", nargs="+", required=True)
    p.add_argument("--modalities", help="comma-separated subset to fuse")
    p.add_argument("--weights", help="modality=weight pairs, comma-separated")
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="challenge metrics from prediction CSVs")
    p.add_argument("--pred-csv", required=True)
    p.add_argument("--truth-csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot-curves", help="render a curves CSV as SVG")
    p.add_argument("curves")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_curves)

    p = sub.add_parser("gradcheck", help="randomized finite-difference checks")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure class
        print(f"error:{type(exc).__name__}:{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
