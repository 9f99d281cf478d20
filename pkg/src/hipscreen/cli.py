"""Command-line entry point: ``hipscreen <command> [--config run.json] [flags]``.

Commands: synth, train, infer, measure, evaluate, agree, report.  Flags
override the config file; ``--seed`` overrides every seed in it.
"""

import argparse
import csv
import json
import logging
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from hipscreen import config as run_config
from hipscreen import dataset, geometry, imagecore, metrics, phantom
from hipscreen.errors import HipScreenError, IdMismatch, MissingFile
from hipscreen.nnet import checkpoint as ckpt_io
from hipscreen.nnet.train import predict_masks, train, write_log

logger = logging.getLogger("hipscreen")

EVAL_FIELDS = ("id", "class") + metrics.OVERLAP_FIELDS
REPORT_FIELDS = ("id", "reference_fhc", "afhc", "outcome")


def _finite(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _fmt(x, digits=6):
    return "nan" if math.isnan(x) else f"{x:.{digits}f}"


def _png_files(paths):
    """PNG files named on the command line or found (non-recursively) in directories."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.png")))
        elif p.is_file():
            out.append(p)
        else:
            raise MissingFile(f"not found: {p}")
    ids = [p.stem for p in out]
    dupes = sorted(k for k, v in Counter(ids).items() if v > 1)
    if dupes:
        raise IdMismatch(f"duplicate ids among inputs: {', '.join(dupes)}")
    return sorted(out, key=lambda p: p.stem)


def _load_samples(data_dir, manifest=None):
    data_dir = Path(data_dir)
    manifest = Path(manifest) if manifest else data_dir / "manifest.csv"
    return [dataset.preprocess(s) for s in dataset.load_dataset(data_dir, manifest)]


def _restrict(samples, split_file, split):
    if split_file is None:
        return samples
    path = Path(split_file)
    if not path.is_file():
        raise MissingFile(f"split file not found: {path}")
    result = dataset.SplitResult.from_json(path.read_text())
    return dataset.select(samples, getattr(result, split))


def _config(args):
    cfg = run_config.load(args.config) if args.config else run_config.RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_synth(args, cfg):
    cfg = cfg.update("dataset", n=args.n, class_mix=args.class_mix, left_fraction=args.left_fraction)
    d = cfg.dataset
    samples, truth = phantom.generate_dataset(d.n, d.class_mix, d.seed, d.left_fraction)
    manifest = phantom.write_dataset(args.out, samples, truth)
    counts = Counter(s.ggt_class for s in samples)
    logger.info("wrote %d phantoms to %s (%s)", len(samples), manifest.parent,
                ", ".join(f"{c} {counts[c]}" for c in dataset.GGT_CLASSES))
    return 0


def _side_paths(out):
    out = Path(out)
    stem = out.with_suffix("")
    return {
        "final": Path(f"{stem}_final{out.suffix or '.ckpt'}"),
        "log": Path(f"{stem}_log.csv"),
        "split": Path(f"{stem}_split.json"),
    }


def cmd_train(args, cfg):
    cfg = cfg.update("train", epochs=args.epochs, batch_size=args.batch_size,
                     learning_rate=args.learning_rate)
    if args.no_augment:
        cfg = cfg.update("augment", enabled=False)
    samples = _load_samples(args.data, args.manifest)
    split = dataset.stratified_split(samples, cfg.dataset.split_spec())
    train_set = dataset.select(samples, split.train)
    val_set = dataset.select(samples, split.validation)
    logger.info("training on %d samples, validating on %d", len(train_set), len(val_set))
    resume = ckpt_io.load(args.resume) if args.resume else None
    result = train(train_set, val_set, cfg.unet, cfg.train, cfg.augment, resume=resume)
    paths = _side_paths(args.out)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ckpt_io.save(args.out, result.best)
    ckpt_io.save(paths["final"], result.final)
    write_log(paths["log"], result.log)
    paths["split"].write_text(split.to_json() + "\n")
    logger.info("best checkpoint %s, final %s, log %s", args.out, paths["final"], paths["log"])
    return 0


def _infer_inputs(args):
    """``(ids, images)`` from a dataset directory or from image files."""
    if args.data:
        samples = _restrict(_load_samples(args.data, args.manifest), args.split_file, args.split)
        return [s.id for s in samples], [s.image for s in samples]
    files = _png_files(args.images)
    ids, images = [], []
    for p in files:
        image = imagecore.read_gray_png(p)
        blank = np.zeros(image.shape, np.uint8)
        ids.append(p.stem)
        images.append(dataset.preprocess(dataset.Sample(p.stem, image, blank, "Normal")).image)
    return ids, images


def _predict(checkpoint_path, ids, images):
    ckpt = ckpt_io.load(checkpoint_path)
    if not ids:
        return {}
    return dict(zip(ids, predict_masks(ckpt, np.stack(images))))


def cmd_infer(args, cfg):
    ids, images = _infer_inputs(args)
    masks = _predict(args.checkpoint, ids, images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid in sorted(masks):
        imagecore.write_mask_png(out / f"{sid}.png", masks[sid])
    logger.info("wrote %d masks to %s", len(masks), out)
    return 0


def _masks_for_measure(args):
    if args.checkpoint:
        ids, images = _infer_inputs(args)
        return _predict(args.checkpoint, ids, images)
    if args.data:
        samples = _restrict(_load_samples(args.data, args.manifest), args.split_file, args.split)
        return {s.id: s.mask for s in samples}
    return {p.stem: imagecore.read_mask_png(p) for p in _png_files(args.masks)}


def measure_summary(records, threshold):
    valid = [r for r in records if r["valid"]]
    mean, std = metrics.summarize([r["fhc_percent"] for r in valid])
    return {
        "n": len(records),
        "n_valid": len(valid),
        "n_invalid": len(records) - len(valid),
        "n_ddh": sum(r["diagnosis"] == geometry.DDH for r in valid),
        "n_healthy": sum(r["diagnosis"] == geometry.HEALTHY for r in valid),
        "failure_reasons": dict(sorted(Counter(r["failure_reason"] for r in records
                                               if not r["valid"]).items())),
        "fhc_mean": _finite(mean),
        "fhc_std": _finite(std),
        "threshold": threshold,
    }


def cmd_measure(args, cfg):
    cfg = cfg.update("geometry", threshold=args.threshold)
    g = cfg.geometry
    masks = _masks_for_measure(args)
    records = [geometry.screen(masks[sid], g.threshold, g.segment_length).to_record(sid)
               for sid in sorted(masks)]
    summary = measure_summary(records, g.threshold)
    if args.out:
        _write_json(args.out, {"records": records, "summary": summary})
    else:
        json.dump({"records": records, "summary": summary}, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    logger.info("measured %d scans: %d valid, %d DDH", summary["n"], summary["n_valid"], summary["n_ddh"])
    return 0


def evaluation_rows(pred, gt, classes):
    """Per-image-per-class rows followed by one ``mean±std`` row per class."""
    rows, per_class = [], {c: [] for c in classes}
    for sid in sorted(pred):
        for c in classes:
            rep = metrics.overlap_metrics(pred[sid], gt[sid], c)
            per_class[c].append(rep)
            rows.append([sid, imagecore.CLASS_NAMES.get(c, str(c))]
                        + [_fmt(getattr(rep, f)) for f in metrics.OVERLAP_FIELDS])
    for c in classes:
        cells = []
        for f in metrics.OVERLAP_FIELDS:
            mean, std = metrics.summarize([getattr(r, f) for r in per_class[c]])
            if len(per_class[c]) == 1:
                std = 0.0
            cells.append(f"{_fmt(mean, 3)}±{_fmt(std, 3)}")
        rows.append(["mean±std", imagecore.CLASS_NAMES.get(c, str(c))] + cells)
    return rows


def cmd_evaluate(args, cfg):
    pred = {p.stem: imagecore.read_mask_png(p) for p in _png_files([args.pred])}
    if args.data:
        gt = {s.id: s.mask for s in _load_samples(args.data, args.manifest)}
        missing = sorted(set(pred) - set(gt))
        if missing:
            raise IdMismatch(f"predictions without ground truth: {', '.join(missing[:5])}")
    else:
        gt = {p.stem: imagecore.read_mask_png(p) for p in _png_files([args.gt])}
        if set(gt) != set(pred):
            diff = sorted(set(gt) ^ set(pred))
            raise IdMismatch(f"prediction and ground-truth ids differ: {', '.join(diff[:5])}")
    rows = evaluation_rows(pred, gt, cfg.metrics.classes)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_FIELDS)
        w.writerows(rows)
    logger.info("evaluated %d images", len(pred))
    return 0


def read_labels(path):
    """``{id: label}`` from a measure JSON, a truth/manifest CSV or an ``id,label`` CSV.

    Measure records give their diagnosis (``invalid`` for rejected scans);
    GGT classes map Normal to Healthy and the rest to DDH.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"label file not found: {path}")
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return {r["id"]: r["diagnosis"] if r["valid"] else "invalid" for r in doc["records"]}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "label" in cols:
            return {r["id"]: r["label"] for r in reader}
        if "ggt_class" in cols:
            return {r["id"]: geometry.HEALTHY if r["ggt_class"] == "Normal" else geometry.DDH
                    for r in reader}
    raise HipScreenError(f"{path}: expected a 'label' or 'ggt_class' column")


def agreement_report(named_labels):
    """Pairwise Cohen kappa for every rater pair, plus Fleiss kappa for three or more.

    The first rater's ids define the items; every other rater must cover them.
    """
    names = list(named_labels)
    ids = sorted(named_labels[names[0]])
    for n in names[1:]:
        missing = sorted(set(ids) - set(named_labels[n]))
        if missing:
            raise IdMismatch(f"{n} has no label for: {', '.join(missing[:5])}")
    lists = {n: [named_labels[n][i] for i in ids] for n in names}
    cats = sorted(set().union(*(set(v) for v in lists.values())))
    pairs = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            rep = metrics.cohen_kappa(lists[a], lists[b], categories=cats)
            pairs.append({"method_a": a, "method_b": b, "n_items": rep.n_items,
                          "agreement": rep.agreement_fraction, "kappa": _finite(rep.kappa),
                          "categories": cats, "confusion": rep.confusion})
    out = {"pairs": pairs}
    if len(names) >= 3:
        rep = metrics.fleiss_from_labels(*(lists[n] for n in names), categories=cats)
        out["fleiss"] = {"methods": names, "n_items": rep.n_items,
                         "agreement": rep.agreement_fraction, "kappa": _finite(rep.kappa),
                         "categories": cats}
    return out


def cmd_agree(args, cfg):
    if not 2 <= len(args.labels) <= 3:
        raise HipScreenError("agree takes two or three label files")
    names = args.names or [Path(p).stem for p in args.labels]
    if len(names) != len(args.labels) or len(set(names)) != len(names):
        raise HipScreenError("need one distinct name per label file")
    report = agreement_report({n: read_labels(p) for n, p in zip(names, args.labels)})
    _write_json(args.out, report)
    for p in report["pairs"]:
        logger.info("%s vs %s: agreement %.3f kappa %s", p["method_a"], p["method_b"],
                    p["agreement"], p["kappa"])
    return 0


def read_fhc(path):
    """``{id: fhc}`` from a measure JSON (valid records only) or a truth CSV."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"not found: {path}")
    if path.suffix == ".json":
        return {r["id"]: r["fhc_percent"] for r in json.loads(path.read_text())["records"]
                if r["valid"]}
    with open(path, newline="") as fh:
        return {r["id"]: float(r["analytic_fhc"]) for r in csv.DictReader(fh)}


def outcome(afhc, reference_fhc, threshold):
    pred = geometry.diagnose(afhc, threshold) == geometry.DDH
    ref = geometry.diagnose(reference_fhc, threshold) == geometry.DDH
    return {(True, True): "TP", (False, False): "TN", (True, False): "FP", (False, True): "FN"}[(pred, ref)]


def report_rows(measured, reference, threshold):
    missing = sorted(set(measured) - set(reference))
    if missing:
        raise IdMismatch(f"measured ids without a reference: {', '.join(missing[:5])}")
    return [{"id": sid, "reference_fhc": reference[sid], "afhc": measured[sid],
             "outcome": outcome(measured[sid], reference[sid], threshold)}
            for sid in sorted(measured)]


def cmd_report(args, cfg):
    cfg = cfg.update("geometry", threshold=args.threshold)
    threshold = cfg.geometry.threshold
    doc = json.loads(Path(args.measure).read_text()) if Path(args.measure).is_file() else None
    if doc is None:
        raise MissingFile(f"measure output not found: {args.measure}")
    skipped = sum(1 for r in doc["records"] if not r["valid"])
    if skipped:
        logger.warning("%d invalid scans left out of the report", skipped)
    rows = report_rows(read_fhc(args.measure), read_fhc(args.reference), threshold)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([r["id"], f"{r['reference_fhc']:.4f}", f"{r['afhc']:.4f}", r["outcome"]])
    if args.svg:
        from hipscreen.plotting import fhc_scatter
        fhc_scatter(args.svg, rows, threshold)
    counts = Counter(r["outcome"] for r in rows)
    logger.info("report: %s", " ".join(f"{k}={counts[k]}" for k in ("TP", "TN", "FP", "FN")))
    return 0


def _add_input_flags(p):
    p.add_argument("--data", help="dataset directory holding manifest.csv")
    p.add_argument("--manifest", help="manifest path (default: DATA/manifest.csv)")
    p.add_argument("--split-file", help="split JSON written by train")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hipscreen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--class-mix", type=float, nargs=3, metavar=("NORMAL", "DYSPLASTIC", "DISLOCATED"))
    p.add_argument("--left-fraction", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the segmentation network")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True, help="best-validation checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="predict label masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="*", default=[], help="image PNGs or directories")
    _add_input_flags(p)
    p.add_argument("--out", required=True, help="output directory for mask PNGs")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("measure", parents=[common], help="coverage and screening decision per mask")
    p.add_argument("masks", nargs="*", help="mask PNGs or directories")
    p.add_argument("--checkpoint", help="segment --images/--data with this network first")
    p.add_argument("--images", nargs="*", default=[])
    _add_input_flags(p)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", help="JSON output (default: stdout)")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("evaluate", parents=[common], help="overlap and distance metrics")
    p.add_argument("--pred", required=True, help="directory of predicted mask PNGs")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--gt", help="directory of ground-truth mask PNGs")
    g.add_argument("--data", help="dataset directory (ground truth from its manifest)")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agree", parents=[common], help="Cohen and Fleiss kappa between label sets")
    p.add_argument("labels", nargs="+", help="two or three label files")
    p.add_argument("--names", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("report", parents=[common], help="scatter data and SVG of automatic vs reference FHC")
    p.add_argument("--measure", required=True, help="measure JSON of the automatic method")
    p.add_argument("--reference", required=True, help="truth.csv or a measure JSON")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command in ("infer", "measure") and getattr(args, "checkpoint", None) \
                and not (args.data or args.images):
            parser.error(f"{args.command} needs --data or --images")
        cfg = _config(args)
        return args.func(args, cfg)
    except HipScreenError as exc:
        print(f"hipscreen: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
