"""Command-line interface: ``tumormap {tile,features,train,predict,evaluate,synth,bench}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, synth
from .config import (ConfigError, ManifestError, ManifestRow, RunConfig, load_manifest, sha256_file,
                     write_manifest)
from .features import compute_histograms, fit_dictionaries, project_all
from .imaging import read_mask, read_rgb, square, write_mask, write_rgb
from .learn import Dataset, ModelFormatError, evaluate, load_model, save_model, train
from .nuclei import cellularity_report, write_reports
from .pipeline import (TileError, region_metrics, render_overlay, resample_truth, run_inference,
                       tile_slide)
from .imaging import Channel
from .texture import DominantPatternDictionary, LayoutError, LbpConfig, Segment

log = logging.getLogger("tumormap")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if getattr(args, "tile_size", None) is not None:
        cfg.tile_size = args.tile_size
    if getattr(args, "theta", None) is not None or getattr(args, "variant", None) or getattr(args, "channels", None):
        f = cfg.features.to_dict()
        if args.theta is not None:
            f["theta"] = args.theta
        if args.variant:
            f["lbp"]["variant"] = args.variant
        if args.channels:
            f["channels"] = args.channels.split(",")
        cfg = RunConfig.from_dict({**cfg.to_dict(), "features": f})
    if getattr(args, "classifier", None):
        cfg.classifier = {"kind": args.classifier.upper()}
    for key in ("k", "C", "gamma", "n_trees"):
        v = getattr(args, key, None)
        if v is not None:
            cfg.classifier[key] = v
    return cfg


# ---------------------------------------------------------------- tile

def cmd_tile(args) -> int:
    slide_path = Path(args.slide)
    try:
        slide = read_rgb(slide_path)
    except OSError as exc:
        raise DataError(f"cannot read slide {slide_path}: {exc}") from exc
    cfg = resolve_config(args)
    try:
        tiling = tile_slide(slide, cfg.tile_size)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = None
    if args.truth:
        truth = resample_truth(read_mask(args.truth), tiling)
    rows = []
    for r, c in tiling.tiles():
        p = out / f"r{r}_c{c}.png"
        write_rgb(p, tiling.crop(slide, r, c))
        label = "" if truth is None else ("tumor" if truth[r, c] else "not_tumor")
        rows.append(ManifestRow(p, label, slide_path.stem, args.split))
    write_manifest(out / "manifest.csv", rows)
    _write_json(out / "tile_meta.json", {
        "config": cfg.to_dict(),
        "slide": {"path": str(slide_path), "sha256": sha256_file(slide_path)},
        "truth": None if not args.truth else {"path": str(args.truth), "sha256": sha256_file(args.truth)},
        "grid": {"rows": tiling.rows, "cols": tiling.cols, "tile_size": tiling.tile_size},
    })
    print(f"wrote {len(rows)} tiles ({tiling.cols}x{tiling.rows}) to {out}")
    return 0


# ---------------------------------------------------------------- features

def _features_csv(path: Path, ids, labels, X) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch_id", "label"] + [f"f{i}" for i in range(X.shape[1])])
        for pid, lab, row in zip(ids, labels, X):
            w.writerow([pid, lab] + [repr(float(v)) for v in row])


def read_features_csv(path: Path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        ids, labels, rows = [], [], []
        for rec in r:
            ids.append(rec[0])
            labels.append(rec[1])
            rows.append([float(v) for v in rec[2:]])
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)
    return ids, labels, X


def extract_features(rows, cfg: RunConfig, lbp: LbpConfig | None = None, channels=None, gate=True):
    """Gate, histogram, fit dictionaries on train rows, project all rows.

    Returns (kept_rows, dictionaries, X, layout, reports).
    """
    lbp = lbp or cfg.features.lbp
    channels = channels or cfg.features.channels
    reports = []
    kept = []
    for r in rows:
        if gate and cfg.gate_training:
            rep = cellularity_report(read_rgb(r.patch_path), r.patch_id, cfg.nuclei)
            reports.append(rep)
            if not rep.accepted:
                continue
        kept.append(r)
    hists = compute_histograms(lambda i: read_rgb(kept[i].patch_path), len(kept), channels, lbp, cfg.threads)
    train_h = [h for h, r in zip(hists, kept) if r.split == "train"]
    if not train_h:
        raise DataError("the training split is empty (after gating)")
    dicts = fit_dictionaries(train_h, channels, lbp, cfg.features.theta)
    X, layout = project_all(hists, dicts)
    return kept, dicts, X, layout, reports


def _layout_json(layout):
    return [{"channel": s.channel.value, "dictionary": s.dictionary, "length": s.length} for s in layout]


def cmd_features(args) -> int:
    cfg = resolve_config(args)
    rows = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kept, dicts, X, layout, reports = extract_features(rows, cfg, gate=not args.no_gate)
    for d in dicts:
        d.save(out / f"dict_{d.channel.value}.json")
    for split in ("train", "test"):
        idx = [i for i, r in enumerate(kept) if r.split == split]
        _features_csv(out / f"features_{split}.csv", [kept[i].patch_id for i in idx],
                      [kept[i].label for i in idx], X[idx] if idx else np.zeros((0, X.shape[1])))
    if reports:
        write_reports(out / "cellularity.csv", reports, cfg.nuclei)
    meta = {
        "config": cfg.to_dict(),
        "manifest": {"path": str(args.manifest), "sha256": sha256_file(args.manifest)},
        "inputs": {r.patch_id: sha256_file(r.patch_path) for r in rows},
        "layout": _layout_json(layout),
        "dictionaries": {d.channel.value: {"file": f"dict_{d.channel.value}.json", "digest": d.digest, "M": d.M}
                         for d in dicts},
        "gated_out": [rep.patch_id for rep in reports if not rep.accepted],
    }
    _write_json(out / "features_meta.json", meta)
    print(f"{len(kept)} patches, dictionaries " + ", ".join(f"{d.channel.value}: M={d.M}" for d in dicts))
    return 0


def _load_feature_split(features_dir: Path, split: str) -> Dataset:
    meta_path = features_dir / "features_meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {meta_path}: {exc}") from exc
    layout = tuple(Segment(Channel(s["channel"]), s["dictionary"], int(s["length"])) for s in meta["layout"])
    ids, labels, X = read_features_csv(features_dir / f"features_{split}.csv")
    if not ids:
        raise DataError(f"no {split} rows in {features_dir}")
    return Dataset(X, labels, ids, layout), meta


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    features_dir = Path(args.features)
    ds, meta = _load_feature_split(features_dir, "train")
    hp = {k: v for k, v in cfg.classifier.items() if k != "kind"}
    if cfg.classifier["kind"].upper() == "RF":
        hp.setdefault("seed", cfg.seed)
        hp.setdefault("threads", cfg.threads)
    model = train(ds, cfg.classifier["kind"], **hp)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out, extra={
        "config": cfg.to_dict(),
        "features": {"dir": str(features_dir), "meta_sha256": sha256_file(features_dir / "features_meta.json")},
    })
    print(f"trained {model.kind} on {len(ds.y)} patches ({ds.dim} features) -> {out}")
    return 0


# ---------------------------------------------------------------- predict

def _load_dicts(dict_dir: Path, model) -> list[DominantPatternDictionary]:
    dicts = []
    for seg in model.layout:
        p = dict_dir / f"dict_{seg.channel.value}.json"
        try:
            dicts.append(DominantPatternDictionary.load(p))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot read dictionary {p}: {exc}") from exc
    return dicts


def predict_slide(slide_path: Path, model_path: Path, dict_dir: Path, cfg: RunConfig):
    """Tumor map of one slide file plus the tiling it was computed on."""
    model = load_model(model_path)
    dicts = _load_dicts(dict_dir, model)
    try:
        slide = read_rgb(slide_path)
    except OSError as exc:
        raise DataError(f"cannot read slide {slide_path}: {exc}") from exc
    cleanup = {"min_component": int(cfg.cleanup["min_component"]), "se": square(int(cfg.cleanup["se_radius"]))}
    prov = {
        "config": cfg.to_dict(),
        "slide_sha256": sha256_file(slide_path),
        "model_sha256": sha256_file(model_path),
        "skipped_tiles": "excluded from patch metrics, counted as not tumor in region metrics",
    }
    try:
        tiling = tile_slide(slide, cfg.tile_size)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return run_inference(slide, model, dicts, cfg.tile_size, cfg.nuclei, cfg.threads, cleanup, prov), tiling


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    model_path = Path(args.model)
    dict_dir = Path(args.dicts) if args.dicts else model_path.parent
    tmap, tiling = predict_slide(Path(args.slide), model_path, dict_dir, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tumormap.json").write_text(tmap.to_json())
    overlay, thumb = render_overlay(tmap, tiling)
    write_rgb(out / "overlay.png", overlay)
    write_rgb(out / "overlay_thumb.png", thumb)
    print(f"{int(tmap.positive.sum())} tumor tiles of {tmap.labels.size} -> {out}")
    return 0


# ---------------------------------------------------------------- evaluate

TABLE_ROWS = (("RLBP", ("H", "V")), ("LBP", ("H", "V")), ("RLBP", ("GRAY",)), ("LBP", ("GRAY",)))


def comparison_table(rows, cfg: RunConfig, classifiers=("KNN", "SVM", "RF")) -> list[dict]:
    """Every classifier against every descriptor (RLBP/LBP on H&V and on gray)."""
    results = []
    for variant, channels in TABLE_ROWS:
        lbp = LbpConfig(cfg.features.lbp.P, cfg.features.lbp.R, variant, cfg.features.lbp.snap_tol)
        kept, dicts, X, layout, _ = extract_features(rows, cfg, lbp, channels)
        tr = [i for i, r in enumerate(kept) if r.split == "train"]
        te = [i for i, r in enumerate(kept) if r.split == "test"]
        if not te:
            raise DataError("the test split is empty")
        dtr = Dataset(X[tr], [kept[i].label for i in tr], [kept[i].patch_id for i in tr], layout)
        dte = Dataset(X[te], [kept[i].label for i in te], [kept[i].patch_id for i in te], layout)
        for kind in classifiers:
            hp = {k: v for k, v in cfg.classifier.items() if k != "kind"} if kind == cfg.classifier["kind"].upper() else {}
            if kind == "RF":
                hp.setdefault("seed", cfg.seed)
            rep = evaluate(train(dtr, kind, **hp), dte)
            results.append({"classifier": kind, "descriptor": f"{variant} {'&'.join(channels)}", **rep.to_dict()})
    return results


def format_table(results) -> str:
    lines = [f"{'Method':<8}{'Descriptor':<14}{'Accuracy':>10}{'Precision':>11}{'Dice':>8}{'IoU':>8}"]
    for r in results:
        lines.append(f"{r['classifier']:<8}{r['descriptor']:<14}{r['accuracy']:>10.2f}{r['precision']:>11.2f}"
                     f"{r['dice']:>8.2f}{r['iou']:>8.2f}")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {"config": cfg.to_dict()}
    if args.table:
        if not args.manifest:
            raise UsageError("--table needs --manifest")
        rows = load_manifest(args.manifest)
        report["manifest_sha256"] = sha256_file(args.manifest)
        report["table"] = comparison_table(rows, cfg)
        print(format_table(report["table"]))
    if args.model:
        model_path = Path(args.model)
        model = load_model(model_path)
        report["model_sha256"] = sha256_file(model_path)
        if args.features:
            ds, _ = _load_feature_split(Path(args.features), "test")
            rep = evaluate(model, ds)
            report["patch_level"] = rep.to_dict()
            report["patch_level_note"] = "patches rejected by the cellularity gate are excluded"
            print(rep.table())
        if args.slide:
            dict_dir = Path(args.dicts) if args.dicts else model_path.parent
            tmap, tiling = predict_slide(Path(args.slide), model_path, dict_dir, cfg)
            report["tumormap"] = {"positive_tiles": int(tmap.positive.sum()), "tiles": int(tmap.labels.size)}
            if args.truth:
                truth = resample_truth(read_mask(args.truth), tiling)
                report["region"] = region_metrics(tmap.positive, truth)
                report["region"]["note"] = "skipped tiles count as not tumor; both-empty masks score 100"
                print(f"region IoU {report['region']['iou']:.2f}  Dice {report['region']['dice']:.2f}")
    elif not args.table:
        raise UsageError("evaluate needs --model (with --features and/or --slide) or --table --manifest")
    _write_json(out / "report.json", report)
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    (out / "patches").mkdir(parents=True, exist_ok=True)
    slide, roi = synth.make_slide(cfg.seed, tile=cfg.tile_size)
    write_rgb(out / "slide.png", slide)
    write_mask(out / "slide_truth.png", roi)
    rows = []
    angles = {}
    for s in synth.dataset_specs(args.n_train, args.n_test):
        patch, angle = synth.make_patch(cfg.seed, s.kind, s.index, cfg.tile_size, rotate=s.rotate)
        p = out / "patches" / f"{s.patch_id}.png"
        write_rgb(p, patch)
        angles[s.patch_id] = angle
        rows.append(ManifestRow(p, s.kind, s.slide_id, s.split))
    write_manifest(out / "manifest.csv", rows)
    _write_json(out / "synth_meta.json", {
        "config": cfg.to_dict(),
        "seed": cfg.seed, "tile_size": cfg.tile_size, "n_train": args.n_train, "n_test": args.n_test,
        "slide_layout": list(synth.SLIDE_LAYOUT), "rotations_deg": angles,
    })
    print(f"wrote slide, ground truth and {len(rows)} patches to {out}")
    return 0


# ---------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    from .bench import format_report, run_bench

    cfg = resolve_config(args)
    rep = run_bench(args.iterations, max(cfg.threads, 1) if args.threads else 4, args.patches, cfg.seed,
                    cfg.tile_size, args.classifier.upper() if args.classifier else "KNN")
    rep["config"] = cfg.to_dict()
    print(format_report(rep))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "bench.json", rep)
    return 0


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (file for train)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="tumormap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("tile", parents=[common], help="cut a slide into full tiles")
    s.add_argument("slide")
    s.add_argument("--tile-size", type=int)
    s.add_argument("--truth", help="ground-truth mask used to fill in the manifest labels")
    s.add_argument("--split", default="train", choices=("train", "test"))
    s.set_defaults(func=cmd_tile, out_required=True)

    s = sub.add_parser("features", parents=[common], help="dominant-pattern features for a manifest")
    s.add_argument("manifest")
    s.add_argument("--theta", type=float)
    s.add_argument("--variant", choices=("LBP", "RLBP"))
    s.add_argument("--channels", help="comma separated, e.g. H,V or GRAY")
    s.add_argument("--no-gate", action="store_true", help="keep patches below the cellularity threshold")
    s.set_defaults(func=cmd_features, out_required=True)

    s = sub.add_parser("train", parents=[common], help="train a classifier on extracted features")
    s.add_argument("features", help="directory written by 'features'")
    _classifier_flags(s)
    s.set_defaults(func=cmd_train, out_required=True)

    s = sub.add_parser("predict", parents=[common], help="tumor map of a slide")
    s.add_argument("slide")
    s.add_argument("--model", required=True)
    s.add_argument("--dicts", help="directory holding dict_<channel>.json (default: the model's directory)")
    s.add_argument("--tile-size", type=int)
    s.set_defaults(func=cmd_predict, out_required=True)

    s = sub.add_parser("evaluate", parents=[common], help="patch-level and region-level metrics")
    s.add_argument("--model")
    s.add_argument("--features", help="features directory; its test split is scored")
    s.add_argument("--slide")
    s.add_argument("--truth", help="ground-truth PNG, dark = ROI")
    s.add_argument("--dicts")
    s.add_argument("--tile-size", type=int)
    s.add_argument("--table", action="store_true", help="classifier x descriptor comparison on --manifest")
    s.add_argument("--manifest")
    _classifier_flags(s)
    s.set_defaults(func=cmd_evaluate, out_required=True)

    s = sub.add_parser("synth", parents=[common], help="synthetic slide, ground truth and labelled patches")
    s.add_argument("--n-train", type=int, default=800)
    s.add_argument("--n-test", type=int, default=400)
    s.add_argument("--tile-size", type=int)
    s.set_defaults(func=cmd_synth, out_required=True)

    s = sub.add_parser("bench", parents=[common], help="per-stage timings")
    s.add_argument("--iterations", type=int, default=20)
    s.add_argument("--patches", type=int, default=100, help="patches in the parallel throughput run")
    s.add_argument("--classifier", choices=("KNN", "SVM", "RF", "knn", "svm", "rf"))
    s.add_argument("--tile-size", type=int)
    s.set_defaults(func=cmd_bench, out_required=False)
    return p


def _classifier_flags(s):
    s.add_argument("--classifier", choices=("KNN", "SVM", "RF", "knn", "svm", "rf"))
    s.add_argument("--k", type=int)
    s.add_argument("--C", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--n-trees", type=int)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.out_required and not args.out:
        parser.error(f"{args.command}: --out is required")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"tumormap {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ManifestError, ModelFormatError, LayoutError, TileError, OSError, ValueError) as exc:
        print(f"tumormap {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
