"""Command-line front end: dataset | train | predict | refine | eval | pipeline.

Every command resolves its configuration (defaults < config file < flags),
logs the resolved values to stderr, and is byte-reproducible for a fixed
seed with --threads 1.  Exit codes: 0 success, 1 usage error, 2 data error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import benchmark, dataset, network, pnm, refine as refine_mod, synthetic
from .config import ENV_CONFIG, UsageError, format_config, parse_scales, resolve_config
from .errors import CorpusError, DataError, InternalError
from .inference import VotingConfig, detect_contours
from .raster import RasterImage

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _log_config(resolved: dict) -> None:
    _log("resolved config:")
    for line in format_config(resolved).splitlines():
        _log("  " + line)


def _train_config(cfg: dict) -> network.TrainConfig:
    return network.TrainConfig(
        learning_rate=cfg["learning_rate"],
        momentum=cfg["momentum"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        weight_init_std=cfg["weight_init_std"],
        arch=cfg["arch"],
        scale_mode=cfg["scale_mode"],
    )


def _read_map(path: Path) -> np.ndarray:
    if path.suffix == ".cfr":
        return pnm.read_raw_map(path)
    img = pnm.read_pnm(path)
    return img.plane


def _write_map(base: Path, map2d: np.ndarray) -> None:
    """Write <base>.pgm and <base>.cfr, or just the one an extension requests."""
    if base.suffix == ".pgm":
        pnm.write_pnm(base, RasterImage(map2d))
    elif base.suffix == ".cfr":
        pnm.write_raw_map(base, map2d)
    else:
        pnm.write_pnm(base.with_suffix(".pgm"), RasterImage(map2d))
        pnm.write_raw_map(base.with_suffix(".cfr"), map2d)


# ---------------------------------------------------------------------------
# commands


def cmd_dataset(args) -> int:
    cfg = resolve_config(args.config, {"seed": args.seed, "grid_threshold": args.grid_threshold})
    _log_config(cfg)
    manifest = dataset.build_dataset(args.corpus_root, args.split, cfg["seed"], cfg["grid_threshold"])
    dataset.save_dataset(manifest, args.out)
    print(f"raw_positives={manifest.raw_counts[0]}")
    print(f"raw_negatives={manifest.raw_counts[1]}")
    print(f"balanced_positives={manifest.counts[0]}")
    print(f"balanced_negatives={manifest.counts[1]}")
    print(f"total_samples={len(manifest.samples)}")
    print(f"seed={manifest.seed}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(
        args.config,
        {
            "seed": args.seed,
            "learning_rate": args.learning_rate,
            "momentum": args.momentum,
            "batch_size": args.batch_size,
            "epochs": args.epochs,
            "weight_init_std": args.weight_init_std,
            "arch": args.arch,
            "scale_mode": args.scale_mode,
        },
    )
    _log_config(cfg)
    manifest = dataset.load_dataset(args.dataset)
    val_manifest = dataset.load_dataset(args.val) if args.val else None
    try:
        tc = _train_config(cfg)
        model, history = network.train(manifest, tc, val_manifest)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    network.save_model(model, args.out)
    metrics_path = Path(args.metrics) if args.metrics else Path(args.out).with_suffix(".metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for m in history:
            val_loss = "" if m.val_loss is None else f"{m.val_loss:.9f}"
            val_acc = "" if m.val_acc is None else f"{m.val_acc:.9f}"
            fh.write(f"{m.epoch},{m.train_loss:.9f},{m.train_acc:.9f},{val_loss},{val_acc}\n")
    last = history[-1]
    print(f"epochs={last.epoch}")
    print(f"final_train_loss={last.train_loss:.6f}")
    print(f"final_train_acc={last.train_acc:.6f}")
    if last.val_acc is not None:
        print(f"final_val_loss={last.val_loss:.6f}")
        print(f"final_val_acc={last.val_acc:.6f}")
    return EXIT_OK


def _predict_one(model, img_path: Path, out_dir: Path, voting: VotingConfig) -> None:
    image = pnm.read_pnm(img_path)
    coarse = detect_contours(model, image, voting)
    _write_map(out_dir / img_path.stem, coarse.map.plane)


def cmd_predict(args) -> int:
    cfg = resolve_config(args.config, {"stride": args.stride, "threads": args.threads})
    _log_config(cfg)
    model = network.load_model(args.model)
    voting = VotingConfig(stride=cfg["stride"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in args.images]
    failures = []

    def run(p: Path):
        try:
            _predict_one(model, p, out_dir, voting)
            return None
        except (DataError, ValueError, OSError) as exc:
            return (p, str(exc))

    if cfg["threads"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            results = list(pool.map(run, paths))
    else:
        results = [run(p) for p in paths]
    for res in results:
        if res is not None:
            failures.append(res)
            _log(f"predict failed for {res[0]}: {res[1]}")
        else:
            pass
    print(f"predicted={len(paths) - len(failures)}")
    print(f"failed={len(failures)}")
    return EXIT_DATA if failures else EXIT_OK


def cmd_refine(args) -> int:
    cfg = resolve_config(
        args.config,
        {"scales": args.scales, "y_patch": args.y_patch, "y_stride": args.y_stride},
    )
    _log_config(cfg)
    coarse = _read_map(Path(args.coarse))
    image = pnm.read_pnm(args.image)
    rc = refine_mod.RefineConfig(parse_scales(cfg["scales"]), cfg["y_patch"], cfg["y_stride"])
    try:
        fine = refine_mod.refine(RasterImage(coarse), image, rc)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    _write_map(Path(args.out), fine.map.plane)
    return EXIT_OK


def _gt_ids(gt_root: Path) -> list[str]:
    ids = sorted(p.name[: -len(".gt")] for p in gt_root.iterdir() if p.is_dir() and p.name.endswith(".gt"))
    if not ids:
        raise DataError(f"no <image-id>.gt directories under {gt_root}")
    return ids


def cmd_eval(args) -> int:
    cfg = resolve_config(
        args.config,
        {"tolerance": args.tolerance, "thresholds": args.thresholds, "threads": args.threads},
    )
    _log_config(cfg)
    pred_dir = Path(args.pred_dir)
    gt_root = Path(args.gt_root)
    if not gt_root.is_dir():
        raise DataError(f"ground-truth directory not found: {gt_root}")
    ids = _gt_ids(gt_root)
    missing = []
    jobs = []
    for image_id in ids:
        pred_path = pred_dir / f"{image_id}.cfr"
        if not pred_path.is_file():
            pred_path = pred_dir / f"{image_id}.pgm"
        if not pred_path.is_file():
            missing.append(image_id)
            continue
        gt_paths = sorted((gt_root / f"{image_id}.gt").glob("*.pgm"))
        if not gt_paths:
            raise CorpusError([(image_id, "ground-truth directory has no .pgm maps")])
        jobs.append((image_id, pred_path, gt_paths))
    if missing:
        raise DataError(f"missing predictions for: {', '.join(missing)}")
    thresholds = benchmark.default_thresholds(cfg["thresholds"])

    def run(job):
        image_id, pred_path, gt_paths = job
        soft = np.clip(_read_map(pred_path), 0.0, 1.0)
        gts = [pnm.read_pnm(p).plane > 0 for p in gt_paths]
        return benchmark.pr_curve(soft, gts, thresholds, cfg["tolerance"], image_id)

    if cfg["threads"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            curves = list(pool.map(run, jobs))
    else:
        curves = [run(j) for j in jobs]
    scores = benchmark.aggregate(curves)
    report_path = Path(args.report) if args.report else pred_dir / "scores.txt"
    csv_path = Path(args.csv) if args.csv else pred_dir / "pr_curve.csv"
    benchmark.write_report(scores, report_path, {"tolerance": cfg["tolerance"], "thresholds": cfg["thresholds"]})
    benchmark.write_pr_csv(scores, csv_path)
    print(f"ods_f={scores.ods_f:.6f}")
    print(f"ods_threshold={scores.ods_threshold:.6f}")
    print(f"ois_f={scores.ois_f:.6f}")
    print(f"ap={scores.ap:.6f}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = resolve_config(args.config, {"seed": args.seed, "stride": args.stride, "epochs": args.epochs})
    _log_config(cfg)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    corpus = Path(args.corpus) if args.corpus else workdir / "corpus"
    if args.synth_images:
        n = args.synth_images
        splits = {"train": max(1, int(n * 0.7)), "val": max(1, int(n * 0.1))}
        splits["test"] = max(1, n - splits["train"] - splits["val"])
        _log(f"generating synthetic corpus under {corpus} ({splits})")
        synthetic.generate_corpus(corpus, splits, seed=cfg["seed"], size=args.synth_size)

    train_file = workdir / "train.cfd"
    val_file = workdir / "val.cfd"
    model_file = workdir / "model.cfm"
    for split, out in (("train", train_file), ("val", val_file)):
        manifest = dataset.build_dataset(corpus, split, cfg["seed"], cfg["grid_threshold"])
        dataset.save_dataset(manifest, out)
        print(f"{split}_samples={len(manifest.samples)} (raw {manifest.raw_counts[0]}+/{manifest.raw_counts[1]}-)")

    tc = _train_config(cfg)
    model, history = network.train(dataset.load_dataset(train_file), tc, dataset.load_dataset(val_file))
    network.save_model(model, model_file)
    print(f"train_acc={history[-1].train_acc:.4f} val_acc={history[-1].val_acc:.4f}")

    voting = VotingConfig(stride=cfg["stride"])
    coarse_dir = workdir / "coarse"
    fine_dir = workdir / "fine"
    coarse_dir.mkdir(exist_ok=True)
    fine_dir.mkdir(exist_ok=True)
    rc = refine_mod.RefineConfig(parse_scales(cfg["scales"]), cfg["y_patch"], cfg["y_stride"])
    test_dir = corpus / "test"
    images = sorted(test_dir.glob("*.ppm"))
    if not images:
        raise DataError(f"no test images under {test_dir}")
    for img_path in images:
        image = pnm.read_pnm(img_path)
        coarse = detect_contours(model, image, voting)
        _write_map(coarse_dir / img_path.stem, coarse.map.plane)
        fine = refine_mod.refine(coarse, image, rc)
        _write_map(fine_dir / img_path.stem, fine.map.plane)

    thresholds = benchmark.default_thresholds(cfg["thresholds"])
    results = {}
    for name, where in (("coarse", coarse_dir), ("fine", fine_dir)):
        curves = []
        for img_path in images:
            gts = [pnm.read_pnm(p).plane > 0 for p in sorted((test_dir / f"{img_path.stem}.gt").glob("*.pgm"))]
            soft = np.clip(pnm.read_raw_map(where / f"{img_path.stem}.cfr"), 0.0, 1.0)
            curves.append(benchmark.pr_curve(soft, gts, thresholds, cfg["tolerance"], img_path.stem))
        scores = benchmark.aggregate(curves)
        benchmark.write_report(scores, workdir / f"scores_{name}.txt", {"tolerance": cfg["tolerance"]})
        benchmark.write_pr_csv(scores, workdir / f"pr_{name}.csv")
        results[name] = scores
        print(f"{name}_ods={scores.ods_f:.4f} {name}_ois={scores.ois_f:.4f} {name}_ap={scores.ap:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="contourkit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help=f"key=value config file (default: ${ENV_CONFIG})")

    p = sub.add_parser("dataset", help="build a balanced patch dataset from a corpus split")
    p.add_argument("corpus_root")
    p.add_argument("split")
    p.add_argument("out", help="output dataset file (CFD1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-threshold", type=float, dest="grid_threshold", help="positive-tile edge-sum threshold")
    add_common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the patch classifier on a dataset file")
    p.add_argument("dataset")
    p.add_argument("out", help="output model file (CFM1)")
    p.add_argument("--val", help="validation dataset file")
    p.add_argument("--metrics", help="per-epoch metrics CSV (default: <out>.metrics.csv)")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-init-std", type=float, dest="weight_init_std")
    p.add_argument("--arch", help="architecture string, e.g. conv:20x5,relu,maxpool,...")
    p.add_argument("--scale-mode", dest="scale_mode", choices=["multi", "s16", "s32", "s64"])
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="slide the classifier over images, write coarse maps")
    p.add_argument("model")
    p.add_argument("out_dir")
    p.add_argument("images", nargs="+", help="input images (.ppm/.pgm)")
    p.add_argument("--stride", type=int)
    p.add_argument("--threads", type=int)
    add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("refine", help="refine a coarse map against its image gradient")
    p.add_argument("coarse", help="coarse map (.pgm or .cfr)")
    p.add_argument("image")
    p.add_argument("out", help="output base path (.pgm/.cfr chosen by extension, both if none)")
    p.add_argument("--scales", help="comma-separated scale indices, e.g. 2 or 1,2")
    p.add_argument("--y-patch", type=int, dest="y_patch")
    p.add_argument("--y-stride", type=int, dest="y_stride")
    add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score predictions against ground truth (ODS/OIS/AP)")
    p.add_argument("pred_dir")
    p.add_argument("gt_root", help="directory containing <image-id>.gt/ labeler maps")
    p.add_argument("--tolerance", type=float, help="match radius as a fraction of the image diagonal")
    p.add_argument("--thresholds", type=int, help="number of evenly spaced thresholds")
    p.add_argument("--threads", type=int)
    p.add_argument("--report", help="score report path (default: <pred_dir>/scores.txt)")
    p.add_argument("--csv", help="PR curve CSV path (default: <pred_dir>/pr_curve.csv)")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="dataset -> train -> predict -> refine -> eval in one run")
    p.add_argument("workdir")
    p.add_argument("--corpus", help="existing corpus root (default: <workdir>/corpus)")
    p.add_argument("--synth-images", type=int, dest="synth_images", help="generate a synthetic corpus of N images first")
    p.add_argument("--synth-size", type=int, dest="synth_size", default=160, help="synthetic image side length")
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--epochs", type=int)
    add_common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return EXIT_USAGE
    except CorpusError as exc:
        _log("data error:")
        for image_id, msg in exc.problems:
            _log(f"  {image_id}: {msg}")
        return EXIT_DATA
    except (DataError, OSError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA
    except InternalError as exc:
        _log(f"internal error: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
