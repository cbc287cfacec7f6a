"""Batch command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset, gru, pipeline
from .errors import DataError, FetalKeyError, ModelError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3

log = logging.getLogger("fetalkey")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args):
    fields = dict(model=getattr(args, "model", None),
                  metric_input=getattr(args, "input", None),
                  tta_catalogue=getattr(args, "tta_catalogue", None),
                  window=getattr(args, "window", None),
                  gru_weights=getattr(args, "weights", None),
                  min_quality=getattr(args, "min_quality", None),
                  nms_radius=getattr(args, "nms_radius", None),
                  top_k=getattr(args, "top_k", None),
                  workers=getattr(args, "workers", None),
                  seed=args.seed)
    if args.config:
        return pipeline.PipelineConfig.from_file(args.config, **fields)
    return pipeline.PipelineConfig(**{k: v for k, v in fields.items() if v is not None})


def _write_outputs(out, records, report, run_info):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "records.jsonl").open("w") as fh:
        pipeline.write_records(records, fh)
    (out / "keyframes.json").write_text(report.to_json())
    (out / "run.json").write_text(json.dumps(run_info, indent=2) + "\n")


def _select(cfg, quality, classes, source):
    report = pipeline.select_keyframes(quality, classes, cfg.min_quality, cfg.nms_radius,
                                       cfg.top_k, source=source)
    report.metadata.update(pipeline.report_metadata(cfg, {"source": source}))
    return report


def cmd_score(args):
    cfg = _config(args)
    t0 = time.perf_counter()
    frames = pipeline.ingest_frames(args.frames)
    series = pipeline.run_metric(cfg, frames)
    report = _select(cfg, series.quality, series.selected_class, "metric")
    _write_outputs(args.out, pipeline.frame_records(series), report,
                   {"workers": cfg.workers, "seconds": time.perf_counter() - t0, "frames": len(frames)})


def cmd_metric_only(args):
    cfg = _config(args)
    t0 = time.perf_counter()
    series = pipeline.run_metric(cfg)
    report = _select(cfg, series.quality, series.selected_class, "metric")
    _write_outputs(args.out, pipeline.frame_records(series), report,
                   {"workers": cfg.workers, "seconds": time.perf_counter() - t0, "frames": len(series)})


def cmd_gru_score(args):
    cfg = _config(args)
    net = pipeline.load_gru(cfg)
    t0 = time.perf_counter()
    frames = pipeline.ingest_frames(args.frames)
    scores = pipeline.run_gru_scoring(cfg, frames, model=net)
    records = [{"frame_index": i, "gru_quality": float(s)} for i, s in enumerate(scores)]
    report = _select(cfg, scores, None, "gru")
    _write_outputs(args.out, records, report,
                   {"workers": cfg.workers, "seconds": time.perf_counter() - t0, "frames": len(frames)})


def cmd_build_pairs(args):
    cfg = _config(args)
    pairs = pipeline.build_training_pairs(cfg, args.videos)
    pipeline.save_pairs(pairs, args.out, names=[Path(v).name for v in args.videos])
    print(f"wrote {len(pairs)} video(s) to {args.out}")


def cmd_gru_train(args):
    pairs, names = pipeline.load_pairs(args.pairs)
    if len(pairs) < 2:
        raise DataError("need at least two videos to form training and validation sets")
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(pairs))
    n_val = max(1, int(round(args.val_fraction * len(pairs))))
    val = [pairs[i] for i in order[:n_val]]
    train = [pairs[i] for i in order[n_val:]]
    cfg = gru.TrainConfig(learning_rate=args.lr, weight_decay=args.weight_decay,
                          max_epochs=args.epochs, early_stop_patience=args.patience,
                          seed=args.seed, optimizer=args.optimizer, momentum=args.momentum)
    model = (gru.load_weights(args.init_weights) if args.init_weights
             else gru.GruHeadModel.init(hidden=args.hidden, seed=args.seed))
    best, history = gru.train(model, train, val, cfg,
                              progress=lambda e, a, b: log.info("epoch %d train %.6g val %.6g", e, a, b))
    gru.save_weights(best, args.out)
    if args.history:
        Path(args.history).write_text(json.dumps(history.as_dict(), indent=2) + "\n")
    print(f"best epoch {history.best_epoch}, val loss {min(history.val_loss):.6g}, "
          f"stopped: {history.stop_reason}")


def cmd_select(args):
    cfg = _config(args)
    records = pipeline.read_jsonl(args.records)
    if not records:
        raise DataError(f"{args.records} has no records")
    records.sort(key=lambda r: r["frame_index"])
    try:
        quality = [r[args.field] for r in records]
    except KeyError as exc:
        raise DataError(f"records lack the field {args.field!r}") from exc
    classes = [r.get("selected_class") for r in records]
    classes = None if any(c is None for c in classes) else classes
    report = _select(cfg, quality, classes, "gru" if args.field == "gru_quality" else "metric")
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_split(args):
    manifest = dataset.read_manifest(args.manifest)
    result = dataset.patient_disjoint_split(manifest, args.train_fraction, args.seed)
    dataset.write_manifest(result.train, args.out_train)
    dataset.write_manifest(result.val, args.out_val)
    print(json.dumps({"train_images": len(result.train), "val_images": len(result.val),
                      "achieved_fraction": result.achieved_fraction, "warnings": result.warnings}))


def cmd_sample_epoch(args):
    manifest = dataset.read_manifest(args.manifest)
    if args.split:
        manifest = manifest.with_split(args.split)
    sample = dataset.epoch_undersample(manifest, args.epoch, args.seed, args.cap)
    dataset.write_manifest(sample, args.out)
    print(f"{len(sample)} entries written to {args.out}")


def cmd_stats(args):
    if not args.manifest and not args.videos:
        raise UsageError("stats needs --manifest and/or --videos")
    out = {}
    if args.manifest:
        out["manifest"] = dataset.manifest_stats(dataset.read_manifest(args.manifest))
    if args.videos:
        out["videos"] = dataset.round_stats(dataset.video_stats(dataset.read_video_list(args.videos)))
    text = json.dumps(out, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _selection_flags(p):
    p.add_argument("--min-quality", type=float, help="drop peaks below this quality (default 0.5)")
    p.add_argument("--nms-radius", type=int, help="suppression radius in frames (default 5)")
    p.add_argument("--top-k", type=int, help="maximum number of keyframes (default 10)")


def _metric_flags(p):
    p.add_argument("--window", type=int, help="stability window in frames (default 5)")
    p.add_argument("--tta-catalogue", help="JSON file overriding the default TTA transforms")


def build_parser():
    parser = _Parser(prog="fetalkey", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--config", help="JSON pipeline config; flags override its values")
    common.add_argument("--workers", type=int, help="classifier worker threads")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("score", parents=[common], help="quality metric + keyframes for a frame directory")
    p.add_argument("--frames", required=True)
    p.add_argument("--model", help="ONNX file or synthetic:<seed>")
    p.add_argument("--out", required=True)
    _metric_flags(p)
    _selection_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("metric-only", parents=[common], help="quality metric from probability records")
    p.add_argument("--input", required=True, help="JSONL with frame_index, transform_index, p0..p4")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int)
    _selection_flags(p)
    p.set_defaults(func=cmd_metric_only)

    p = sub.add_parser("gru-score", parents=[common], help="GRU quality scores + keyframes")
    p.add_argument("--frames", required=True)
    p.add_argument("--model", help="ONNX file or synthetic:<seed>")
    p.add_argument("--weights", help="GRU weights file")
    p.add_argument("--out", required=True)
    _selection_flags(p)
    p.set_defaults(func=cmd_gru_score)

    p = sub.add_parser("build-pairs", parents=[common], help="features + metric targets for GRU training")
    p.add_argument("--videos", nargs="+", required=True, help="frame directories, one per video")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _metric_flags(p)
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("gru-train", parents=[common], help="train the GRU head on a pairs file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--hidden", type=int, default=gru.DEFAULT_HIDDEN)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--init-weights")
    p.add_argument("--history", help="write the per-epoch losses here")
    p.set_defaults(func=cmd_gru_train)

    p = sub.add_parser("select", parents=[common], help="keyframes from an existing records file")
    p.add_argument("--records", required=True)
    p.add_argument("--field", choices=("quality", "gru_quality"), default="quality")
    p.add_argument("--out")
    _selection_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("split-dataset", parents=[common], help="patient-disjoint train/val split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-val", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("sample-epoch", parents=[common], help="per-epoch NotABrain undersampling")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--cap", type=int, default=dataset.DEFAULT_CAP)
    p.add_argument("--split", help="only use entries with this split value (e.g. train)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_epoch)

    p = sub.add_parser("stats", parents=[common], help="manifest and video-list statistics")
    p.add_argument("--manifest")
    p.add_argument("--videos")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (FetalKeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
