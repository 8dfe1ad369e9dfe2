"""Command-line entry point: ``graphloc <subcommand> ...``.

Errors exit nonzero with one ``error code=<CODE> message=<text>`` line on
stderr.  ``GRAPHLOC_OUTPUT_DIR`` supplies the output directory when ``--out``
is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import SynthSpec, load_manifest, synth_generate
from .errors import ConfigError, GraphLocError, InputError
from .evaluate import DEFAULT_IOUS, classification_map, map_at_iou, per_frame_map
from .gradcheck import format_report, gradcheck_model
from .localize import read_detections, write_detections_csv, write_detections_json
from .model import ModelConfig, forward, init_params
from .pipeline import VARIANTS, dump_graph, predict, run_variant
from .plot import write_timeline
from .trainer import TrainConfig, enumerate_pairs, load_checkpoint, train

OUTPUT_ENV = "GRAPHLOC_OUTPUT_DIR"
log = logging.getLogger("graphloc")


def _pair(kind=int):
    def parse(text):
        parts = text.split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected MIN,MAX, got {text!r}")
        return tuple(kind(p) for p in parts)
    return parse


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV)
    if not out:
        raise ConfigError(f"no output directory: pass --out or set {OUTPUT_ENV}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` overrides; bare keys may name model fields."""
    data = json.loads(json.dumps(data))
    train_keys = {f.name for f in fields(TrainConfig)} - {"model"}
    model_keys = {f.name for f in fields(ModelConfig)}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = _parse_value(raw)
        if key.startswith("model."):
            key = key[len("model."):]
            if key not in model_keys:
                raise ConfigError(f"unknown model config key {key!r}")
            data.setdefault("model", {})[key] = value
        elif key in train_keys:
            data[key] = value
        elif key in model_keys:
            data.setdefault("model", {})[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return data


def build_train_config(args, num_classes: int, input_dim: int | None = None) -> TrainConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    data.setdefault("model", {}).setdefault("num_classes", num_classes)
    if input_dim is not None:
        data["model"].setdefault("input_dim", input_dim)
    flags = {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr, "seed": args.seed}
    data = apply_overrides(data, [f"{k}={json.dumps(v)}" for k, v in flags.items() if v is not None]
                           + list(args.set or []))
    return TrainConfig.from_json(data)


def _feature_dim(manifest) -> int | None:
    if not manifest.videos:
        return None
    return manifest.load_features(manifest.videos[0]).shape[1]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.num_classes, train_videos=args.train_videos, test_videos=args.test_videos,
                     segments_range=args.segments, classes_per_video=args.classes_per_video,
                     instances_range=args.instances, action_length_range=args.action_length,
                     action_fraction_range=args.action_fraction, action_strength_range=args.action_strength,
                     strength_profile=args.strength_profile,
                     feature_dim=args.feature_dim, cluster_separation=args.cluster_separation,
                     noise_sigma=args.noise_sigma, background_modes=args.background_modes,
                     segment_duration=args.segment_duration, seed=args.seed)
    ds = synth_generate(spec, _out_dir(args))
    print(ds.train_path)
    print(ds.test_path)
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = build_train_config(args, manifest.num_classes, _feature_dim(manifest))
    out = _out_dir(args)
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=1) + "\n")
    ckpt = train(manifest, cfg, out, resume=args.resume)
    print(ckpt)
    return 0


def cmd_predict(args) -> int:
    manifest = load_manifest(args.manifest)
    state, cfg = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    graphs = out / "graphs" if args.dump_graphs else None
    pred = predict(state.params, cfg.model, manifest, threshold=args.threshold, filter_top=args.filter_top,
                   dump_graphs_to=graphs)
    write_detections_csv(out / "detections.csv", pred.detections, manifest.class_names)
    write_detections_json(out / "detections.json", pred.detections, manifest.class_names)
    with open(out / "video_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id"] + list(manifest.class_names))
        for vid, s in pred.video_scores.items():
            w.writerow([vid] + [repr(float(x)) for x in s])
    (out / "segment_scores.json").write_text(
        json.dumps({vid: s.tolist() for vid, s in pred.segment_scores.items()}) + "\n")
    print(out / "detections.csv")
    return 0


def _read_video_scores(path, class_names) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[1:] != list(class_names):
            raise InputError(f"{path}: class columns do not match the manifest")
        return {row[0]: np.array([float(x) for x in row[1:]]) for row in reader}


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    dets = read_detections(args.detections, manifest.class_names)
    report = map_at_iou(dets, manifest, args.iou)
    base = Path(args.detections).parent
    scores_path = Path(args.video_scores) if args.video_scores else base / "video_scores.csv"
    if scores_path.exists():
        report.classification_map = classification_map(_read_video_scores(scores_path, manifest.class_names),
                                                       manifest)
    if args.per_frame:
        seg_path = Path(args.segment_scores) if args.segment_scores else base / "segment_scores.json"
        seg = {k: np.asarray(v) for k, v in json.loads(seg_path.read_text()).items()}
        report.per_frame_map = per_frame_map(seg, manifest)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out or os.environ.get(OUTPUT_ENV):
        out = _out_dir(args)
        (out / "report.txt").write_text(text)
        (out / "report.csv").write_text(report.to_csv())
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        state, tcfg = load_checkpoint(args.checkpoint)
        cfg, params = tcfg.model, state.params
    else:
        cfg = ModelConfig(num_classes=args.classes, input_dim=args.input_dim, hidden_dim=args.hidden_dim,
                          phi_dim=args.hidden_dim, graph_mode="identity" if args.identity else "learned",
                          casl_target="graph_output" if args.identity else "phi_output")
        params = init_params(cfg, rng)
    if args.manifest:
        manifest = load_manifest(args.manifest)
        videos = [manifest.load_features(v, cfg.input_dim)[:args.segments] for v in manifest.videos[:2]]
        labels = [frozenset(v.labels) for v in manifest.videos[:2]]
    else:
        videos = [rng.standard_normal((args.segments, cfg.input_dim)) for _ in range(2)]
        labels = [frozenset({0, 1 % cfg.num_classes}), frozenset({0})]
    pairs = enumerate_pairs(labels)
    results = gradcheck_model(params, cfg, videos, labels, pairs, args.d, corrupt=args.corrupt)
    sys.stdout.write(format_report(results))
    return 0 if all(r.ok for r in results) else 1


def cmd_ablate(args) -> int:
    train_m = load_manifest(args.train)
    test_m = load_manifest(args.test)
    base = build_train_config(args, train_m.num_classes, _feature_dim(train_m))
    out = _out_dir(args)
    rows = []
    for name in args.variants:
        report = run_variant(name, train_m, test_m, base, out / name.replace("=", "_").replace("+", "_"), args.iou)
        rows.append((name, [report.map[t] for t in args.iou], report.classification_map))
        log.info("%s: %s", name, rows[-1])
    ranked = sorted(range(len(rows)), key=lambda i: -rows[i][1][-1])
    rank = {i: r + 1 for r, i in enumerate(ranked)}
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant"] + [f"mAP@{t}" for t in args.iou] + ["cls_mAP", "rank"])
        for i, (name, maps, cls) in enumerate(rows):
            w.writerow([name] + [f"{m:.4f}" for m in maps] + [f"{cls:.4f}", rank[i]])
    sys.stdout.write((out / "ablation.csv").read_text())
    return 0


def cmd_plot(args) -> int:
    manifest = load_manifest(args.manifest)
    sources = {}
    for item in args.detections or []:
        name, _, path = item.rpartition("=")
        sources[name or Path(path).stem] = read_detections(path, manifest.class_names)
    out = _out_dir(args)
    svg, table = write_timeline(manifest, args.video, sources, out / f"timeline_{args.video}")
    print(svg)
    return 0


def cmd_dump_graph(args) -> int:
    manifest = load_manifest(args.manifest)
    state, cfg = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    videos = [manifest.video(args.video)] if args.video else manifest.videos
    for v in videos:
        res = forward(manifest.load_features(v, cfg.model.input_dim), state.params, cfg.model, "eval")
        for p in dump_graph(res, v.video_id, out):
            print(p)
    return 0


# ---------------------------------------------------------------------------


def _train_flags(p) -> None:
    p.add_argument("--config", help="JSON TrainConfig document")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphloc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature dataset")
    d = SynthSpec()
    p.add_argument("--num-classes", type=int, default=d.num_classes)
    p.add_argument("--train-videos", type=int, default=d.train_videos)
    p.add_argument("--test-videos", type=int, default=d.test_videos)
    p.add_argument("--segments", type=_pair(), default=d.segments_range, metavar="MIN,MAX")
    p.add_argument("--classes-per-video", type=_pair(), default=d.classes_per_video, metavar="MIN,MAX")
    p.add_argument("--instances", type=_pair(), default=d.instances_range, metavar="MIN,MAX")
    p.add_argument("--action-length", type=_pair(), default=d.action_length_range, metavar="MIN,MAX")
    p.add_argument("--action-fraction", type=_pair(float), default=None, metavar="MIN,MAX")
    p.add_argument("--action-strength", type=_pair(float), default=d.action_strength_range, metavar="MIN,MAX")
    p.add_argument("--strength-profile", choices=("iid", "peaked"), default=d.strength_profile)
    p.add_argument("--feature-dim", type=int, default=d.feature_dim)
    p.add_argument("--cluster-separation", type=float, default=d.cluster_separation)
    p.add_argument("--noise-sigma", type=float, default=d.noise_sigma)
    p.add_argument("--background-modes", type=int, default=d.background_modes)
    p.add_argument("--segment-duration", type=float, default=d.segment_duration)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="detections and video scores for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--filter-top", type=int, default=None, help="only emit the K top-ranked classes per video")
    p.add_argument("--dump-graphs", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score detections against a manifest")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--iou", type=_floats, default=DEFAULT_IOUS)
    p.add_argument("--video-scores")
    p.add_argument("--per-frame", action="store_true")
    p.add_argument("--segment-scores")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--input-dim", type=int, default=2048)
    p.add_argument("--hidden-dim", type=int, default=1024)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--identity", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score several model variants")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--variants", type=lambda s: [v for v in s.split(",") if v], default=list(VARIANTS[:4]))
    p.add_argument("--iou", type=_floats, default=DEFAULT_IOUS)
    p.add_argument("--out")
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="SVG timeline of ground truth and detections")
    p.add_argument("--manifest", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--detections", action="append", metavar="[NAME=]PATH")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("dump-graph", help="write adjacency matrices as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--video")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_graph)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(message)s")
    try:
        return args.func(args)
    except GraphLocError as e:
        print(f"error code={e.code} message={e}", file=sys.stderr)
        return 1
    except (OSError, KeyError) as e:
        code = "IO_ERROR" if isinstance(e, OSError) else "NOT_FOUND"
        print(f"error code={code} message={e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
