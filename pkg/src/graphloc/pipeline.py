"""End-to-end helpers: predict on a manifest, score predictions, train variants."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetManifest
from .errors import ConfigError
from .evaluate import DEFAULT_IOUS, EvalReport, classification_map, map_at_iou, per_frame_map
from .localize import Detection, classify_video, detect, detection_threshold, top_classes
from .model import DStrategy, ModelConfig, ModelParams, forward
from .trainer import TrainConfig, load_checkpoint, train


@dataclass
class Prediction:
    detections: list[Detection]
    video_scores: dict[str, np.ndarray]
    segment_scores: dict[str, np.ndarray]


def write_matrix_csv(path, m: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([repr(float(x)) for x in row])


def dump_graph(out, video_id: str, out_dir) -> list[Path]:
    """Write raw / masked / normalized adjacency CSVs for one forward pass."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if out.affinity is None:
        mats = {"raw": np.eye(out.z.rows)}
        mats["masked"] = mats["normalized"] = mats["raw"]
    else:
        mats = {"raw": out.affinity.raw.value, "masked": out.affinity.masked.value,
                "normalized": out.affinity.normalized.value}
    for kind, m in mats.items():
        p = out_dir / f"{video_id}_{kind}.csv"
        write_matrix_csv(p, m)
        paths.append(p)
    return paths


def predict(params: ModelParams, config: ModelConfig, manifest: DatasetManifest,
            threshold: float | None = None, filter_top: int | None = None,
            dump_graphs_to=None) -> Prediction:
    """Eval-mode forward over every video; detections for all (or top-ranked) classes."""
    if threshold is None:
        threshold = detection_threshold()
    dets: list[Detection] = []
    video_scores, seg_scores = {}, {}
    d = config.d_strategy.eval_d
    for v in manifest.videos:
        x = manifest.load_features(v, config.input_dim)
        out = forward(x, params, config, "eval")
        s = out.scores.value
        seg_scores[v.video_id] = s
        video_scores[v.video_id] = classify_video(s, d)
        classes = top_classes(video_scores[v.video_id], filter_top) if filter_top else None
        dets.extend(detect(s, v.video_id, v.segment_duration, threshold, classes))
        if dump_graphs_to is not None:
            dump_graph(out, v.video_id, dump_graphs_to)
    return Prediction(dets, video_scores, seg_scores)


def predict_checkpoint(path, manifest: DatasetManifest, **kw) -> Prediction:
    state, cfg = load_checkpoint(path)
    return predict(state.params, cfg.model, manifest, **kw)


def evaluate_prediction(pred: Prediction, manifest: DatasetManifest,
                        thresholds: Sequence[float] = DEFAULT_IOUS, frames: bool = False) -> EvalReport:
    report = map_at_iou(pred.detections, manifest, thresholds)
    report.classification_map = classification_map(pred.video_scores, manifest)
    if frames:
        report.per_frame_map = per_frame_map(pred.segment_scores, manifest)
    return report


# ---------------------------------------------------------------------------
# ablation variants

VARIANTS = ("baseline", "MCASL", "L1", "L1+MCASL", "FC-CASL-1024", "FC-CASL-2048", "CASL-Graph",
            "d=1", "d=2", "d=4", "d=8", "d=random")


def variant_config(name: str, base: TrainConfig) -> TrainConfig:
    """Derive a variant's training config from the full-model ``base``."""
    m = base.model
    learned = dict(graph_mode="learned", hidden_dim=m.hidden_dim if m.graph_mode == "learned" else 1024)
    table = {
        "baseline": dict(learned, use_l1=False, casl_target="off"),
        "MCASL": dict(learned, use_l1=False, casl_target="phi_output"),
        "L1": dict(learned, use_l1=True, casl_target="off"),
        "L1+MCASL": dict(learned, use_l1=True, casl_target="phi_output"),
        "FC-CASL-1024": dict(graph_mode="identity", hidden_dim=1024, use_l1=False, casl_target="graph_output"),
        "FC-CASL-2048": dict(graph_mode="identity", hidden_dim=2048, use_l1=False, casl_target="graph_output"),
        "CASL-Graph": dict(learned, use_l1=True, casl_target="graph_output"),
    }
    if name in table:
        model = replace(m, **table[name])
    elif name.startswith("d="):
        model = replace(m, **learned, use_l1=True, casl_target="phi_output",
                        d_strategy=DStrategy.parse(name[2:]))
    else:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return replace(base, model=model)


def run_variant(name: str, train_manifest: DatasetManifest, test_manifest: DatasetManifest,
                base: TrainConfig, out_dir, thresholds: Sequence[float] = DEFAULT_IOUS) -> EvalReport:
    cfg = variant_config(name, base)
    ckpt = train(train_manifest, cfg, out_dir)
    state, _ = load_checkpoint(ckpt)
    return evaluate_prediction(predict(state.params, cfg.model, test_manifest), test_manifest, thresholds)
