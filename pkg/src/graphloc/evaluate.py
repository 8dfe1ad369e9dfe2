"""Detection and classification scoring: tIoU matching, all-point AP, mAP."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import DatasetManifest
from .errors import ContractError, InputError
from .localize import Detection

DEFAULT_IOUS = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class GTInstance:
    video_id: str
    class_id: int
    start: float
    end: float


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    if not (a[0] < a[1] and b[0] < b[1]):
        raise ContractError(f"degenerate interval in tiou({a}, {b})")
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    return inter / (max(a[1], b[1]) - min(a[0], b[0]))


def sort_detections(dets: Sequence[Detection]) -> list[Detection]:
    """Confidence descending; ties by earlier start, then class, video, end."""
    return sorted(dets, key=lambda d: (-d.confidence, d.start, d.class_id, d.video_id, d.end))


def match_detections(dets: Sequence[Detection], gts: Sequence[GTInstance], iou_thresh: float):
    """Greedy confidence-ordered matching of one class's detections.

    Returns (sorted detections, list of booleans: True = TP).  A ground truth
    is matched at most once, to the detection reaching it first with the
    highest tIoU >= ``iou_thresh`` among the still-unmatched ones.
    """
    ordered = sort_detections(dets)
    by_video: dict[str, list[int]] = {}
    for i, g in enumerate(gts):
        by_video.setdefault(g.video_id, []).append(i)
    used = [False] * len(gts)
    flags = []
    for det in ordered:
        best, best_iou = -1, -1.0
        for gi in by_video.get(det.video_id, ()):
            if used[gi]:
                continue
            ov = tiou((det.start, det.end), (gts[gi].start, gts[gi].end))
            if ov >= iou_thresh and ov > best_iou:
                best, best_iou = gi, ov
        if best >= 0:
            used[best] = True
        flags.append(best >= 0)
    return ordered, flags


def average_precision(tp_sequence: Sequence[bool], num_gt: int) -> float:
    """All-point AP: sum of precision at each TP rank, over ``num_gt``."""
    if num_gt < 1:
        raise ContractError("average precision is undefined without ground truth")
    tp = np.asarray(tp_sequence, dtype=bool)
    if tp.size == 0:
        return 0.0
    hits = np.cumsum(tp)
    precision = hits / np.arange(1, tp.size + 1)
    return float(precision[tp].sum() / num_gt)


def ground_truth_instances(manifest: DatasetManifest) -> list[GTInstance]:
    return [GTInstance(v.video_id, g.class_id, g.start, g.end) for v in manifest.videos for g in v.ground_truth]


@dataclass
class EvalReport:
    class_names: list[str]
    thresholds: tuple[float, ...] = ()
    ap: dict[float, dict[int, float]] = field(default_factory=dict)
    map: dict[float, float] = field(default_factory=dict)
    classification_map: float | None = None
    per_frame_map: float | None = None
    num_detections: int = 0
    num_ground_truth: int = 0
    num_matched: dict[float, int] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        if self.thresholds:
            lines.append("mAP@IoU  " + "  ".join(f"{t:.2f}" for t in self.thresholds))
            lines.append("mAP      " + "  ".join(f"{self.map[t]:.3f}" for t in self.thresholds))
            for c in sorted(next(iter(self.ap.values()), {})):
                lines.append(f"  {self.class_names[c]:<24s}" +
                             "  ".join(f"{self.ap[t][c]:.3f}" for t in self.thresholds))
            lines.append(f"detections {self.num_detections}  ground truth {self.num_ground_truth}  matched " +
                         " ".join(f"{self.num_matched[t]}" for t in self.thresholds))
        if self.classification_map is not None:
            lines.append(f"classification mAP {self.classification_map:.3f}")
        if self.per_frame_map is not None:
            lines.append(f"per-frame mAP {self.per_frame_map:.3f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("metric,class,iou,value\n")
        for t in self.thresholds:
            buf.write(f"mAP,all,{t},{self.map[t]!r}\n")
            for c in sorted(self.ap[t]):
                buf.write(f"AP,{self.class_names[c]},{t},{self.ap[t][c]!r}\n")
        if self.classification_map is not None:
            buf.write(f"classification_mAP,all,,{self.classification_map!r}\n")
        if self.per_frame_map is not None:
            buf.write(f"per_frame_mAP,all,,{self.per_frame_map!r}\n")
        return buf.getvalue()


def _check_detections(detections: Sequence[Detection], manifest: DatasetManifest) -> None:
    known = {v.video_id for v in manifest.videos}
    for d in detections:
        if d.video_id not in known:
            raise InputError(f"detection for unknown video {d.video_id!r}")
        if not 0 <= d.class_id < manifest.num_classes:
            raise InputError(f"detection for unknown class {d.class_id}")


def map_at_iou(detections: Sequence[Detection], manifest: DatasetManifest,
               thresholds: Sequence[float] = DEFAULT_IOUS) -> EvalReport:
    """Per-class AP pooled over all videos, averaged over classes with ground truth."""
    _check_detections(detections, manifest)
    gts = ground_truth_instances(manifest)
    classes = sorted({g.class_id for g in gts})
    report = EvalReport(list(manifest.class_names), tuple(thresholds), num_detections=len(detections),
                        num_ground_truth=len(gts))
    for t in thresholds:
        report.ap[t] = {}
        matched = 0
        for c in classes:
            cg = [g for g in gts if g.class_id == c]
            _, flags = match_detections([d for d in detections if d.class_id == c], cg, t)
            matched += sum(flags)
            report.ap[t][c] = average_precision(flags, len(cg))
        report.map[t] = float(np.mean(list(report.ap[t].values()))) if classes else 0.0
        report.num_matched[t] = matched
    return report


def _ranked_ap(scores: np.ndarray, positives: np.ndarray) -> float:
    order = np.argsort(-scores, kind="stable")
    return average_precision(positives[order], int(positives.sum()))


def classification_map(video_scores: Mapping[str, np.ndarray], manifest: DatasetManifest) -> float:
    """Mean over classes of AP when ranking test videos by their class score."""
    missing = [v.video_id for v in manifest.videos if v.video_id not in video_scores]
    if missing:
        raise InputError(f"no video scores for {missing[:5]}")
    s = np.stack([np.asarray(video_scores[v.video_id], dtype=np.float64) for v in manifest.videos])
    y = np.zeros(s.shape, dtype=bool)
    for i, v in enumerate(manifest.videos):
        y[i, sorted(v.labels)] = True
    aps = [_ranked_ap(s[:, c], y[:, c]) for c in range(s.shape[1]) if y[:, c].any()]
    return float(np.mean(aps)) if aps else 0.0


def per_frame_map(scores_fn: Callable | Mapping, manifest: DatasetManifest, points: int = 25) -> float:
    """Classification mAP pooled over ``points`` equally spaced time points per video.

    Point i sits at the middle of the i-th of ``points`` equal bins.  A point
    is positive for a class inside any of its ground-truth instances
    (half-open [start, end)); its scores are those of the containing segment.
    """
    get = scores_fn if callable(scores_fn) else scores_fn.__getitem__
    rows, labels = [], []
    for v in manifest.videos:
        s = np.asarray(get(v.video_id), dtype=np.float64)
        times = (np.arange(points) + 0.5) / points * v.duration
        seg = np.minimum((times / v.segment_duration).astype(int), s.shape[0] - 1)
        rows.append(s[seg])
        lab = np.zeros((points, s.shape[1]), dtype=bool)
        for g in v.ground_truth:
            lab[(times >= g.start) & (times < g.end), g.class_id] = True
        labels.append(lab)
    s = np.concatenate(rows)
    y = np.concatenate(labels)
    aps = [_ranked_ap(s[:, c], y[:, c]) for c in range(s.shape[1]) if y[:, c].any()]
    return float(np.mean(aps)) if aps else 0.0
