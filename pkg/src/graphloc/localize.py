"""Video-level classification and temporal detections from segment scores."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .losses import compute_k

SCORE_RANGE = (-1.0, 1.0)
IGNORED_FRACTION = 0.05


@dataclass(frozen=True)
class Detection:
    video_id: str
    class_id: int
    start: float
    end: float
    confidence: float


def classify_video(scores: np.ndarray, d: int) -> np.ndarray:
    """Mean of the top-k segment scores per class, k = max(1, l // d)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise InputError(f"scores must be l x c with l >= 1, got {scores.shape}")
    k = compute_k(scores.shape[0], d)
    return -np.sort(-scores, axis=0)[:k].mean(axis=0)


def detection_threshold(lo: float = SCORE_RANGE[0], hi: float = SCORE_RANGE[1],
                        fraction: float = IGNORED_FRACTION) -> float:
    """Cut-off ignoring the lowest ``fraction`` of the score range; -0.9 for tanh."""
    return lo + fraction * (hi - lo)


def marked_runs(marks: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open [first, last + 1) index pairs."""
    padded = np.concatenate([[False], marks, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def detect(scores: np.ndarray, video_id: str, segment_duration: float,
           threshold: float | None = None, classes: Iterable[int] | None = None) -> list[Detection]:
    """Merge consecutive segments scoring above ``threshold`` into detections.

    Each detection spans [first * dur, (last + 1) * dur) and takes the run's
    maximum score.  ``classes`` restricts which classes are emitted.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise InputError(f"scores must be l x c with l >= 1, got {scores.shape}")
    if threshold is None:
        threshold = detection_threshold()
    wanted = range(scores.shape[1]) if classes is None else sorted(classes)
    out = []
    for c in wanted:
        col = scores[:, c]
        for a, b in marked_runs(col > threshold):
            out.append(Detection(video_id, int(c), a * segment_duration, b * segment_duration,
                                 float(col[a:b].max())))
    return out


def top_classes(video_scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k highest video-level scores (ties to the lower index)."""
    order = np.argsort(-np.asarray(video_scores), kind="stable")
    return sorted(int(i) for i in order[:k])


# ---------------------------------------------------------------------------
# files

CSV_HEADER = ("video_id", "class", "start", "end", "confidence")


def write_detections_csv(path, detections: Sequence[Detection], class_names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for det in detections:
            w.writerow([det.video_id, class_names[det.class_id], repr(det.start), repr(det.end),
                        repr(det.confidence)])


def read_detections_csv(path, class_names: Sequence[str]) -> list[Detection]:
    names = list(class_names)
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise InputError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for row in reader:
            cls = row["class"]
            if cls in names:
                cid = names.index(cls)
            elif cls.isdigit() and int(cls) < len(names):
                cid = int(cls)
            else:
                raise InputError(f"{path}: unknown class {cls!r}")
            out.append(Detection(row["video_id"], cid, float(row["start"]), float(row["end"]),
                                 float(row["confidence"])))
    return out


def write_detections_json(path, detections: Sequence[Detection], class_names: Sequence[str]) -> None:
    rows = [dict(asdict(d), **{"class": class_names[d.class_id]}) for d in detections]
    Path(path).write_text(json.dumps({"detections": rows}, indent=1) + "\n")


def read_detections_json(path, class_names: Sequence[str]) -> list[Detection]:
    data = json.loads(Path(path).read_text())
    names = list(class_names)
    out = []
    for row in data["detections"]:
        cls = row.get("class", row.get("class_id"))
        cid = names.index(cls) if isinstance(cls, str) else int(cls)
        out.append(Detection(row["video_id"], cid, float(row["start"]), float(row["end"]),
                             float(row["confidence"])))
    return out


def read_detections(path, class_names: Sequence[str]) -> list[Detection]:
    if str(path).endswith(".json"):
        return read_detections_json(path, class_names)
    return read_detections_csv(path, class_names)
