"""Feature files, dataset manifests and the synthetic dataset generator.

AGF1 feature file layout (little endian)::

    b"AGF1" | uint64 l | uint64 d | l*d float32, row-major

Manifest (JSON)::

    {"format": "graphloc-manifest", "version": 1, "split": "train",
     "segment_duration": 0.64, "class_names": ["a", "b"],
     "videos": [{"video_id": "v0", "feature_path": "features/v0.agf",
                 "num_segments": 40, "labels": ["a"],
                 "ground_truth": [{"class": "a", "start": 1.28, "end": 3.2}]}]}

Labels and ground-truth classes may be names or integer indices.  Feature
paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, SchemaError, SpecError, TruncationError

MAGIC = b"AGF1"
_HEADER = struct.Struct("<4sQQ")
MANIFEST_VERSION = 1
SEGMENT_DURATION = 0.64


def write_feature_file(path, features: np.ndarray) -> None:
    arr = np.asarray(features)
    if arr.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_feature_file(path, expected_dim: int | None = None) -> np.ndarray:
    """Load an AGF1 file as a float64 (l, d) array."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            if len(head) >= 4 and head[:4] != MAGIC:
                raise FormatError(f"{path}: bad magic {head[:4]!r}")
            raise TruncationError(f"{path}: header truncated")
        magic, l, d = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        payload = fh.read()
    need = l * d * 4
    if len(payload) != need:
        raise TruncationError(f"{path}: header says {l}x{d} ({need} bytes), payload has {len(payload)} bytes")
    arr = np.frombuffer(payload, dtype="<f4").reshape(l, d).astype(np.float64)
    if np.isnan(arr).any():
        raise DataError(f"{path}: NaN entries in features")
    if expected_dim is not None and d != expected_dim:
        raise DataError(f"{path}: feature dim {d}, expected {expected_dim}")
    return arr


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    start: float
    end: float


@dataclass
class VideoRecord:
    video_id: str
    feature_path: str
    num_segments: int
    labels: frozenset[int]
    ground_truth: tuple[GroundTruth, ...] = ()
    segment_duration: float = SEGMENT_DURATION

    @property
    def duration(self) -> float:
        return self.num_segments * self.segment_duration


@dataclass(frozen=True)
class LabeledVideo:
    """What training may see of a video: no temporal annotations."""

    video_id: str
    feature_path: str
    num_segments: int
    labels: frozenset[int]
    segment_duration: float


@dataclass
class DatasetManifest:
    class_names: list[str]
    videos: list[VideoRecord]
    split: str = "train"
    root: Path = field(default_factory=Path)
    segment_duration: float = SEGMENT_DURATION

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def feature_path(self, video: VideoRecord | LabeledVideo) -> Path:
        p = Path(video.feature_path)
        return p if p.is_absolute() else self.root / p

    def load_features(self, video, expected_dim: int | None = None) -> np.ndarray:
        x = read_feature_file(self.feature_path(video), expected_dim)
        if x.shape[0] != video.num_segments:
            raise DataError(f"{video.video_id}: manifest says {video.num_segments} segments, file has {x.shape[0]}")
        return x

    def training_view(self) -> list[LabeledVideo]:
        return [LabeledVideo(v.video_id, v.feature_path, v.num_segments, v.labels, v.segment_duration)
                for v in self.videos]

    def video(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def class_index(self, name_or_id) -> int:
        return _class_id(name_or_id, self.class_names, "lookup")

    def to_json(self) -> dict:
        def cls(c):
            return self.class_names[c]

        videos = []
        for v in self.videos:
            rec = {"video_id": v.video_id, "feature_path": v.feature_path, "num_segments": v.num_segments,
                   "labels": [cls(c) for c in sorted(v.labels)]}
            if v.segment_duration != self.segment_duration:
                rec["segment_duration"] = v.segment_duration
            if v.ground_truth:
                rec["ground_truth"] = [{"class": cls(g.class_id), "start": g.start, "end": g.end}
                                       for g in v.ground_truth]
            videos.append(rec)
        return {"format": "graphloc-manifest", "version": MANIFEST_VERSION, "split": self.split,
                "segment_duration": self.segment_duration, "class_names": list(self.class_names), "videos": videos}


def _class_id(value, class_names: list[str], where: str) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"{where}: bad class reference {value!r}")
    if isinstance(value, int):
        if not 0 <= value < len(class_names):
            raise SchemaError(f"{where}: class index {value} outside [0, {len(class_names)})")
        return value
    try:
        return class_names.index(value)
    except ValueError:
        raise SchemaError(f"{where}: unknown class {value!r}") from None


def manifest_from_json(data: dict, root: Path | str = ".") -> DatasetManifest:
    if not isinstance(data, dict):
        raise SchemaError("manifest must be a JSON object")
    version = data.get("version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise SchemaError(f"unsupported manifest version {version}")
    names = data.get("class_names")
    if not isinstance(names, list) or not names or len(set(names)) != len(names):
        raise SchemaError("class_names must be a nonempty list of unique names")
    split = data.get("split", "train")
    if split not in ("train", "test"):
        raise SchemaError(f"split must be train or test, got {split!r}")
    default_dur = float(data.get("segment_duration", SEGMENT_DURATION))
    seen = set()
    videos = []
    for i, rec in enumerate(data.get("videos", [])):
        try:
            vid = str(rec["video_id"])
            path = str(rec["feature_path"])
            l = int(rec["num_segments"])
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"video #{i}: missing or bad field ({e})") from None
        if vid in seen:
            raise SchemaError(f"duplicate video_id {vid!r}")
        seen.add(vid)
        if l < 1:
            raise SchemaError(f"{vid}: num_segments must be >= 1")
        dur = float(rec.get("segment_duration", default_dur))
        if dur <= 0:
            raise SchemaError(f"{vid}: segment_duration must be positive")
        labels = frozenset(_class_id(c, names, vid) for c in rec.get("labels", []))
        gts = []
        for g in rec.get("ground_truth", []):
            cid = _class_id(g["class"], names, vid)
            start, end = float(g["start"]), float(g["end"])
            if not start < end:
                raise SchemaError(f"{vid}: ground-truth interval [{start}, {end}] has start >= end")
            if start < 0 or end > l * dur + 1e-9:
                raise SchemaError(f"{vid}: ground-truth interval [{start}, {end}] outside the video")
            gts.append(GroundTruth(cid, start, end))
        if gts and not labels:
            labels = frozenset(g.class_id for g in gts)
        videos.append(VideoRecord(vid, path, l, labels, tuple(gts), dur))
    return DatasetManifest(list(names), videos, split, Path(root), default_dur)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})") from None
    return manifest_from_json(data, path.parent)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_json(), indent=1) + "\n")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthSpec:
    """Synthetic dataset of prototype-plus-noise segments.

    Background segments are drawn around ``background_modes`` unit
    prototypes; each action instance is a contiguous run around its class
    prototype.  Prototypes are scaled by ``cluster_separation`` and noise is
    isotropic with expected norm ``noise_sigma``.  When
    ``action_fraction_range`` is set, instance lengths are drawn as a fraction
    of the video instead of from ``action_length_range``.
    ``action_strength_range`` mixes each action segment with the background
    prototype (1 = pure class prototype).  With ``strength_profile="iid"``
    every segment draws its own mix; ``"peaked"`` ramps linearly from the low
    end at an instance's edges to the high end at its centre.
    """

    num_classes: int = 4
    train_videos: int = 40
    test_videos: int = 20
    segments_range: tuple[int, int] = (20, 60)
    classes_per_video: tuple[int, int] = (1, 1)
    instances_range: tuple[int, int] = (1, 3)
    action_length_range: tuple[int, int] = (3, 8)
    action_fraction_range: tuple[float, float] | None = None
    action_strength_range: tuple[float, float] = (1.0, 1.0)
    strength_profile: str = "iid"
    feature_dim: int = 2048
    cluster_separation: float = 1.0
    noise_sigma: float = 0.3
    background_modes: int = 3
    max_prototype_cosine: float = 0.3
    segment_duration: float = SEGMENT_DURATION
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.segments_range
        if not 1 <= lo <= hi:
            raise SpecError(f"bad segments_range {self.segments_range}")
        if self.num_classes < 1 or self.feature_dim < 1 or self.background_modes < 1:
            raise SpecError("num_classes, feature_dim and background_modes must be >= 1")
        if self.train_videos < 0 or self.test_videos < 0:
            raise SpecError("video counts must be >= 0")
        c_lo, c_hi = self.classes_per_video
        if not 1 <= c_lo <= c_hi <= self.num_classes:
            raise SpecError(f"bad classes_per_video {self.classes_per_video}")
        if not 1 <= self.instances_range[0] <= self.instances_range[1]:
            raise SpecError(f"bad instances_range {self.instances_range}")
        if self.action_fraction_range is not None:
            f_lo, f_hi = self.action_fraction_range
            if not 0 < f_lo <= f_hi <= 1:
                raise SpecError(f"bad action_fraction_range {self.action_fraction_range}")
        else:
            a_lo, a_hi = self.action_length_range
            if not 1 <= a_lo <= a_hi:
                raise SpecError(f"bad action_length_range {self.action_length_range}")
            if a_hi > lo:
                raise SpecError(f"action length up to {a_hi} exceeds the minimum video length {lo}")
        if c_hi > lo:
            raise SpecError(f"{c_hi} classes cannot fit in a {lo}-segment video")
        s_lo, s_hi = self.action_strength_range
        if not 0 < s_lo <= s_hi <= 1:
            raise SpecError(f"bad action_strength_range {self.action_strength_range}")
        if self.strength_profile not in ("iid", "peaked"):
            raise SpecError(f"strength_profile must be iid or peaked, got {self.strength_profile!r}")
        if self.noise_sigma < 0 or self.cluster_separation <= 0:
            raise SpecError("noise_sigma must be >= 0 and cluster_separation > 0")
        if self.segment_duration <= 0:
            raise SpecError("segment_duration must be positive")


@dataclass
class SynthDataset:
    train: DatasetManifest
    test: DatasetManifest
    train_path: Path
    test_path: Path
    class_prototypes: np.ndarray
    background_prototypes: np.ndarray


def sample_prototypes(n: int, dim: int, rng: np.random.Generator, max_cosine: float,
                      max_tries: int = 10_000) -> np.ndarray:
    """n unit vectors with every pairwise cosine below ``max_cosine`` (rejection)."""
    protos: list[np.ndarray] = []
    for _ in range(max_tries):
        if len(protos) == n:
            break
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(float(v @ p) < max_cosine for p in protos):
            protos.append(v)
    if len(protos) < n:
        raise SpecError(f"could not draw {n} prototypes in {dim} dims with cosine < {max_cosine}")
    return np.stack(protos)


def _instance_lengths(spec: SynthSpec, l: int, count: int, rng: np.random.Generator) -> list[int]:
    if spec.action_fraction_range is not None:
        f_lo, f_hi = spec.action_fraction_range
        lo = max(1, int(np.ceil(f_lo * l)))
        hi = max(lo, int(np.floor(f_hi * l)))
        return [int(rng.integers(lo, hi + 1)) for _ in range(count)]
    a_lo, a_hi = spec.action_length_range
    return [int(rng.integers(a_lo, a_hi + 1)) for _ in range(count)]


def _layout(spec: SynthSpec, l: int, classes: list[int], rng: np.random.Generator):
    """Place non-overlapping action runs separated by at least one background segment."""
    inst: list[tuple[int, int]] = []
    for c in classes:
        n = int(rng.integers(spec.instances_range[0], spec.instances_range[1] + 1))
        inst.extend((c, length) for length in _instance_lengths(spec, l, n, rng))
    # keep every class, then trim extras until the runs fit
    while sum(n for _, n in inst) + len(inst) - 1 > l:
        counts = {c: sum(1 for cc, _ in inst if cc == c) for c in classes}
        extra = [i for i, (c, _) in enumerate(inst) if counts[c] > 1]
        if extra:
            inst.pop(extra[-1])
            continue
        longest = max(range(len(inst)), key=lambda i: inst[i][1])
        c, n = inst[longest]
        if n == 1:
            raise SpecError(f"cannot fit {len(classes)} actions in a {l}-segment video")
        inst[longest] = (c, n - 1)
    order = rng.permutation(len(inst))
    inst = [inst[i] for i in order]
    free = l - sum(n for _, n in inst) - (len(inst) - 1)
    gaps = rng.multinomial(free, np.ones(len(inst) + 1) / (len(inst) + 1))
    runs = []
    pos = int(gaps[0])
    for i, (c, n) in enumerate(inst):
        runs.append((c, pos, pos + n))
        pos += n + 1 + int(gaps[i + 1])
    return runs


def _strength(spec: SynthSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    s_lo, s_hi = spec.action_strength_range
    if s_hi == s_lo:
        return np.full((n, 1), s_hi)
    if spec.strength_profile == "peaked":
        u = (np.arange(n) + 0.5) / n
        return (s_lo + (s_hi - s_lo) * (1.0 - np.abs(2.0 * u - 1.0)))[:, None]
    return rng.uniform(s_lo, s_hi, size=(n, 1))


def _make_video(spec, rng, classes, class_protos, bg_protos):
    l = int(rng.integers(spec.segments_range[0], spec.segments_range[1] + 1))
    runs = _layout(spec, l, classes, rng)
    dim = spec.feature_dim
    # background mode changes at every action boundary
    bg_mode = np.empty(l, dtype=int)
    cuts = [0] + sorted({b for _, s, e in runs for b in (s, e)}) + [l]
    for a, b in zip(cuts[:-1], cuts[1:]):
        bg_mode[a:b] = rng.integers(spec.background_modes)
    feats = spec.cluster_separation * bg_protos[bg_mode]
    for c, s, e in runs:
        alpha = _strength(spec, e - s, rng)
        feats[s:e] = spec.cluster_separation * (alpha * class_protos[c] + (1 - alpha) * bg_protos[bg_mode[s:e]])
    if spec.noise_sigma > 0:
        feats = feats + rng.standard_normal((l, dim)) * (spec.noise_sigma / np.sqrt(dim))
    return feats, runs


def synth_generate(spec: SynthSpec, out_dir) -> SynthDataset:
    """Write AGF1 features plus train/test manifests under ``out_dir``."""
    spec.validate()
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    protos = sample_prototypes(spec.num_classes + spec.background_modes, spec.feature_dim, rng,
                               spec.max_prototype_cosine)
    class_protos, bg_protos = protos[:spec.num_classes], protos[spec.num_classes:]
    names = [f"action{c:02d}" for c in range(spec.num_classes)]
    manifests = {}
    for split, count in (("train", spec.train_videos), ("test", spec.test_videos)):
        primaries = np.resize(rng.permutation(spec.num_classes), count)
        videos = []
        for i in range(count):
            n_cls = int(rng.integers(spec.classes_per_video[0], spec.classes_per_video[1] + 1))
            others = [c for c in rng.permutation(spec.num_classes) if c != primaries[i]]
            classes = sorted([int(primaries[i])] + [int(c) for c in others[:n_cls - 1]])
            feats, runs = _make_video(spec, rng, classes, class_protos, bg_protos)
            vid = f"{split}_{i:04d}"
            rel = os.path.join("features", f"{vid}.agf")
            write_feature_file(out_dir / rel, feats)
            gts = tuple(GroundTruth(c, s * spec.segment_duration, e * spec.segment_duration) for c, s, e in runs)
            videos.append(VideoRecord(vid, rel, feats.shape[0], frozenset(classes), gts, spec.segment_duration))
        manifests[split] = DatasetManifest(names, videos, split, out_dir, spec.segment_duration)
    paths = {}
    for split, man in manifests.items():
        paths[split] = out_dir / f"{split}.json"
        save_manifest(man, paths[split])
    return SynthDataset(manifests["train"], manifests["test"], paths["train"], paths["test"],
                        class_protos, bg_protos)
