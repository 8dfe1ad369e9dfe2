"""Training loop: batching, CASL pair construction, Adam updates, checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import DatasetManifest, LabeledVideo
from .errors import ConfigError, ContractError, DivergedError, FormatError, PairingError, TruncationError
from .losses import LossBreakdown, total_loss
from .model import DStrategy, ModelConfig, ModelParams, forward_batch, init_params
from .numcore import AdamState

log = logging.getLogger(__name__)

CKPT_MAGIC = b"AGCK"
CKPT_VERSION = 1
LOSS_CSV_HEADER = ("epoch", "iter", "mil", "l1", "casl", "total")


@dataclass
class TrainConfig:
    model: ModelConfig
    epochs: int = 250
    learning_rate: float = 0.001
    batch_size: int = 32
    pair_strategy: str = "all_pairs"     # all_pairs | half_fixed
    checkpoint_every: int = 0            # 0: final checkpoint only
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.pair_strategy not in ("all_pairs", "half_fixed"):
            raise ConfigError(f"bad pair_strategy {self.pair_strategy!r}")
        if self.model.casl_target != "off" and self.batch_size < 2:
            raise ConfigError("CASL needs batch_size >= 2")
        if self.pair_strategy == "half_fixed" and self.batch_size < 4:
            raise ConfigError("half_fixed pairing needs batch_size >= 4")

    def to_json(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        out["model"] = self.model.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "model" not in data:
            raise ConfigError("train config needs a 'model' section")
        data["model"] = ModelConfig.from_json(data["model"])
        return cls(**data)


@dataclass
class TrainState:
    params: ModelParams
    adam: AdamState
    rng: np.random.Generator
    epoch: int = 0
    iteration: int = 0
    history: list[tuple[int, int, LossBreakdown]] = field(default_factory=list)


def init_state(config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    params = init_params(config.model, rng)
    return TrainState(params, AdamState(learning_rate=config.learning_rate), rng)


# ---------------------------------------------------------------------------
# batches and pairs


def choose_d(strategy: DStrategy, rng: np.random.Generator) -> int:
    if strategy.kind == "fixed":
        return strategy.value
    return int(strategy.choices[rng.integers(len(strategy.choices))])


def enumerate_pairs(label_sets: Sequence[frozenset[int]]) -> list[tuple[int, int, int]]:
    """Every unordered video pair, once per class they share."""
    pairs = []
    for j in range(len(label_sets)):
        for k in range(j + 1, len(label_sets)):
            for c in sorted(label_sets[j] & label_sets[k]):
                pairs.append((j, k, c))
    return pairs


def construct_pairs(label_sets: Sequence[frozenset[int]], n_pairs: int,
                    rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """Draw ``n_pairs`` (video, video, class) triples with a random shared class."""
    by_class: dict[int, list[int]] = {}
    for i, labs in enumerate(label_sets):
        for c in labs:
            by_class.setdefault(c, []).append(i)
    eligible = sorted(c for c, vids in by_class.items() if len(vids) >= 2)
    if not eligible:
        raise PairingError("no class has two or more videos to pair")
    classes = sorted(by_class)
    pairs = []
    for _ in range(n_pairs):
        c = classes[rng.integers(len(classes))]
        while len(by_class[c]) < 2:
            c = classes[rng.integers(len(classes))]
        a, b = rng.choice(len(by_class[c]), size=2, replace=False)
        pairs.append((by_class[c][a], by_class[c][b], c))
    return pairs


def sample_batch(label_sets: Sequence[frozenset[int]], batch_size: int, rng: np.random.Generator,
                 pair_strategy: str = "all_pairs", candidates: Sequence[int] | None = None):
    """Pick batch videos (dataset indices) and CASL pairs (batch-local indices).

    ``candidates`` supplies the free videos (e.g. the current chunk of an
    epoch); otherwise they are drawn uniformly without replacement.
    """
    n = len(label_sets)
    if n == 0:
        raise ContractError("cannot sample from an empty dataset")

    def free(count):
        if candidates is not None:
            return [int(i) for i in list(candidates)[:count]]
        return [int(i) for i in rng.choice(n, size=min(count, n), replace=False)]

    if pair_strategy == "all_pairs":
        videos = free(batch_size)
        return videos, enumerate_pairs([label_sets[i] for i in videos])
    if pair_strategy == "half_fixed":
        n_pairs = batch_size // 4
        fixed = construct_pairs(label_sets, n_pairs, rng)
        videos: list[int] = []
        pairs = []
        for a, b, c in fixed:
            pairs.append((len(videos), len(videos) + 1, c))
            videos.extend((a, b))
        videos.extend(free(batch_size - len(videos)))
        return videos, pairs
    raise ConfigError(f"bad pair_strategy {pair_strategy!r}")


# ---------------------------------------------------------------------------
# steps


def train_step(state: TrainState, videos: Sequence[np.ndarray], labels: Sequence[frozenset[int]],
               pairs: Sequence[tuple[int, int, int]], config: TrainConfig, d: int) -> LossBreakdown:
    """Forward every video on its own graph, backprop the total loss, update with Adam."""
    if not videos:
        raise ContractError("train_step needs at least one video")
    named = state.params.named()
    with nc.Tape() as tape:
        outs = forward_batch(videos, state.params, config.model, "train", state.rng)
        loss, breakdown = total_loss(outs, labels, pairs, config.model, d)
    if not math.isfinite(breakdown.total):
        raise DivergedError(f"non-finite loss at epoch {state.epoch} iter {state.iteration}: {breakdown}")
    grads = nc.backward(tape, loss, named)
    nc.adam_step(named, grads, state.adam)
    state.iteration += 1
    return breakdown


def run_epoch(state: TrainState, features: Sequence[np.ndarray], label_sets: Sequence[frozenset[int]],
              config: TrainConfig) -> list[LossBreakdown]:
    order = state.rng.permutation(len(features))
    out = []
    for start in range(0, len(order), config.batch_size):
        chunk = order[start:start + config.batch_size]
        d = choose_d(config.model.d_strategy, state.rng)
        idx, pairs = sample_batch(label_sets, config.batch_size, state.rng, config.pair_strategy, chunk)
        br = train_step(state, [features[i] for i in idx], [label_sets[i] for i in idx], pairs, config, d)
        state.history.append((state.epoch, state.iteration, br))
        out.append(br)
    state.epoch += 1
    return out


def load_training_data(videos: Sequence[LabeledVideo], manifest: DatasetManifest, input_dim: int):
    feats = [manifest.load_features(v, input_dim) for v in videos]
    return feats, [frozenset(v.labels) for v in videos]


def train(manifest: DatasetManifest, config: TrainConfig, out_dir, resume=None) -> Path:
    """Train on the manifest's videos (labels only); returns the final checkpoint path.

    Writes ``loss.csv`` and ``final.agck`` (plus ``epoch_XXXX.agck`` every
    ``checkpoint_every`` epochs) into ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    view = manifest.training_view()
    if not view:
        raise ContractError("training split is empty")
    if any(not v.labels for v in view):
        raise ContractError("every training video needs at least one label")
    features, label_sets = load_training_data(view, manifest, config.model.input_dim)

    loss_path = out_dir / "loss.csv"
    if resume is not None:
        state, _ = load_checkpoint(resume)
        mode = "a"
    else:
        state = init_state(config)
        mode = "w"
    with open(loss_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(LOSS_CSV_HEADER)
        while state.epoch < config.epochs:
            breakdowns = run_epoch(state, features, label_sets, config)
            first_iter = state.iteration - len(breakdowns)
            for i, br in enumerate(breakdowns):
                writer.writerow([state.epoch - 1, first_iter + i, repr(br.mil), repr(br.l1), repr(br.casl),
                                 repr(br.total)])
            fh.flush()
            log.info("epoch %d: total %.5f", state.epoch, breakdowns[-1].total)
            if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
                save_checkpoint(out_dir / f"epoch_{state.epoch:04d}.agck", state, config)
    final = out_dir / "final.agck"
    save_checkpoint(final, state, config)
    return final


# ---------------------------------------------------------------------------
# checkpoints
#
# b"AGCK" | uint32 version | uint64 header length | JSON header |
# per array: uint32 name length | name | uint32 ndim | uint64 dims | float64 LE data


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int, path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncationError(f"{path}: checkpoint truncated")
    return buf


def save_checkpoint(path, state: TrainState, config: TrainConfig) -> None:
    arrays = {f"param/{k}": v.value for k, v in state.params.named().items()}
    for k in state.adam.m:
        arrays[f"adam_m/{k}"] = state.adam.m[k]
        arrays[f"adam_v/{k}"] = state.adam.v[k]
    header = {
        "config": config.to_json(),
        "epoch": state.epoch,
        "iteration": state.iteration,
        "seed": config.seed,
        "adam": {"step": state.adam.step, "learning_rate": state.adam.learning_rate, "beta1": state.adam.beta1,
                 "beta2": state.adam.beta2, "epsilon": state.adam.epsilon},
        "rng_state": state.rng.bit_generator.state,
        "arrays": list(arrays),
    }
    raw = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(raw)))
        fh.write(raw)
        for name, arr in arrays.items():
            _write_array(fh, name, arr)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint")
        version, hlen = struct.unpack("<IQ", _read_exact(fh, 12, path))
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(_read_exact(fh, hlen, path))
        arrays = {}
        for _ in header["arrays"]:
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, path))
            name = _read_exact(fh, nlen, path).decode()
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, path))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, path))
            count = int(np.prod(shape))
            data = np.frombuffer(_read_exact(fh, 8 * count, path), dtype="<f8").reshape(shape)
            arrays[name] = data.astype(np.float64)
    config = TrainConfig.from_json(header["config"])
    params = ModelParams.from_arrays({k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")})
    a = header["adam"]
    adam = AdamState(a["learning_rate"], a["beta1"], a["beta2"], a["epsilon"], a["step"],
                     {k.split("/", 1)[1]: v.copy() for k, v in arrays.items() if k.startswith("adam_m/")},
                     {k.split("/", 1)[1]: v.copy() for k, v in arrays.items() if k.startswith("adam_v/")})
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    return TrainState(params, adam, rng, header["epoch"], header["iteration"]), config
