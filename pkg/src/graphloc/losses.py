"""Training objectives: top-k MIL cross entropy, graph L1 sparsity, and the
co-activity similarity hinge, plus their weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .errors import ContractError, DegenerateVideoError, ShapeError
from .numcore import Tensor

CASL_MARGIN = 0.5


def compute_k(l: int, d: int) -> int:
    return max(1, l // d)


def label_vector(labels, num_classes: int) -> np.ndarray:
    """Binary indicator over classes.

    ``labels`` is a collection of class ids, or a length-c numpy indicator.
    """
    if isinstance(labels, np.ndarray) and labels.shape == (num_classes,):
        return labels.astype(np.float64)
    y = np.zeros(num_classes)
    for c in labels:
        y[int(c)] = 1.0
    return y


def normalize_labels(y: np.ndarray) -> np.ndarray:
    total = y.sum()
    if total <= 0:
        raise ContractError("video has an empty label set")
    return y / total


def mil_video_loss(scores: Tensor, labels, d: int) -> Tensor:
    """Cross entropy between softmaxed top-k class means and the normalized labels."""
    c = scores.cols
    y_hat = normalize_labels(label_vector(labels, c))
    pooled = nc.topk_mean_columns(scores, compute_k(scores.rows, d))
    return nc.mul(nc.sum_(nc.mul(nc.log_softmax_rows(pooled), nc.constant(y_hat))), -1.0)


def mil_loss(scores_per_video: Sequence[Tensor], labels: Sequence, d_per_video) -> Tensor:
    if not scores_per_video:
        raise ContractError("MIL loss needs a nonempty batch")
    if isinstance(d_per_video, int):
        d_per_video = [d_per_video] * len(scores_per_video)
    total = None
    for scores, lab, d in zip(scores_per_video, labels, d_per_video):
        term = mil_video_loss(scores, lab, d)
        total = term if total is None else nc.add(total, term)
    return nc.mul(total, 1.0 / len(scores_per_video))


def l1_sparsity(g_raw: Tensor) -> Tensor:
    """Sum of absolute edge weights over l^2."""
    if g_raw.rows != g_raw.cols:
        raise ShapeError(f"affinity must be square, got {g_raw.shape}")
    return nc.mul(nc.sum_(nc.abs_(g_raw)), 1.0 / g_raw.rows ** 2)


def casl_attention(scores: Tensor, class_i: int, axis: str = "time") -> Tensor:
    """Per-segment weights for class ``class_i`` as an l x 1 column."""
    if axis == "time":
        return nc.transpose(nc.softmax_rows(nc.transpose(nc.take_column(scores, class_i))))
    if axis == "class":
        return nc.take_column(nc.softmax_rows(scores), class_i)
    raise ContractError(f"unknown attention axis {axis!r}")


def casl_features(features: Tensor, scores: Tensor, class_i: int, attention_axis: str = "time"):
    """Attention-weighted foreground and complement-weighted background (1 x d each)."""
    if features.rows < 2:
        raise DegenerateVideoError(f"need at least 2 segments for fg/bg features, got {features.rows}")
    if features.rows != scores.rows:
        raise ShapeError(f"features {features.shape} vs scores {scores.shape}")
    att = casl_attention(scores, class_i, attention_axis)
    fg = nc.matmul(nc.transpose(att), features)
    bg = nc.matmul(nc.transpose(nc.sub(1.0, att)), features)
    return fg, bg


def cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """(1 - cos) / 2, in [0, 1]."""
    return nc.mul(nc.sub(1.0, nc.cosine_rows(a, b)), 0.5)


def casl_hinge(fg_j: Tensor, bg_j: Tensor, fg_k: Tensor, bg_k: Tensor, margin: float = CASL_MARGIN) -> Tensor:
    same = cosine_distance(fg_j, fg_k)
    t1 = nc.relu(nc.add(nc.sub(same, cosine_distance(bg_j, fg_k)), margin))
    t2 = nc.relu(nc.add(nc.sub(same, cosine_distance(bg_k, fg_j)), margin))
    return nc.add(t1, t2)


def casl_pair(features_j: Tensor, scores_j: Tensor, features_k: Tensor, scores_k: Tensor,
              class_i: int, attention_axis: str = "time",
              labels_j=None, labels_k=None) -> Tensor:
    """Co-activity hinge for two videos sharing class ``class_i``.

    When label sets are passed, both must contain the class.
    """
    for lab in (labels_j, labels_k):
        if lab is not None and class_i not in set(int(c) for c in lab):
            raise ContractError(f"class {class_i} absent from a paired video's labels {sorted(lab)}")
    fg_j, bg_j = casl_features(features_j, scores_j, class_i, attention_axis)
    fg_k, bg_k = casl_features(features_k, scores_k, class_i, attention_axis)
    return casl_hinge(fg_j, bg_j, fg_k, bg_k)


@dataclass
class LossBreakdown:
    mil: float
    l1: float
    casl: float
    total: float
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0)


def casl_source(out, casl_target: str) -> Tensor:
    if casl_target == "phi_output":
        if out.phi_out is None:
            raise ContractError("CASL on phi output needs a learned graph")
        return out.phi_out
    if casl_target == "graph_output":
        return out.z
    raise ContractError(f"CASL disabled (target {casl_target!r})")


def total_loss(batch_outputs: Sequence, labels: Sequence, pairs: Sequence[tuple[int, int, int]],
               config, d_per_video, lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0)):
    """Weighted sum of the enabled losses over one batch.

    ``pairs`` holds (video index, video index, shared class) entries; CASL is
    their mean, or 0 when there are none.  Returns (total tensor, breakdown).
    """
    lam_mil, lam_l1, lam_casl = lambdas
    zero = nc.constant(0.0)
    mil = l1 = casl = zero

    if config.use_mil:
        mil = mil_loss([o.scores for o in batch_outputs], labels, d_per_video)

    graphs = [o.affinity.raw for o in batch_outputs if o.affinity is not None]
    if config.use_l1 and graphs:
        acc = None
        for g in graphs:
            term = l1_sparsity(g)
            acc = term if acc is None else nc.add(acc, term)
        l1 = nc.mul(acc, 1.0 / len(graphs))

    if config.casl_target != "off" and pairs:
        acc = None
        for j, k, cls in pairs:
            oj, ok = batch_outputs[j], batch_outputs[k]
            term = casl_pair(casl_source(oj, config.casl_target), oj.scores,
                             casl_source(ok, config.casl_target), ok.scores,
                             cls, config.casl_attention, labels[j], labels[k])
            acc = term if acc is None else nc.add(acc, term)
        casl = nc.mul(acc, 1.0 / len(pairs))

    total = nc.add(nc.add(nc.mul(mil, lam_mil), nc.mul(l1, lam_l1)), nc.mul(casl, lam_casl))
    breakdown = LossBreakdown(mil.item(), l1.item(), casl.item(), total.item(), tuple(lambdas))
    return total, breakdown
