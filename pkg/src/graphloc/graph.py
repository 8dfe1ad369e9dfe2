"""Affinity graph over the segments of one video and the graph convolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import EmptyVideoError, ShapeError
from .numcore import Tensor


@dataclass
class AffinityTriplet:
    raw: Tensor
    masked: Tensor
    normalized: Tensor


def build_affinity(phi_out: Tensor) -> Tensor:
    """Cosine similarity between every pair of embedded segments."""
    if phi_out.rows == 0:
        raise EmptyVideoError("cannot build a graph for a video with no segments")
    return nc.cosine_similarity_matrix(phi_out)


def weak_edge_mask(g: np.ndarray, signed: bool = False) -> np.ndarray:
    """Boolean keep-mask: edges in the upper half of the weight range survive.

    By default both the range and the comparison use absolute weights.
    """
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeError(f"affinity must be square, got {g.shape}")
    w = g if signed else np.abs(g)
    lo, hi = w.min(), w.max()
    if hi == lo:
        return np.ones(g.shape, dtype=bool)
    return w >= lo + (hi - lo) / 2.0


def drop_weak_edges(g: Tensor, signed: bool = False) -> Tensor:
    """Zero the weak edges; the mask is a constant for differentiation."""
    mask = weak_edge_mask(g.value, signed)
    return nc.mul(g, nc.constant(mask.astype(np.float64)))


def row_normalize(g: Tensor, signed: bool = False, eps: float = 1e-12) -> Tensor:
    """Divide each row by the sum of its absolute values.

    All-zero rows become the identity row.  ``signed=True`` divides by the
    plain row sum instead (guarded away from zero by ``eps``).
    """
    if g.rows != g.cols:
        raise ShapeError(f"affinity must be square, got {g.shape}")
    x = g.value
    zero_row = ~np.any(x != 0.0, axis=1, keepdims=True)
    sign = np.ones_like(x) if signed else np.sign(x)
    s = (x * sign).sum(axis=1, keepdims=True)
    if signed:
        s = np.where(np.abs(s) < eps, np.where(s < 0, -eps, eps), s)
    else:
        s = np.where(zero_row, 1.0, s)
    out = np.where(zero_row, np.eye(g.rows), x / s)

    def vjp(gr):
        inner = (gr * x).sum(axis=1, keepdims=True)
        d = gr / s - sign * inner / (s * s)
        return (np.where(zero_row, 0.0, d),)

    return nc.record(out, (g,), vjp, "row_normalize")


def build_graph(phi_out: Tensor, drop_edges: bool = True, signed_drop: bool = False,
                signed_norm: bool = False) -> AffinityTriplet:
    raw = build_affinity(phi_out)
    masked = drop_weak_edges(raw, signed_drop) if drop_edges else raw
    return AffinityTriplet(raw, masked, row_normalize(masked, signed_norm))


def graph_conv(g_hat: Tensor, x: Tensor, w: Tensor) -> Tensor:
    """Z = G_hat X W, evaluated as G_hat (X W)."""
    if g_hat.rows != g_hat.cols or g_hat.cols != x.rows:
        raise ShapeError(f"graph_conv: graph {g_hat.shape} incompatible with features {x.shape}")
    if x.cols != w.rows:
        raise ShapeError(f"graph_conv: features {x.shape} incompatible with weight {w.shape}")
    return nc.matmul(g_hat, nc.matmul(x, w))
