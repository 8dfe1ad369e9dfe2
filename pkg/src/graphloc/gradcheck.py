"""Finite-difference verification of the full model's parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import numcore as nc
from .losses import total_loss
from .model import ModelConfig, ModelParams, forward

# gradients below this magnitude are compared on an absolute scale; central
# differences of an O(1) loss carry ~1e-11 round-off
GRAD_FLOOR = 1e-6
TOLERANCE = 1e-4


@dataclass
class BlockResult:
    name: str
    max_rel_error: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def pick_indices(grad: np.ndarray, rng: np.random.Generator, n_top: int, n_random: int) -> list[tuple[int, ...]]:
    """The largest-magnitude entries plus a uniform sample, deduplicated."""
    flat = np.abs(grad).ravel()
    top = np.argsort(-flat, kind="stable")[:n_top]
    rand = rng.choice(flat.size, size=min(n_random, flat.size), replace=False)
    seen, out = set(), []
    for i in list(top) + list(rand):
        if int(i) not in seen:
            seen.add(int(i))
            out.append(np.unravel_index(int(i), grad.shape))
    return out


def gradcheck_model(params: ModelParams, config: ModelConfig, videos: Sequence[np.ndarray],
                    labels: Sequence[frozenset[int]], pairs: Sequence[tuple[int, int, int]], d: int,
                    step: float = 1e-5, n_top: int = 8, n_random: int = 8, seed: int = 0,
                    corrupt: str | None = None) -> list[BlockResult]:
    """Compare tape gradients of the total loss with central differences.

    Dropout is switched off.  ``corrupt`` names a parameter block whose
    analytic gradient is deliberately perturbed (negative control).
    """
    cfg = replace(config, dropout_p=0.0)
    named = params.named()

    def loss():
        outs = [forward(x, params, cfg, "eval") for x in videos]
        return total_loss(outs, labels, pairs, cfg, d)[0]

    with nc.Tape() as tape:
        value = loss()
    analytic = nc.backward(tape, value, named)
    if corrupt is not None:
        analytic[corrupt] = analytic[corrupt] * 1.01 + 1e-3
    rng = np.random.default_rng(seed)
    results = []
    for name, p in named.items():
        worst = 0.0
        idx = pick_indices(analytic[name], rng, n_top, n_random)
        for ij in idx:
            num = nc.numerical_gradient(lambda: loss().item(), p.value, ij, step)
            worst = max(worst, nc.relative_error(analytic[name][ij], num, GRAD_FLOOR))
        results.append(BlockResult(name, worst, len(idx)))
    return results


def format_report(results: Sequence[BlockResult]) -> str:
    lines = [f"{'block':<14s}{'checked':>8s}{'max rel err':>14s}  status"]
    for r in results:
        lines.append(f"{r.name:<14s}{r.checked:>8d}{r.max_rel_error:>14.3e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
