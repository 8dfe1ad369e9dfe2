"""
Tape autodiff in five minutes
=============================

Every op in ``graphloc.numcore`` records a vector-Jacobian product while a
``Tape`` is active.  ``backward`` replays the tape in reverse.  This script
builds a tiny two-layer scorer, differentiates it, and checks the result
against central finite differences.
"""

import numpy as np

from graphloc import numcore as nc

rng = np.random.default_rng(0)

# %%
# A 6-segment "video" with 5-dim features and two learnable matrices.
x = nc.constant(rng.standard_normal((6, 5)))
params = {
    "w1": nc.parameter(rng.standard_normal((5, 4)) * 0.5, "w1"),
    "w2": nc.parameter(rng.standard_normal((4, 3)) * 0.5, "w2"),
}


def loss_fn(p):
    h = nc.l2_normalize_rows(nc.relu(nc.matmul(x, p["w1"])))
    scores = nc.tanh(nc.matmul(h, p["w2"]))
    pooled = nc.topk_mean_columns(scores, 2)          # MIL-style top-k pooling
    return nc.mul(nc.take_column(nc.log_softmax_rows(pooled), 0), -1.0)


with nc.Tape() as tape:
    loss = loss_fn(params)
grads = nc.backward(tape, loss, params)
print(f"loss {loss.item():.6f}, {len(tape)} recorded ops")
for name, g in grads.items():
    print(f"  d loss / d {name}: shape {g.shape}, |g|max {np.abs(g).max():.4f}")

# %%
# Compare every entry with a central difference.
report = nc.check_gradients(loss_fn, params)
for name, err in report.items():
    print(f"  {name}: max relative error {err:.2e}")

# %%
# One Adam step moves the parameters against the gradient.
state = nc.AdamState(learning_rate=0.05)
for step in range(50):
    with nc.Tape() as tape:
        loss = loss_fn(params)
    nc.adam_step(params, nc.backward(tape, loss, params), state)
    if step % 10 == 0:
        print(f"step {step:2d}  loss {loss.item():.4f}")
