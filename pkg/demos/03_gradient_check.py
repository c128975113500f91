"""
Checking the hand-written LSTM gradients
========================================

The session model has no autodiff.  Here every parameter of a tiny LSTM is
nudged both ways and the loss difference is compared with backward().
"""

import numpy as np

from divrec import contrastive
from divrec.contrastive import LossSpec, NegativeSet
from divrec.session_model import ModelParams, backward, forward

rng = np.random.default_rng(0)
h, d = 4, 6
params = ModelParams.init(d, h, rng)
params.b += rng.normal(scale=0.3, size=params.b.shape)
table = rng.normal(size=(10, d))
seq = [3, 1, 4, 1, 5]
target = rng.normal(size=d)
negs = NegativeSet(np.arange(4), rng.normal(size=(4, d)))


def loss_value(spec):
    z = forward(params, table, seq).z[0]
    return contrastive.loss_and_grad(spec, z, target, negs)[0]


for kind in ("cosine", "weighted", "cross_entropy"):
    spec = LossSpec(kind)
    trace = forward(params, table, seq)
    _, dz = contrastive.loss_and_grad(spec, trace.z[0], target, negs)
    grads = backward(trace, params, dz)
    report = []
    for name in ("W_x", "W_h", "b", "P"):
        block, g = getattr(params, name), getattr(grads, name)
        num = np.zeros_like(block)
        for i in np.ndindex(block.shape):
            old = block[i]
            block[i] = old + 1e-5
            up = loss_value(spec)
            block[i] = old - 1e-5
            down = loss_value(spec)
            block[i] = old
            num[i] = (up - down) / 2e-5
        report.append(f"{name} {np.linalg.norm(g - num) / np.linalg.norm(num):.1e}")
    print(f"{kind:>13}: " + "  ".join(report))
