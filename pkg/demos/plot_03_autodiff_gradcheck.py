"""
Reverse-mode gradients
======================

The tensor library records each op and replays it backwards. Here the
analytic gradients of a small conv, pool, upsample stack are compared with
central differences in float64.
"""

import numpy as np

from seisunet.autodiff import Tensor, backward, conv2d, maxpool2, mse_loss, relu, upsample_nearest2

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
b = Tensor(rng.uniform(-0.5, 0.5, 3), requires_grad=True)
target = rng.standard_normal((1, 3, 8, 8))


def loss_value():
    y = upsample_nearest2(maxpool2(relu(conv2d(x, w, b))))
    return mse_loss(y, Tensor(target))


loss = loss_value()
backward(loss)
print("loss", float(loss.data))


def numeric(t, eps=1e-6):
    g = np.zeros_like(t.data)
    for i in np.ndindex(t.data.shape):
        keep = t.data[i]
        t.data[i] = keep + eps
        up = float(loss_value().data)
        t.data[i] = keep - eps
        down = float(loss_value().data)
        t.data[i] = keep
        g[i] = (up - down) / (2 * eps)
    return g


for name, t in (("input", x), ("weight", w), ("bias", b)):
    fd = numeric(t)
    err = np.abs(fd - t.grad).max() / np.abs(fd).max()
    print("%-6s relative error %.1e" % (name, err))
