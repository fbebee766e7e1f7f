"""
Reverse-mode autodiff on numpy arrays
=====================================

Build a small graph, call backward, and compare against central differences.
"""

import numpy as np

from caml import tensor as T
from caml.tensor import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

# a two-class softmax over a linear map, reduced to a scalar
loss = T.mean(T.log_softmax_t(T.matmul(x, w), 2.0)[:, 0:1])
gx, gw = T.backward(loss, [x, w])
print("loss", loss.item())
print("dL/dw\n", gw)

# the same gradient by central differences
h = 1e-6
num = np.zeros_like(w.numpy())
for idx in np.ndindex(num.shape):
    up, dn = w.numpy().copy(), w.numpy().copy()
    up[idx] += h
    dn[idx] -= h
    with T.no_grad():
        f = lambda m: T.mean(T.log_softmax_t(T.matmul(x, Tensor(m)), 2.0)[:, 0:1]).item()
        num[idx] = (f(up) - f(dn)) / (2 * h)
print("max abs difference", np.max(np.abs(num - gw)))
