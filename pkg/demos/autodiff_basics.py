"""
Reverse-mode gradients on small matrices
========================================

The package ships its own tiny autodiff engine. Everything is a 2-D
float64 matrix, and ``backward`` fills ``.grad`` on every tracked leaf.
"""

import numpy as np

from gpscl import tensor as T
from gpscl.tensor import Tensor, backward, finite_diff_grad, max_relative_error

rng = np.random.default_rng(0)

# a leaf we want gradients for, and a constant weight matrix
x = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
W = Tensor(rng.uniform(-1, 1, (4, 2)))

# softmax rows of tanh(xW), then a weighted sum so every entry matters
weights = Tensor(rng.uniform(-1, 1, (3, 2)))


def loss(_=None):
    return T.sum_all(T.row_softmax(T.tanh(x @ W)) * weights)


out = loss()
backward(out)
print("loss       ", out.item())
print("analytic   ", np.round(x.grad[0], 6))

# central differences give an independent estimate
numeric = finite_diff_grad(loss, x)
print("numeric    ", np.round(numeric.data[0], 6))
print("max rel err", max_relative_error(x.grad, numeric))

# a tape is spent after one backward pass unless retain_graph is set
try:
    backward(out)
except Exception as exc:
    print("second pass:", type(exc).__name__)
