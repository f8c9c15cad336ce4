"""Reverse-mode autodiff on numpy arrays, checked against central differences.

Builds a two-layer conv net by hand, runs it forward and backward, and
compares every parameter gradient with a finite-difference estimate.

    python demos/01_autodiff_gradcheck.py
"""

import numpy as np

from memtrack.gradcheck import grad_check
from memtrack.tensor import Tensor, conv2d, precision, relu, sum_all

rng = np.random.default_rng(0)

with precision(np.float64):
    x = Tensor(rng.standard_normal((3, 9, 9)))
    w1 = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.3)
    b1 = Tensor(rng.standard_normal(4) * 0.1)
    w2 = Tensor(rng.standard_normal((2, 4, 3, 3)) * 0.3)

    def net(x, w1, b1, w2):
        h = relu(conv2d(x, w1, b1, stride=2, pad=1))
        y = conv2d(h, w2, None, stride=1, pad=1)
        return sum_all(y * y)

    out = net(x, w1, b1, w2)
    print("output", float(out.data))
    err = grad_check(net, [x, w1, b1, w2])
    print(f"max relative gradient error: {err:.2e}")
    assert err < 1e-4
