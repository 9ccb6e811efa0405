"""The tape-based autodiff core and its finite-difference safety net.

Run:  python3 demos/03_autodiff_gradcheck.py
"""

import numpy as np

from conjparse import autodiff as ad
from conjparse.trainer import toy_gradcheck

# Build a tiny computation: loss = BCE(sigmoid(x @ w + b), targets)
rng = np.random.default_rng(0)
w = ad.leaf(rng.normal(size=(3, 2)), name="w")
b = ad.leaf(np.zeros(2), name="b")
x = ad.constant(rng.normal(size=(4, 3)))
t = (rng.random((4, 2)) > 0.5).astype(float)

loss = ad.bce_with_logits(ad.add_bias(ad.matmul(x, w), b), t)
ad.backward(loss)
print("loss:", float(loss.data))
print("dL/db:", b.grad)

# Check every parameter of the tiny layer against central differences.
ad.zero_grads([w, b])
report = ad.grad_check(
    lambda: ad.bce_with_logits(ad.add_bias(ad.matmul(x, w), b), t),
    {"w": w, "b": b}, tolerance=1e-6)
print("\nlinear layer grad check:")
print(report.summary())

# The same machinery checks the *entire* model: encoder, attention, scorer.
print("\nfull model (grounded mode, d=8):")
print(toy_gradcheck("grounded", d=8).summary())
