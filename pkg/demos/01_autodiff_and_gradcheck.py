"""
Reverse-mode gradients and finite-difference checks
===================================================

Every model parameter gradient comes from the small tape in ``ddgcn.autodiff``.
This script builds a toy expression, backpropagates it, and compares it with
central differences. Then it runs the same check on the whole model.
"""

import numpy as np

from ddgcn import autodiff as ad
from ddgcn import harness

rng = np.random.default_rng(0)

# a two-layer toy: sigmoid(x W1) W2, summed
x = ad.Tensor(rng.normal(size=(4, 3)))
W1 = ad.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
W2 = ad.Tensor(rng.normal(size=(5, 2)), requires_grad=True)


def f():
    return ad.sum(ad.sigmoid(x @ W1) @ W2)


out = f()
out.backward()
print("value", out.item())
print("dW2 column sums", W2.grad.sum(axis=0))

# check_gradients compares the tape against central differences
print("toy max rel. error", ad.check_gradients(f, [W1, W2]))

# the full model: random weights, tiny sizes, per-op suite first
result = harness.gradcheck(d=6, hid=5, L=2, N=4, T=2, seed=0)
for name, err in result.op_errors.items():
    print(f"  op {name:<22s} {err:.2e}")
print(f"full model: {result.max_rel_error:.2e} after {result.attempts} draw(s), passed={result.passed}")
