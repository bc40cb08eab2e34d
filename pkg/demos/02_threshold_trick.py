"""
The near-binary edge threshold
==============================

Edges whose weight ``r`` exceeds ``mu`` are kept with value ``r/(r+eps)``.
The denominator is cut out of the tape, so the gradient is ``1/(r+eps)``.
Dropped entries get zero gradient. The sum of the kept values is close to
the edge count, and that sum is the sparsity penalty.
"""

import numpy as np

from ddgcn import autodiff as ad
from ddgcn import l2c

rng = np.random.default_rng(1)
r = ad.Tensor(rng.uniform(size=(5, 5)), requires_grad=True)

g = l2c.differentiable_threshold(r, l2c.L2CConfig(mu=0.5, eps=1e-6))
print("kept mask\n", g.mask.astype(int))
print("forward values of kept entries", np.round(g.A.values[g.mask], 8))

penalty = l2c.l0_penalty([g])
penalty.backward()
print(f"penalty {penalty.item():.6f} vs edge count {g.edge_count}")

# gradient is 1/(r+eps) on kept entries, exactly zero elsewhere
expected = np.where(g.mask, 1.0 / (r.values + 1e-6), 0.0)
print("max |grad - 1/(r+eps)|", np.max(np.abs(r.grad - expected)))
