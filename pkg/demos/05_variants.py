"""
Ablation variants
=================

The same forward pass covers the plain GCN, a single shared graph, undirected
edges, a fixed cosine graph and no user node. This script prints parameter
counts and logits for each variant on one random user.
"""

import numpy as np

from ddgcn import corpus
from ddgcn.model import ModelConfig, count_parameters, forward, init_params

VARIANTS = {
    "ddgcn": {},
    "gcn": {"plain_gcn": True},
    "single_hop": {"single_hop": True},
    "undirected": {"undirected": True},
    "fixed_graph": {"fixed_graph": 0.2},
    "no_special_node": {"no_special_node": True},
}

rng = np.random.default_rng(3)
sample = corpus.UserSample(id="u0", posts=[list(rng.integers(2, 40, 5)) for _ in range(6)],
                           labels=[1, 0], kind="tokens")

for name, extra in VARIANTS.items():
    cfg = ModelConfig(d=16, hid=8, L=4, T=2, vocab_size=40, encoder_dropout=0.0, dropout=0.0, **extra)
    params = init_params(cfg, np.random.default_rng(0))
    trace = forward(sample, params, cfg)
    print(f"{name:<16s} params {count_parameters(params):6d}  l0 {trace.l0.item():5.1f}  "
          f"logits {np.round(trace.logit_values, 3).tolist()}")

# decoupled branches do not grow with depth, plain GCN adds d*d per layer
for L in (2, 16):
    for gcn in (False, True):
        cfg = ModelConfig(d=16, hid=8, L=L, T=2, vocab_size=40, plain_gcn=gcn)
        n = count_parameters(init_params(cfg, np.random.default_rng(0)), branch=0, include_l2c=False)
        print(f"L={L:2d} {'gcn  ' if gcn else 'ddgcn'} branch params {n}")
