"""Decoupled graph propagation, layer attention, and the coupled GCN layer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad


def normalize(A: ad.Tensor) -> ad.Tensor:
    """D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I.

    Applied as written even for asymmetric (directed) A. Gradients flow
    through both A and the degree terms.
    """
    if A.values.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ad.ShapeError(f"adjacency must be square, got {A.shape}")
    n = A.shape[0]
    A_self = A + ad.Tensor(np.eye(n))
    dinv = ad.power(ad.sum(A_self, axis=1), -0.5)
    outer = ad.reshape(dinv, (n, 1)) @ ad.reshape(dinv, (1, n))
    return A_self * outer


def propagate(H: ad.Tensor, A_hat: ad.Tensor) -> ad.Tensor:
    return A_hat @ H


def gcn_layer(H: ad.Tensor, A_hat: ad.Tensor, W: ad.Tensor) -> ad.Tensor:
    return ad.relu(A_hat @ H @ W)


def retention_scores(stack: Sequence[ad.Tensor], c: ad.Tensor) -> list[ad.Tensor]:
    """Per-layer sigmoid scores, each an (n x 1) column."""
    return [ad.sigmoid(H @ c) for H in stack]


def layer_attention(stack: Sequence[ad.Tensor], c: ad.Tensor) -> ad.Tensor:
    """H_out[i] = sum_l sigmoid(H^l_i . c) * H^l_i over every layer in ``stack``.

    Scores are independent sigmoids, so they need not sum to one.
    """
    if not stack:
        raise ValueError("layer_attention needs at least one layer")
    n, d = stack[0].shape
    if c.shape != (d, 1):
        raise ad.ShapeError(f"projection must be ({d}, 1), got {c.shape}")
    ones = ad.Tensor(np.ones((1, d)))
    out = None
    for H, s in zip(stack, retention_scores(stack, c)):
        term = (s @ ones) * H
        out = term if out is None else out + term
    return out


def smoothness(H) -> float:
    """Mean pairwise cosine similarity between distinct rows.

    Zero-norm rows are skipped. Pass post rows only (drop the user row).
    """
    X = np.asarray(H.values if isinstance(H, ad.Tensor) else H, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    X = X[norms > 0.0] / norms[norms > 0.0, None]
    if X.shape[0] < 2:
        raise ValueError("smoothness needs at least two nonzero rows")
    sim = X @ X.T
    iu = np.triu_indices(X.shape[0], k=1)
    return float(np.clip(sim[iu].mean(), -1.0, 1.0))
