"""Learn-to-connect: per-layer edge weights, differentiable threshold, edge penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class L2CConfig:
    mu: float = 0.5
    eps: float = 1e-6
    undirected: bool = False
    single_hop: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.mu < 1.0:
            raise ValueError(f"threshold mu must lie in (0, 1), got {self.mu}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class LayerGraph:
    """Raw weights ``R``, masked adjacency ``A`` and the kept-edge count."""

    R: ad.Tensor
    A: ad.Tensor
    edge_count: int

    @property
    def mask(self) -> np.ndarray:
        return self.A.values != 0.0

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]


def adjacency_weights(H: ad.Tensor, wq: ad.Tensor, wk: ad.Tensor) -> ad.Tensor:
    """r_ij = sigmoid(relu(h_i Wq) . (h_j Wk)) for all node pairs, u included.

    The relu sits on the query side only.
    """
    if H.shape[1] != wq.shape[0] or H.shape[1] != wk.shape[0]:
        raise ad.ShapeError(f"node width {H.shape[1]} does not match W_Q {wq.shape} / W_K {wk.shape}")
    if wq.shape != wk.shape:
        raise ad.ShapeError(f"W_Q {wq.shape} and W_K {wk.shape} differ")
    q = ad.relu(H @ wq)
    k = H @ wk
    return ad.sigmoid(q @ k.T)


def symmetrize(R: ad.Tensor) -> ad.Tensor:
    if R.values.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ad.ShapeError(f"symmetrize needs a square matrix, got {R.shape}")
    return ad.scale(R + R.T, 0.5)


def differentiable_threshold(R: ad.Tensor, cfg: L2CConfig = L2CConfig()) -> LayerGraph:
    """Near-binary edges: a = r / (detach(r) + eps) where r > mu, else 0.

    Kept entries have forward value r/(r+eps) just below 1 and gradient
    1/(r+eps) with respect to r; dropped entries carry no gradient.
    """
    keep = R.values > cfg.mu
    a_hat = R / (ad.stop_gradient(R) + cfg.eps)
    A = a_hat * ad.Tensor(keep.astype(np.float64))
    return LayerGraph(R=R, A=A, edge_count=int(keep.sum()))


def l0_penalty(graphs: Sequence[LayerGraph]) -> ad.Tensor:
    """Sum of kept edge weights over the given layers (about the edge count)."""
    total = ad.Tensor(0.0)
    for g in graphs:
        total = total + ad.sum(g.A)
    return total


def build_layer_graph(H: ad.Tensor, wq: ad.Tensor, wk: ad.Tensor, cfg: L2CConfig) -> LayerGraph:
    R = adjacency_weights(H, wq, wk)
    if cfg.undirected:
        R = symmetrize(R)
    return differentiable_threshold(R, cfg)


def init_l2c_weights(d: int, hid: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / (d + hid))
    return rng.uniform(-bound, bound, (d, hid)), rng.uniform(-bound, bound, (d, hid))
