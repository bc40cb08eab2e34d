"""The full per-trait graph model: encoder, L2C + propagation branches, heads, loss."""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from . import corpus, dgcn, l2c

CHECKPOINT_MAGIC = "DDGCN-CHECKPOINT 1"


class NumericError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    d: int = 32
    hid: int = 32
    L: int = 2
    T: int = 4
    mu: float = 0.5
    eps: float = 1e-6
    encoder_dropout: float = 0.1
    dropout: float = 0.2
    encoder: str = "bag"
    vocab_size: int = 0
    plain_gcn: bool = False
    single_hop: bool = False
    undirected: bool = False
    fixed_graph: Optional[float] = None
    no_special_node: bool = False
    l0_enabled: bool = True

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError("depth L must be >= 1")
        if self.T < 1:
            raise ValueError("trait count T must be >= 1")
        if self.d < 1 or self.hid < 1:
            raise ValueError("d and hid must be positive")
        if self.encoder not in ("bag", "vectors"):
            raise ValueError(f"encoder must be 'bag' or 'vectors', got {self.encoder!r}")
        if self.encoder == "bag" and self.vocab_size < 3:
            raise ValueError("bag encoder needs vocab_size >= 3 (pad, unk and one token)")
        l2c.L2CConfig(self.mu, self.eps)

    @property
    def l2c(self) -> l2c.L2CConfig:
        return l2c.L2CConfig(self.mu, self.eps, self.undirected, self.single_hop)

    @property
    def learns_graph(self) -> bool:
        return self.fixed_graph is None

    @property
    def l2c_layers(self) -> int:
        if not self.learns_graph:
            return 0
        return 1 if self.single_hop else self.L


@dataclass
class ForwardTrace:
    logits: list[ad.Tensor]
    graphs: list[list[l2c.LayerGraph]]
    l0: ad.Tensor
    h_out: list[ad.Tensor]
    n_posts: int = 0

    @property
    def logit_values(self) -> np.ndarray:
        return np.stack([lg.values.reshape(-1) for lg in self.logits])


# --- parameters -------------------------------------------------------------

def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, ad.Tensor]:
    """Seeded initial parameters keyed by their checkpoint names."""
    p: dict[str, np.ndarray] = {}
    if cfg.encoder == "bag":
        p["embed"] = corpus.init_embeddings(cfg.vocab_size, cfg.d, rng)
    head_bound = np.sqrt(6.0 / (cfg.d + 2))
    for t in range(cfg.T):
        for k in range(cfg.l2c_layers):
            p[f"branch{t}.l2c.{k}.wq"], p[f"branch{t}.l2c.{k}.wk"] = l2c.init_l2c_weights(cfg.d, cfg.hid, rng)
        if cfg.plain_gcn:
            bound = np.sqrt(6.0 / (2 * cfg.d))
            for k in range(cfg.L):
                p[f"branch{t}.gcn.{k}.w"] = rng.uniform(-bound, bound, (cfg.d, cfg.d))
        p[f"branch{t}.c"] = rng.uniform(-np.sqrt(6.0 / (cfg.d + 1)), np.sqrt(6.0 / (cfg.d + 1)), (cfg.d, 1))
        p[f"branch{t}.wu"] = rng.uniform(-head_bound, head_bound, (cfg.d, 2))
        p[f"branch{t}.bu"] = np.zeros(2)
    return {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def param_group(name: str) -> str:
    """Optimizer group of a parameter: 'encoder', 'l2c' or 'other'."""
    if name == "embed":
        return "encoder"
    if ".l2c." in name:
        return "l2c"
    return "other"


def count_parameters(params: dict[str, ad.Tensor], branch: Optional[int] = None, include_l2c: bool = True) -> int:
    total = 0
    for name, p in params.items():
        if branch is not None and not name.startswith(f"branch{branch}."):
            continue
        if not include_l2c and param_group(name) == "l2c":
            continue
        total += p.size
    return total


# --- forward ----------------------------------------------------------------

def build_fixed_graph(H, threshold: float) -> ad.Tensor:
    """Constant 0/1 adjacency with an edge where cosine(h_i, h_j) > threshold.

    The diagonal is left empty; self-loops come from normalization.
    """
    X = np.asarray(H.values if isinstance(H, ad.Tensor) else H, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("fixed graph: zero-norm node vector")
    U = X / norms[:, None]
    A = (U @ U.T > threshold).astype(np.float64)
    np.fill_diagonal(A, 0.0)
    return ad.Tensor(A)


def encode(
    sample: corpus.UserSample,
    params: dict[str, ad.Tensor],
    cfg: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ad.Tensor:
    if cfg.encoder == "bag":
        if sample.kind != "tokens":
            raise corpus.SchemaError(f"user {sample.id!r}: bag encoder needs text posts")
        return corpus.encode_bag(sample, params["embed"], cfg.encoder_dropout, rng, training)
    if sample.kind != "vectors":
        raise corpus.SchemaError(f"user {sample.id!r}: vector encoder needs precomputed vectors")
    return corpus.load_precomputed(sample, cfg.d)


def forward(
    sample: corpus.UserSample,
    params: dict[str, ad.Tensor],
    cfg: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ForwardTrace:
    H0 = encode(sample, params, cfg, training, rng)
    n = H0.shape[0]
    fixed = None
    if not cfg.learns_graph:
        A_fixed = build_fixed_graph(H0, cfg.fixed_graph)
        fixed = l2c.LayerGraph(R=A_fixed, A=A_fixed, edge_count=int((A_fixed.values != 0).sum()))
    lcfg = cfg.l2c

    logits, graphs, outs = [], [], []
    l0 = ad.Tensor(0.0)
    for t in range(cfg.T):
        H = H0
        stack = [H0]
        layer_graphs: list[l2c.LayerGraph] = []
        for k in range(cfg.L):
            if fixed is not None:
                graph = fixed
            elif cfg.single_hop and k > 0:
                graph = layer_graphs[0]
            else:
                graph = l2c.build_layer_graph(
                    H, params[f"branch{t}.l2c.{k}.wq"], params[f"branch{t}.l2c.{k}.wk"], lcfg
                )
                if not np.all(np.isfinite(graph.R.values)):
                    raise NumericError(f"non-finite edge weights in trait {t}, layer {k + 1}")
                l0 = l0 + ad.sum(graph.A)
            layer_graphs.append(graph)
            A_hat = dgcn.normalize(graph.A)
            if cfg.plain_gcn:
                H = dgcn.gcn_layer(H, A_hat, params[f"branch{t}.gcn.{k}.w"])
            else:
                H = dgcn.propagate(H, A_hat)
            if not np.all(np.isfinite(H.values)):
                raise NumericError(f"non-finite node states in trait {t}, layer {k + 1}")
            stack.append(H)
        h_out = dgcn.layer_attention(stack, params[f"branch{t}.c"])
        h_out = ad.dropout(h_out, cfg.dropout, rng, training)
        if cfg.no_special_node:
            feat = ad.reshape(ad.mean(ad.take_rows(h_out, np.arange(n - 1)), axis=0, exact=True), (1, cfg.d))
        else:
            feat = ad.take_rows(h_out, [n - 1])
        lg = feat @ params[f"branch{t}.wu"] + ad.reshape(params[f"branch{t}.bu"], (1, 2))
        if not np.all(np.isfinite(lg.values)):
            raise NumericError(f"non-finite logits in trait {t}")
        logits.append(lg)
        graphs.append(layer_graphs)
        outs.append(h_out)
    return ForwardTrace(logits=logits, graphs=graphs, l0=l0, h_out=outs, n_posts=n - 1)


def predict(trace: ForwardTrace) -> list[int]:
    """Argmax per trait; exact ties go to class 0."""
    return [int(lg.values.reshape(-1)[1] > lg.values.reshape(-1)[0]) for lg in trace.logits]


def loss(
    traces: Union[ForwardTrace, Sequence[ForwardTrace]],
    labels: Union[Sequence[int], Sequence[Sequence[int]]],
    lam: float,
    cfg: ModelConfig,
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """(total, cross-entropy, l0) for one user or a mini-batch of users.

    Cross-entropy is summed over traits and averaged over users; the edge
    penalty is summed over users, traits and layers. With the penalty
    enabled, total = lam * ce + l0, otherwise total = ce.
    """
    if not 0.0 <= lam <= 100.0:
        raise ValueError(f"lambda must lie in [0, 100], got {lam}")
    if isinstance(traces, ForwardTrace):
        traces, labels = [traces], [labels]
    if len(traces) != len(labels):
        raise ValueError("one label list per trace expected")
    ce = ad.Tensor(0.0)
    l0 = ad.Tensor(0.0)
    for trace, ys in zip(traces, labels):
        if len(ys) != len(trace.logits):
            raise ValueError(f"{len(ys)} labels for {len(trace.logits)} traits")
        for lg, y in zip(trace.logits, ys):
            ce = ce + ad.softmax_cross_entropy(lg, [y])
        l0 = l0 + trace.l0
    ce = ad.scale(ce, 1.0 / len(traces))
    total = ad.scale(ce, lam) + l0 if cfg.l0_enabled else ce
    return total, ce, l0


# --- checkpoints ------------------------------------------------------------

_HEADER = re.compile(r"^(\S+) (\d+)((?: \d+)*)$")


def save_checkpoint(path: Union[str, os.PathLike], params: dict[str, ad.Tensor], cfg: Optional[ModelConfig] = None) -> None:
    """Write parameters as text headers followed by little-endian float64 data.

    Layout: a magic line, an optional ``#config <json>`` line, then per
    parameter a line ``<key> <ndim> <dim>...`` and ``prod(dims) * 8`` bytes.
    """
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode())
        if cfg is not None:
            fh.write(("#config " + json.dumps(asdict(cfg), sort_keys=True) + "\n").encode())
        for key in sorted(params):
            arr = np.ascontiguousarray(params[key].values, dtype="<f8")
            dims = "".join(f" {s}" for s in arr.shape)
            fh.write(f"{key} {arr.ndim}{dims}\n".encode())
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: Union[str, os.PathLike]) -> tuple[dict[str, ad.Tensor], Optional[ModelConfig]]:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def readline() -> str:
        nonlocal pos
        end = data.index(b"\n", pos)
        line = data[pos:end].decode()
        pos = end + 1
        return line

    if readline() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    cfg = None
    params: dict[str, ad.Tensor] = {}
    while pos < len(data):
        line = readline()
        if line.startswith("#config "):
            raw = json.loads(line[len("#config "):])
            known = {f.name for f in fields(ModelConfig)}
            cfg = ModelConfig(**{k: v for k, v in raw.items() if k in known})
            continue
        m = _HEADER.match(line)
        if not m:
            raise ValueError(f"{path}: bad entry header {line!r}")
        shape = tuple(int(s) for s in m.group(3).split())
        if len(shape) != int(m.group(2)):
            raise ValueError(f"{path}: rank mismatch in header {line!r}")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
        params[m.group(1)] = ad.Tensor(arr, requires_grad=True, name=m.group(1))
    return params, cfg


def check_param_shapes(params: dict[str, ad.Tensor], cfg: ModelConfig) -> None:
    expected = init_params(cfg, np.random.default_rng(0))
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"checkpoint keys do not match config (missing {missing}, unexpected {extra})")
    for k, v in expected.items():
        if params[k].shape != v.shape:
            raise ValueError(f"checkpoint entry {k} has shape {params[k].shape}, config expects {v.shape}")
