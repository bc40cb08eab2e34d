"""Dataset ingestion, post encoders and the synthetic corpus generator."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad

PAD_ID = 0
UNK_ID = 1
DEFAULT_MAX_POSTS = 100
DEFAULT_MAX_LEN = 70


class SchemaError(ValueError):
    pass


@dataclass
class UserSample:
    """One user's unordered post set plus binary trait labels.

    ``posts`` holds either token-id lists (text schema) or float vectors
    (vector schema); ``kind`` says which.
    """

    id: str
    posts: list
    labels: list[int]
    kind: str = "tokens"

    @property
    def n_posts(self) -> int:
        return len(self.posts)

    def permuted(self, order: Sequence[int]) -> "UserSample":
        return UserSample(self.id, [self.posts[i] for i in order], list(self.labels), self.kind)


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._index = {tok: i + 2 for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise SchemaError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens) + 2

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, text: str, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
        return [self.id(tok) for tok in text.split()][:max_len]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for tok in text.split():
                seen.setdefault(tok, None)
        return cls(list(seen))

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])

    def save(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")


def read_records(path: Union[str, os.PathLike], schema: str, T: int) -> list[dict]:
    """Parse and validate JSONL records without tokenizing."""
    if schema not in ("text", "vectors"):
        raise ValueError(f"unknown schema {schema!r}")
    payload_key = "posts" if schema == "text" else "vectors"
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise SchemaError(f"{path}:{lineno}: record is not an object")
            for key in ("id", payload_key, "labels"):
                if key not in rec:
                    raise SchemaError(f"{path}:{lineno}: missing {key!r}")
            labels = rec["labels"]
            if not isinstance(labels, list) or len(labels) != T:
                raise SchemaError(f"{path}:{lineno}: expected {T} labels, got {labels!r}")
            if any(lab not in (0, 1) for lab in labels):
                raise SchemaError(f"{path}:{lineno}: labels must be 0/1")
            if not isinstance(rec[payload_key], list) or not rec[payload_key]:
                raise SchemaError(f"{path}:{lineno}: {payload_key!r} must be a non-empty list")
            rec["_line"] = lineno
            records.append(rec)
    return records


def load_jsonl(
    path: Union[str, os.PathLike],
    schema: str,
    T: int,
    vocab: Optional[Vocabulary] = None,
    max_posts: int = DEFAULT_MAX_POSTS,
    max_len: int = DEFAULT_MAX_LEN,
    stopwords: Optional[Iterable[str]] = None,
) -> list[UserSample]:
    """Load one user per line, keeping the first ``max_posts`` posts.

    For the text schema a vocabulary is built from the file when none is
    given. ``stopwords`` are removed (exact, case-sensitive whole-token
    match) before tokenization; a post left empty maps to a single UNK.
    """
    records = read_records(path, schema, T)
    samples = []
    if schema == "vectors":
        for rec in records:
            vecs = [[float(x) for x in v] for v in rec["vectors"][:max_posts]]
            if len({len(v) for v in vecs}) != 1:
                raise SchemaError(f"{path}:{rec['_line']}: inconsistent vector lengths")
            samples.append(UserSample(str(rec["id"]), vecs, list(rec["labels"]), "vectors"))
        return samples

    drop = set(stopwords or ())
    texts = []
    for rec in records:
        posts = [str(p) for p in rec["posts"][:max_posts]]
        if drop:
            posts = [" ".join(t for t in p.split() if t not in drop) for p in posts]
        texts.append(posts)
    if vocab is None:
        vocab = Vocabulary.build(p for posts in texts for p in posts)
    for rec, posts in zip(records, texts):
        ids = [vocab.encode(p, max_len) or [UNK_ID] for p in posts]
        samples.append(UserSample(str(rec["id"]), ids, list(rec["labels"]), "tokens"))
    return samples


def _append_user_row(rows: ad.Tensor) -> ad.Tensor:
    # order-independent sum keeps the user row bitwise stable under permutation
    u = ad.reshape(ad.mean(rows, axis=0, exact=True), (1, rows.shape[1]))
    return ad.concat_rows([rows, u])


def encode_bag(
    sample: UserSample,
    embeddings: ad.Tensor,
    dropout: float = 0.1,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> ad.Tensor:
    """Mean-pool token embeddings per post and append the user row.

    Returns an (N+1) x d node matrix whose last row is the mean of the post
    rows (taken after dropout).
    """
    if sample.kind != "tokens":
        raise SchemaError("encode_bag needs token-id posts")
    flat: list[int] = []
    lengths = []
    for i, post in enumerate(sample.posts):
        ids = [t for t in post if t != PAD_ID]
        if not ids:
            raise SchemaError(f"post {i} of user {sample.id!r} has no tokens")
        flat.extend(ids)
        lengths.append(len(ids))
    if max(flat) >= embeddings.shape[0]:
        raise SchemaError(f"token id {max(flat)} outside embedding table of {embeddings.shape[0]} rows")
    h = ad.segment_mean(ad.take_rows(embeddings, flat), lengths)
    h = ad.dropout(h, dropout, rng, training)
    return _append_user_row(h)


def load_precomputed(sample: UserSample, d: Optional[int] = None) -> ad.Tensor:
    """Frozen node matrix from precomputed post vectors."""
    if sample.kind != "vectors":
        raise SchemaError("load_precomputed needs vector posts")
    widths = {len(v) for v in sample.posts}
    if len(widths) != 1:
        raise SchemaError(f"user {sample.id!r}: inconsistent vector lengths {sorted(widths)}")
    width = widths.pop()
    if d is not None and width != d:
        raise SchemaError(f"user {sample.id!r}: vectors have d={width}, model expects {d}")
    return _append_user_row(ad.Tensor(np.array(sample.posts, dtype=np.float64)))


def init_embeddings(vocab_size: int, d: int, rng: np.random.Generator) -> np.ndarray:
    emb = rng.uniform(-0.1, 0.1, size=(vocab_size, d))
    emb[PAD_ID] = 0.0
    return emb


# --- synthetic corpus -------------------------------------------------------

def signal_token(t: int, cls: int, k: int) -> str:
    return f"sig{t}c{cls}x{k}"


def noise_token(k: int) -> str:
    return f"w{k}"


def synth_generate(
    users: int,
    posts_per_user: int,
    T: int,
    vocab: int,
    noise_ratio: float,
    seed: int,
    out_dir: Union[str, os.PathLike, None] = None,
    *,
    val_users: Optional[int] = None,
    test_users: Optional[int] = None,
    post_length: int = 6,
    signal_per_class: int = 3,
    positive_rate: Union[float, Sequence[float]] = 0.5,
) -> dict[str, list[dict]]:
    """Generate train/val/test splits of a planted-signal corpus.

    Each trait owns two disjoint signal-token sets, one per class. A post is
    pure noise with probability ``noise_ratio``; otherwise it carries one
    token from the user's class set for every trait, padded with noise
    tokens to ``post_length``. Every user gets at least one signal post
    unless ``noise_ratio == 1``. ``positive_rate`` sets P(label=1) per
    trait to mimic skewed trait distributions.

    ``users`` is the training-split size; val/test default to ``users // 5``.
    When ``out_dir`` is given the splits are written as ``train.jsonl``,
    ``val.jsonl``, ``test.jsonl`` plus ``vocab.txt``.
    """
    if not 0.0 <= noise_ratio <= 1.0:
        raise ValueError("noise_ratio must lie in [0, 1]")
    n_signal = 2 * T * signal_per_class
    n_noise = vocab - n_signal
    if signal_per_class < 1 or n_noise < max(1, post_length - T):
        raise ValueError(
            f"vocab={vocab} too small: need {n_signal} signal tokens plus at least "
            f"{max(1, post_length - T)} noise tokens"
        )
    if post_length < T:
        raise ValueError("post_length must fit one signal token per trait")
    rates = [positive_rate] * T if np.isscalar(positive_rate) else list(positive_rate)
    if len(rates) != T:
        raise ValueError("positive_rate needs one entry per trait")

    signal_sets = [[[signal_token(t, c, k) for k in range(signal_per_class)] for c in (0, 1)] for t in range(T)]
    flat_signal = [tok for t in signal_sets for c in t for tok in c]
    if len(set(flat_signal)) != len(flat_signal):
        raise ValueError("signal sets overlap")
    noise_vocab = [noise_token(k) for k in range(n_noise)]

    rng = np.random.default_rng(seed)
    sizes = {
        "train": users,
        "val": users // 5 if val_users is None else val_users,
        "test": users // 5 if test_users is None else test_users,
    }
    splits: dict[str, list[dict]] = {}
    for split, count in sizes.items():
        rows = []
        for u in range(count):
            labels = [int(rng.random() < rates[t]) for t in range(T)]
            is_noise = rng.random(posts_per_user) < noise_ratio
            if noise_ratio < 1.0 and is_noise.all():
                is_noise[rng.integers(posts_per_user)] = False
            posts = []
            for noisy in is_noise:
                words = list(rng.choice(noise_vocab, size=post_length))
                if not noisy:
                    slots = rng.permutation(post_length)[:T]
                    for t, slot in enumerate(slots):
                        words[slot] = signal_sets[t][labels[t]][rng.integers(signal_per_class)]
                posts.append(" ".join(str(w) for w in words))
            rows.append({"id": f"{split}-{u}", "posts": posts, "labels": labels})
        splits[split] = rows

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for split, rows in splits.items():
            with open(os.path.join(out_dir, f"{split}.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
                for row in rows:
                    fh.write(json.dumps(row) + "\n")
        Vocabulary(flat_signal + noise_vocab).save(os.path.join(out_dir, "vocab.txt"))
    return splits


def signal_vote(posts: Sequence[str], T: int) -> list[int]:
    """Per-trait majority vote over planted signal tokens; ties go to class 0."""
    counts = np.zeros((T, 2), dtype=np.int64)
    for post in posts:
        for tok in post.split():
            if tok.startswith("sig"):
                t, rest = tok[3:].split("c", 1)
                c = int(rest.split("x", 1)[0])
                if int(t) < T:
                    counts[int(t), c] += 1
    return [int(counts[t, 1] > counts[t, 0]) for t in range(T)]
