import filecmp
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddgcn import autodiff as ad
from ddgcn import corpus
from ddgcn.corpus import UserSample


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


class TestLoadJsonl:
    def test_basic(self, tmp_path):
        rows = [{"id": f"u{i}", "posts": ["a b", "c", "a d"], "labels": [0, 1, 1, 0]} for i in range(2)]
        samples = corpus.load_jsonl(write_jsonl(tmp_path / "d.jsonl", rows), "text", T=4)
        assert len(samples) == 2
        assert [s.n_posts for s in samples] == [3, 3]
        assert [s.id for s in samples] == ["u0", "u1"]

    def test_post_cap_keeps_first(self, tmp_path):
        posts = [f"tok{i}" for i in range(120)]
        path = write_jsonl(tmp_path / "d.jsonl", [{"id": "x", "posts": posts, "labels": [1]}])
        vocab = corpus.Vocabulary(posts)
        (s,) = corpus.load_jsonl(path, "text", T=1, vocab=vocab, max_posts=100)
        assert s.n_posts == 100
        assert s.posts[0] == [vocab.id("tok0")] and s.posts[-1] == [vocab.id("tok99")]

    def test_token_cap(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"id": "x", "posts": [" ".join(["w"] * 90)], "labels": [1]}])
        (s,) = corpus.load_jsonl(path, "text", T=1)
        assert len(s.posts[0]) == 70

    def test_missing_labels_cites_line(self, tmp_path):
        rows = [{"id": "a", "posts": ["x"], "labels": [0]}, {"id": "b", "posts": ["y"]}]
        with pytest.raises(corpus.SchemaError, match=r":2: missing 'labels'"):
            corpus.load_jsonl(write_jsonl(tmp_path / "d.jsonl", rows), "text", T=1)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "posts": ["x"], "labels": [0]}\n{not json\n')
        with pytest.raises(corpus.SchemaError, match=r":2: malformed"):
            corpus.load_jsonl(path, "text", T=1)

    def test_label_count_mismatch(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"id": "a", "posts": ["x"], "labels": [0, 1]}])
        with pytest.raises(corpus.SchemaError, match="expected 4 labels"):
            corpus.load_jsonl(path, "text", T=4)

    def test_vector_schema(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"id": "a", "vectors": [[1, 0], [0, 1]], "labels": [1]}])
        (s,) = corpus.load_jsonl(path, "vectors", T=1)
        assert s.kind == "vectors" and s.posts == [[1.0, 0.0], [0.0, 1.0]]

    def test_truncation_is_idempotent(self, tmp_path):
        rows = [{"id": "a", "posts": [f"p{i} q" for i in range(12)], "labels": [1]}]
        first = corpus.load_jsonl(write_jsonl(tmp_path / "a.jsonl", rows), "text", T=1, max_posts=5)
        rows[0]["posts"] = rows[0]["posts"][:5]
        again = corpus.load_jsonl(write_jsonl(tmp_path / "b.jsonl", rows), "text", T=1, max_posts=5)
        assert first[0].posts == again[0].posts

    def test_stopword_filter(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"id": "a", "posts": ["I am INTJ", "INTJ"], "labels": [1]}])
        vocab = corpus.Vocabulary(["I", "am", "INTJ"])
        (s,) = corpus.load_jsonl(path, "text", T=1, vocab=vocab, stopwords=["INTJ"])
        assert s.posts == [[vocab.id("I"), vocab.id("am")], [corpus.UNK_ID]]


class TestVocabulary:
    def test_reserved_ids(self):
        v = corpus.Vocabulary(["a", "b"])
        assert (v.id("a"), v.id("b"), v.id("zzz")) == (2, 3, corpus.UNK_ID)
        assert len(v) == 4

    def test_roundtrip(self, tmp_path):
        v = corpus.Vocabulary(["x", "y", "z"])
        v.save(tmp_path / "v.txt")
        assert corpus.Vocabulary.load(tmp_path / "v.txt").tokens == ["x", "y", "z"]


class TestEncodeBag:
    def test_single_post(self):
        emb = ad.Tensor([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0]])
        H = corpus.encode_bag(UserSample("u", [[2]], [1]), emb)
        np.testing.assert_array_equal(H.values, [[1, 2], [1, 2]])

    def test_user_row_is_mean(self):
        emb = ad.Tensor([[0, 0], [0, 0], [0, 2.0], [2.0, 0]])
        H = corpus.encode_bag(UserSample("u", [[2], [3]], [1]), emb)
        np.testing.assert_array_equal(H.values[-1], [1, 1])

    def test_padding_excluded(self):
        emb = ad.Tensor([[9.0, 9.0], [0, 0], [2.0, 4.0]])
        H = corpus.encode_bag(UserSample("u", [[2, 0, 0]], [1]), emb)
        np.testing.assert_array_equal(H.values[0], [2, 4])

    def test_empty_post_rejected(self):
        with pytest.raises(corpus.SchemaError):
            corpus.encode_bag(UserSample("u", [[2], [0]], [1]), ad.Tensor(np.ones((3, 2))))

    def test_gradient_reaches_embeddings(self):
        emb = ad.Tensor(np.ones((4, 2)), requires_grad=True)
        H = corpus.encode_bag(UserSample("u", [[2, 3], [3]], [1]), emb)
        ad.sum(H).backward()
        # post rows: 1/2 each for tokens 2,3 in post 0, 1 for token 3 in post 1;
        # user row adds half of each post row
        np.testing.assert_allclose(emb.grad[:, 0], [0, 0, 0.75, 2.25])

    def test_training_dropout_keeps_user_row_mean(self, rng):
        emb = ad.Tensor(rng.normal(size=(10, 6)))
        s = UserSample("u", [[2, 3], [4], [5, 6, 7]], [1])
        H = corpus.encode_bag(s, emb, dropout=0.5, rng=rng, training=True).values
        np.testing.assert_allclose(H[-1], H[:-1].mean(axis=0), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_encode_bag_permutation_equivariant(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    n = data.draw(st.integers(1, 8))
    emb = ad.Tensor(rng.normal(size=(20, 5)))
    posts = [list(rng.integers(2, 20, size=rng.integers(1, 6))) for _ in range(n)]
    perm = data.draw(st.permutations(range(n)))
    s = UserSample("u", posts, [0])
    H = corpus.encode_bag(s, emb).values
    Hp = corpus.encode_bag(s.permuted(perm), emb).values
    assert np.array_equal(Hp[:-1], H[:-1][list(perm)])
    assert np.array_equal(Hp[-1], H[-1])


class TestLoadPrecomputed:
    def test_rows_and_mean(self):
        H = corpus.load_precomputed(UserSample("u", [[1.0, 0.0], [0.0, 1.0]], [1], "vectors"))
        np.testing.assert_array_equal(H.values, [[1, 0], [0, 1], [0.5, 0.5]])
        assert not H.requires_grad

    def test_single_post(self):
        H = corpus.load_precomputed(UserSample("u", [[3.0, -1.0]], [1], "vectors"))
        np.testing.assert_array_equal(H.values[0], H.values[1])

    def test_width_mismatch(self):
        with pytest.raises(corpus.SchemaError):
            corpus.load_precomputed(UserSample("u", [[1.0, 0.0]], [1], "vectors"), d=3)

    def test_inconsistent_lengths(self):
        with pytest.raises(corpus.SchemaError):
            corpus.load_precomputed(UserSample("u", [[1.0, 0.0], [1.0]], [1], "vectors"))


class TestSynth:
    def test_single_clean_post_carries_class_signal(self):
        splits = corpus.synth_generate(20, 1, 1, 20, 0.0, seed=3)
        for row in splits["train"]:
            toks = row["posts"][0].split()
            cls = row["labels"][0]
            assert any(t.startswith(f"sig0c{cls}x") for t in toks)
            assert not any(t.startswith(f"sig0c{1 - cls}x") for t in toks)

    def test_same_seed_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            corpus.synth_generate(30, 5, 2, 60, 0.3, seed=7, out_dir=tmp_path / name)
        for f in ("train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt"):
            assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)

    def test_noise_fraction(self):
        splits = corpus.synth_generate(125, 8, 2, 100, 0.5, seed=11, val_users=0, test_users=0)
        posts = [p for row in splits["train"] for p in row["posts"]]
        assert len(posts) == 1000
        frac = np.mean([any(t.startswith("sig") for t in p.split()) for p in posts])
        assert abs(frac - 0.5) <= 0.05

    def test_vocab_too_small(self):
        with pytest.raises(ValueError):
            corpus.synth_generate(5, 3, 4, 20, 0.5, seed=1)

    def test_class_skew(self):
        splits = corpus.synth_generate(2000, 2, 1, 30, 0.0, seed=5, positive_rate=0.2, val_users=0, test_users=0)
        rate = np.mean([r["labels"][0] for r in splits["train"]])
        assert abs(rate - 0.2) < 0.03

    @pytest.mark.parametrize("noise", [0.0, 0.25, 0.5])
    def test_signal_vote_recovers_labels(self, noise):
        from ddgcn.harness import macro_f1

        splits = corpus.synth_generate(400, 8, 3, 120, noise, seed=2, val_users=0, test_users=0)
        y = np.array([r["labels"] for r in splits["train"]])
        p = np.array([corpus.signal_vote(r["posts"], 3) for r in splits["train"]])
        assert np.mean([macro_f1(y[:, t], p[:, t]) for t in range(3)]) >= 0.98
