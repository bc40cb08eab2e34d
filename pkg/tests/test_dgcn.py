import numpy as np
import pytest

from ddgcn import autodiff as ad
from ddgcn import dgcn
from conftest import param


class TestNormalize:
    def test_empty_graph_gives_identity(self):
        np.testing.assert_array_equal(dgcn.normalize(ad.Tensor(np.zeros((4, 4)))).values, np.eye(4))

    def test_two_node_symmetric(self):
        out = dgcn.normalize(ad.Tensor([[0.0, 1.0], [1.0, 0.0]])).values
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)

    def test_two_node_directed(self):
        # D = diag(2, 1): entries (1/2, 1/sqrt(2); 0, 1)
        out = dgcn.normalize(ad.Tensor([[0.0, 1.0], [0.0, 0.0]])).values
        np.testing.assert_allclose(out, [[0.5, 1 / np.sqrt(2)], [0.0, 1.0]], atol=1e-12)

    def test_symmetric_input_stays_symmetric(self, rng):
        A = rng.uniform(size=(7, 7)) * (rng.uniform(size=(7, 7)) > 0.5)
        A = A + A.T
        out = dgcn.normalize(ad.Tensor(A)).values
        assert np.max(np.abs(out - out.T)) < 1e-12

    def test_matches_dense_formula(self, rng):
        A = rng.uniform(size=(5, 5))
        M = A + np.eye(5)
        Dm = np.diag(M.sum(axis=1) ** -0.5)
        np.testing.assert_allclose(dgcn.normalize(ad.Tensor(A)).values, Dm @ M @ Dm, atol=1e-14)

    def test_gradient_through_degrees(self, rng):
        A = param(rng.uniform(0, 1, (4, 4)))
        assert ad.check_gradients(lambda: ad.sum(ad.sigmoid(dgcn.normalize(A))), [A]) < 1e-6


class TestPropagate:
    def test_identity(self, rng):
        H = rng.normal(size=(3, 2))
        np.testing.assert_array_equal(dgcn.propagate(ad.Tensor(H), ad.Tensor(np.eye(3))).values, H)

    def test_averaging(self):
        out = dgcn.propagate(ad.Tensor([[2.0, 0.0], [0.0, 2.0]]), ad.Tensor(np.full((2, 2), 0.5)))
        np.testing.assert_array_equal(out.values, [[1, 1], [1, 1]])

    def test_gradients(self, rng):
        H, A = param(rng.uniform(-2, 2, (4, 3))), param(rng.uniform(0, 1, (4, 4)))
        assert ad.check_gradients(lambda: ad.sum(ad.sigmoid(dgcn.propagate(H, A))), [H, A]) < 1e-6

    def test_permutation_equivariance(self, rng):
        n = 6
        H = rng.normal(size=(n + 1, 3))
        A = rng.uniform(size=(n + 1, n + 1)) * (rng.uniform(size=(n + 1, n + 1)) > 0.4)
        perm = np.append(rng.permutation(n), n)
        P = np.eye(n + 1)[perm]
        base = dgcn.propagate(ad.Tensor(H), dgcn.normalize(ad.Tensor(A))).values
        moved = dgcn.propagate(ad.Tensor(P @ H), dgcn.normalize(ad.Tensor(P @ A @ P.T))).values
        np.testing.assert_allclose(moved, P @ base, atol=1e-13)


class TestLayerAttention:
    def test_zero_projection_halves_sum(self, rng):
        stack = [ad.Tensor(rng.normal(size=(3, 4))) for _ in range(3)]
        out = dgcn.layer_attention(stack, ad.Tensor(np.zeros((4, 1)))).values
        np.testing.assert_allclose(out, 0.5 * sum(h.values for h in stack), atol=1e-15)

    def test_single_layer(self, rng):
        H, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 1))
        out = dgcn.layer_attention([ad.Tensor(H)], ad.Tensor(c)).values
        np.testing.assert_allclose(out, H / (1 + np.exp(-(H @ c))), atol=1e-15)

    def test_empty_stack(self):
        with pytest.raises(ValueError):
            dgcn.layer_attention([], ad.Tensor(np.zeros((2, 1))))

    def test_gradient_wrt_projection(self, rng):
        stack = [ad.Tensor(rng.uniform(-2, 2, (4, 3))) for _ in range(3)]
        c = param(rng.uniform(-1, 1, (3, 1)))
        assert ad.check_gradients(lambda: ad.sum(dgcn.layer_attention(stack, c)), [c]) < 1e-6

    def test_row_permutation_commutes(self, rng):
        stack = [rng.normal(size=(5, 3)) for _ in range(3)]
        c = ad.Tensor(rng.normal(size=(3, 1)))
        perm = rng.permutation(5)
        a = dgcn.layer_attention([ad.Tensor(h) for h in stack], c).values[perm]
        b = dgcn.layer_attention([ad.Tensor(h[perm]) for h in stack], c).values
        np.testing.assert_array_equal(a, b)


class TestGCNLayer:
    def test_identity(self, rng):
        H = np.abs(rng.normal(size=(3, 3)))
        np.testing.assert_array_equal(dgcn.gcn_layer(ad.Tensor(H), ad.Tensor(np.eye(3)), ad.Tensor(np.eye(3))).values, H)

    def test_zero_weights(self, rng):
        out = dgcn.gcn_layer(ad.Tensor(rng.normal(size=(3, 2))), ad.Tensor(np.eye(3)), ad.Tensor(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.values, 0.0)

    def test_gradients(self, rng):
        H, A, W = param(rng.uniform(-2, 2, (4, 3))), param(rng.uniform(0, 1, (4, 4))), param(rng.uniform(-2, 2, (3, 3)))
        assert ad.check_gradients(lambda: ad.sum(ad.sigmoid(dgcn.gcn_layer(H, A, W))), [H, A, W]) < 1e-6


class TestSmoothness:
    def test_identical_rows(self):
        assert dgcn.smoothness(np.ones((4, 3))) == pytest.approx(1.0)

    def test_orthogonal_rows(self):
        assert dgcn.smoothness(np.eye(2)) == 0.0

    def test_all_zero_rows_rejected(self):
        with pytest.raises(ValueError):
            dgcn.smoothness(np.zeros((3, 2)))


def connected_graph(n, rng):
    """Symmetric 0/1 adjacency with a ring backbone plus random chords."""
    A = (rng.uniform(size=(n, n)) > 0.5).astype(float)
    A = np.triu(A, 1)
    A = A + A.T
    for i in range(n):
        A[i, (i + 1) % n] = A[(i + 1) % n, i] = 1.0
    return A


def test_oversmoothing_converges_to_dominant_eigenvector():
    rng = np.random.default_rng(7)
    A = connected_graph(6, rng)
    A_hat = dgcn.normalize(ad.Tensor(A))
    H = ad.Tensor(rng.normal(size=(6, 4)))

    # oracle: dominant eigenvector from an independent symmetric eigensolver
    w, V = np.linalg.eigh(A_hat.values)
    order = np.argsort(-np.abs(w))
    assert abs(w[order[1]]) ** 100 < 1e-8, "graph must have a spectral gap for this check"
    v = V[:, order[0]]
    degree_dir = np.sqrt((A + np.eye(6)).sum(axis=1))
    degree_dir /= np.linalg.norm(degree_dir)
    assert abs(abs(v @ degree_dir) - 1) < 1e-12

    H1 = dgcn.propagate(H, A_hat)
    Hk = H
    for _ in range(100):
        Hk = dgcn.propagate(Hk, A_hat)
    assert dgcn.smoothness(Hk) >= dgcn.smoothness(H1)
    for col in Hk.values.T:
        resid = col - (col @ v) * v
        assert np.linalg.norm(resid) / np.linalg.norm(col) < 1e-6
