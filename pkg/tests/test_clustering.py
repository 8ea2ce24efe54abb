import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuss.clustering import (
    CentroidMatrix,
    assign,
    centroid_step,
    cluster_loss,
    cluster_loss_grad,
    init_centroids,
    kmeans_objective,
    predict_mask,
    score,
)
from fuss.errors import ConfigurationError
from fuss.head import AdamState
from fuss.tensors import FeatureMap, cosine_similarity, flatten


def frozen_assignment_loss(pixels, rows, labels, lam):
    """Reference objective with assignments held fixed (the gradient convention)."""
    intra = float(((pixels - rows[labels]) ** 2).sum())
    inter = 0.0
    k = rows.shape[0]
    for c in range(k):
        for c2 in range(k):
            if c != c2:
                inter += cosine_similarity(rows[c], rows[c2])
    return intra + lam * inter


class TestScore:
    def test_basis_vectors(self):
        h = FeatureMap(np.array([[[1.0, 0.0]]]))
        m = CentroidMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(score(h, m)[0, 0], [1.0, 0.0])

    def test_zero_centroids(self, rng):
        h = FeatureMap(rng.standard_normal((2, 2, 3)))
        m = CentroidMatrix(np.zeros((4, 3)))
        np.testing.assert_array_equal(score(h, m), 0.0)

    def test_matches_triple_loop_oracle(self, rng):
        h = FeatureMap(rng.standard_normal((2, 2, 5)))
        m = CentroidMatrix(rng.standard_normal((3, 5)))
        got = score(h, m)
        for a in range(2):
            for b in range(2):
                for c in range(3):
                    assert got[a, b, c] == pytest.approx(
                        float(np.dot(h.data[a, b], m.rows[c])), abs=1e-12
                    )

    def test_dim_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            score(FeatureMap(rng.standard_normal((1, 1, 3))),
                  CentroidMatrix(rng.standard_normal((2, 4))))

    def test_normalized_variant_is_cosine(self, rng):
        h = FeatureMap(rng.standard_normal((1, 1, 4)))
        m = CentroidMatrix(rng.standard_normal((2, 4)))
        got = score(h, m, normalized=True)[0, 0]
        for c in range(2):
            assert got[c] == pytest.approx(
                cosine_similarity(h.data[0, 0], m.rows[c]), abs=1e-12
            )


class TestAssign:
    def test_simple_argmax(self):
        mask = assign(np.array([[[1.0, 0.0]]]))
        assert mask.labels[0, 0] == 0

    def test_tie_breaks_to_lowest_class(self):
        mask = assign(np.array([[[0.5, 0.5]]]))
        assert mask.labels[0, 0] == 0

    def test_matches_argmax_oracle(self, rng):
        scores = rng.standard_normal((3, 4, 5))
        mask = assign(scores)
        for h in range(3):
            for w in range(4):
                assert mask.labels[h, w] == int(np.argmax(scores[h, w]))

    @given(st.floats(-5, 5), st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_per_pixel_constant_shift(self, shift, seed):
        scores = np.random.default_rng(seed).standard_normal((2, 2, 3))
        base = assign(scores)
        shifted = assign(scores + shift)
        np.testing.assert_array_equal(base.labels, shifted.labels)

    def test_invariant_under_strictly_increasing_transform(self, rng):
        scores = rng.standard_normal((2, 3, 4))
        base = assign(scores)
        np.testing.assert_array_equal(base.labels, assign(np.tanh(scores)).labels)
        np.testing.assert_array_equal(base.labels, assign(3.0 * scores + 1.0).labels)


class TestClusterLoss:
    def test_pixel_at_centroid_zero_loss(self):
        m = CentroidMatrix(np.array([[2.0, 0.0], [0.0, 1.0]]))
        h = FeatureMap(np.array([[[2.0, 0.0]]]))
        loss, masks = cluster_loss([h], m, lam=0.0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert masks[0].labels[0, 0] == 0

    def test_orthogonal_centroids_no_pixels(self):
        m = CentroidMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        loss, masks = cluster_loss([], m, lam=1.0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert masks == []

    def test_matches_direct_sum_oracle(self, rng):
        m = CentroidMatrix(rng.standard_normal((3, 4)))
        batch = [FeatureMap(rng.standard_normal((2, 3, 4))) for _ in range(2)]
        lam = 0.6
        loss, masks = cluster_loss(batch, m, lam)
        expected_intra = 0.0
        for fmap, mask in zip(batch, masks):
            for h in range(fmap.height):
                for w in range(fmap.width):
                    c = mask.labels[h, w]
                    # oracle recomputes the assignment independently
                    dots = [np.dot(fmap.data[h, w], m.rows[k]) for k in range(3)]
                    assert c == int(np.argmax(dots))
                    expected_intra += float(
                        ((fmap.data[h, w] - m.rows[c]) ** 2).sum()
                    )
        expected_inter = 0.0
        for a in range(3):
            for b in range(3):
                if a != b:
                    expected_inter += cosine_similarity(m.rows[a], m.rows[b])
        assert loss == pytest.approx(expected_intra + lam * expected_inter, abs=1e-9)

    def test_lambda_zero_equals_kmeans_objective_on_same_assignments(self, rng):
        m = CentroidMatrix(rng.standard_normal((3, 4)))
        batch = [FeatureMap(rng.standard_normal((3, 3, 4)))]
        loss, masks = cluster_loss(batch, m, lam=0.0)
        pixels = flatten(batch[0])
        labels = masks[0].labels.ravel()
        assert loss == pytest.approx(kmeans_objective(pixels, m, labels), abs=1e-12)

    def test_negative_lambda_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            cluster_loss([], CentroidMatrix(rng.standard_normal((2, 2))), lam=-1.0)


class TestClusterLossGrad:
    def test_pixels_at_centroids_zero_gradient(self):
        rows = np.array([[1.0, 0.0], [0.0, 2.0]])
        m = CentroidMatrix(rows)
        batch = [FeatureMap(rows.reshape(2, 1, 2))]
        grad = cluster_loss_grad(batch, m, lam=0.0)
        # pixel 1 at [0,2] scores higher on row 1 (dot 4 vs 0), so it is home
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_single_pixel_hand_gradient(self):
        m = CentroidMatrix(np.array([[1.0, 1.0], [5.0, -5.0]]))
        p = np.array([2.0, 3.0])
        batch = [FeatureMap(p.reshape(1, 1, 2))]
        grad = cluster_loss_grad(batch, m, lam=0.0)
        np.testing.assert_allclose(grad[0], 2.0 * (m.rows[0] - p), atol=1e-12)
        np.testing.assert_allclose(grad[1], 0.0, atol=1e-12)

    def test_finite_differences(self, rng):
        for _ in range(20):
            rows = rng.standard_normal((3, 4))
            m = CentroidMatrix(rows)
            batch = [FeatureMap(rng.standard_normal((2, 5, 4)))]
            lam = float(rng.uniform(0.0, 1.0))
            grad = cluster_loss_grad(batch, m, lam)
            pixels = flatten(batch[0])
            labels = np.argmax(pixels @ rows.T, axis=1)
            step = 1e-6
            fd = np.zeros_like(rows)
            it = np.nditer(rows, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                plus, minus = rows.copy(), rows.copy()
                plus[idx] += step
                minus[idx] -= step
                fd[idx] = (
                    frozen_assignment_loss(pixels, plus, labels, lam)
                    - frozen_assignment_loss(pixels, minus, labels, lam)
                ) / (2 * step)
            denom = max(np.abs(fd).max(), 1e-8)
            assert np.abs(grad - fd).max() / denom < 1e-4

    def test_empty_cluster_no_nan(self, rng):
        m = CentroidMatrix(np.array([[0.0, 10.0], [10.0, 0.0], [-10.0, -10.0]]))
        batch = [FeatureMap(np.array([[[0.1, 9.0]]]))]  # everything lands on row 0
        grad = cluster_loss_grad(batch, m, lam=0.5)
        assert np.all(np.isfinite(grad))

    def test_zero_norm_row_no_nan(self, rng):
        m = CentroidMatrix(np.array([[0.0, 0.0], [1.0, 1.0]]))
        batch = [FeatureMap(rng.standard_normal((2, 2, 2)))]
        grad = cluster_loss_grad(batch, m, lam=1.0)
        assert np.all(np.isfinite(grad))


class TestCentroidStep:
    def test_zero_gradient_unchanged(self, rng):
        m = init_centroids(3, 4, seed=0)
        state = AdamState.for_params({"rows": m.rows}, learning_rate=5e-3)
        out = centroid_step(m, np.zeros_like(m.rows), state)
        np.testing.assert_array_equal(out.rows, m.rows)

    def test_training_reduces_loss_monotonically(self, rng):
        pixels = np.concatenate(
            [
                rng.standard_normal((30, 4)) * 0.1 + np.array([3.0, 0, 0, 0]),
                rng.standard_normal((30, 4)) * 0.1 + np.array([0, 3.0, 0, 0]),
            ]
        )
        batch = [FeatureMap(pixels.reshape(6, 10, 4))]
        m = init_centroids(2, 4, seed=1)
        state = AdamState.for_params({"rows": m.rows}, learning_rate=2e-2)
        losses = []
        for _ in range(100):
            loss, _ = cluster_loss(batch, m, lam=0.1)
            losses.append(loss)
            m = centroid_step(m, cluster_loss_grad(batch, m, lam=0.1), state)
        violations = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
        assert violations <= 5
        assert losses[-1] < losses[0] * 0.2

    def test_deterministic(self, rng):
        grads = rng.standard_normal((3, 4))

        def run():
            m = init_centroids(3, 4, seed=7)
            state = AdamState.for_params({"rows": m.rows}, learning_rate=1e-2)
            for _ in range(5):
                m = centroid_step(m, grads, state)
            return m.rows

        np.testing.assert_array_equal(run(), run())


def test_predict_mask_pipeline(rng):
    m = CentroidMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
    h = FeatureMap(np.array([[[0.9, 0.1], [0.2, 0.8]]]))
    mask = predict_mask(h, m)
    np.testing.assert_array_equal(mask.labels, [[0, 1]])
