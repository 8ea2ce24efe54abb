import numpy as np
import pytest

from fuss.errors import ConfigurationError
from fuss.head import (
    AdamState,
    BatchSpec,
    HeadParams,
    adam_step,
    corr_loss,
    corr_loss_and_grad,
    forward,
    init_head_params,
    select_supports,
)
from fuss.synth import RegionLayout, generate_scene, make_class_generators
from fuss.tensors import FeatureMap, SimilarityTensor, cosine_matrix, flatten, similarity_tensor


def finite_difference_grads(params: HeadParams, loss_fn, step=1e-5):
    base = {k: v.copy() for k, v in params.as_dict().items()}
    out = {}
    for name, arr in base.items():
        fd = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[name][idx] += step
            minus[name][idx] -= step
            fd[idx] = (
                loss_fn(HeadParams.from_dict(plus)) - loss_fn(HeadParams.from_dict(minus))
            ) / (2 * step)
        out[name] = fd
    return out


def corr_loss_reference(params, zq, zs, bias):
    a = similarity_tensor(zq, zs)
    q = similarity_tensor(forward(params, zq), forward(params, zs))
    return corr_loss(a, q, bias)


def random_instance(rng, d_in=6, d_hid=6, d_out=3, pixels=(2, 2)):
    """Random head + maps, resampled until no rectifier preactivation sits on
    the kink (finite differences are undefined exactly there)."""
    while True:
        params = init_head_params(d_in, d_hid, d_out, seed=int(rng.integers(2**31)))
        zq = FeatureMap(rng.standard_normal((*pixels, d_in)))
        zs = FeatureMap(rng.standard_normal((*pixels, d_in)))
        pre_q = flatten(zq) @ params.w1.T + params.b1
        pre_s = flatten(zs) @ params.w1.T + params.b1
        if min(np.abs(pre_q).min(), np.abs(pre_s).min()) > 1e-3:
            return params, zq, zs


class TestForward:
    def test_all_zero_params(self):
        params = HeadParams(
            w1=np.zeros((4, 4)), b1=np.zeros(4),
            w2=np.zeros((2, 4)), b2=np.zeros(2), w_skip=np.zeros((2, 4)),
        )
        zmap = FeatureMap(np.ones((2, 2, 4)))
        np.testing.assert_array_equal(forward(params, zmap).data, 0.0)

    def test_identity_skip(self):
        # equal in/out dims configured for this test only
        params = HeadParams(
            w1=np.zeros((3, 3)), b1=np.zeros(3),
            w2=np.zeros((3, 3)), b2=np.zeros(3), w_skip=np.eye(3),
        )
        zmap = FeatureMap(np.random.default_rng(0).standard_normal((2, 2, 3)))
        np.testing.assert_allclose(forward(params, zmap).data, zmap.data, atol=1e-15)

    def test_matches_per_pixel_matmul_oracle(self, rng):
        params = init_head_params(5, 4, 2, seed=1)
        zmap = FeatureMap(rng.standard_normal((2, 2, 5)))
        got = forward(params, zmap).data
        for h in range(2):
            for w in range(2):
                z = zmap.data[h, w]
                hidden = np.maximum(params.w1 @ z + params.b1, 0.0)
                expected = params.w2 @ hidden + params.b2 + params.w_skip @ z
                np.testing.assert_allclose(got[h, w], expected, atol=1e-12)

    def test_dim_mismatch(self, rng):
        params = init_head_params(5, 4, 2, seed=1)
        with pytest.raises(ConfigurationError):
            forward(params, FeatureMap(rng.standard_normal((2, 2, 4))))

    def test_output_dim_cannot_exceed_input_dim(self):
        with pytest.raises(ConfigurationError):
            init_head_params(3, 3, 4, seed=0)

    def test_pointwise_locality_commutes_with_pixel_permutation(self, rng):
        params = init_head_params(4, 4, 2, seed=2)
        data = rng.standard_normal((3, 2, 4))
        base = forward(params, FeatureMap(data)).data
        perm = rng.permutation(6)
        shuffled = data.reshape(6, 4)[perm].reshape(3, 2, 4)
        permuted_out = forward(params, FeatureMap(shuffled)).data
        np.testing.assert_allclose(
            permuted_out.reshape(6, 2), base.reshape(6, 2)[perm], atol=1e-15
        )


class TestCorrLoss:
    def test_zero_q_gives_zero_loss(self, rng):
        a = SimilarityTensor(rng.uniform(-1, 1, size=(1, 2, 1, 2)))
        q = SimilarityTensor(np.zeros((1, 2, 1, 2)))
        assert corr_loss(a, q, 0.3) == 0.0

    def test_bias_cancellation(self, rng):
        bias = 0.4
        a = SimilarityTensor(np.full((2, 1, 2, 1), bias))
        q = SimilarityTensor(rng.uniform(-1, 1, size=(2, 1, 2, 1)))
        assert corr_loss(a, q, bias) == pytest.approx(0.0, abs=1e-12)

    def test_matches_quadruple_loop_oracle(self, rng):
        a = SimilarityTensor(rng.uniform(-1, 1, size=(1, 2, 1, 2)))
        q = SimilarityTensor(rng.uniform(-1, 1, size=(1, 2, 1, 2)))
        bias = 0.2
        expected = 0.0
        for h in range(1):
            for w in range(2):
                for m in range(1):
                    for n in range(2):
                        expected -= (a.data[h, w, m, n] - bias) * q.data[h, w, m, n]
        assert corr_loss(a, q, bias) == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self, rng):
        a = SimilarityTensor(np.zeros((1, 1, 1, 1)))
        q = SimilarityTensor(np.zeros((1, 2, 1, 1)))
        with pytest.raises(ConfigurationError):
            corr_loss(a, q, 0.1)


class TestCorrLossGrad:
    def test_finite_differences_on_random_instances(self, rng):
        for _ in range(20):
            params, zq, zs = random_instance(rng)
            bias = float(rng.uniform(0.0, 0.5))
            loss, grads = corr_loss_and_grad(params, zq, zs, bias)
            assert loss == pytest.approx(
                corr_loss_reference(params, zq, zs, bias), abs=1e-10
            )
            fd = finite_difference_grads(
                params, lambda p: corr_loss_reference(p, zq, zs, bias)
            )
            for name in grads:
                denom = max(np.abs(fd[name]).max(), 1e-8)
                assert np.abs(grads[name] - fd[name]).max() / denom < 1e-4

    def test_scaled_final_layer_still_matches_oracle(self, rng):
        params, zq, zs = random_instance(rng)
        scaled = {k: v.copy() for k, v in params.as_dict().items()}
        scaled["w2"] *= 3.0
        params = HeadParams.from_dict(scaled)
        _, grads = corr_loss_and_grad(params, zq, zs, 0.2)
        fd = finite_difference_grads(params, lambda p: corr_loss_reference(p, zq, zs, 0.2))
        for name in grads:
            denom = max(np.abs(fd[name]).max(), 1e-8)
            assert np.abs(grads[name] - fd[name]).max() / denom < 1e-4

    def test_zero_weight_tensor_gives_zero_gradient(self):
        # all features parallel -> every cosine is 1; bias 1 zeroes the weights
        params = init_head_params(4, 4, 2, seed=0)
        base = np.ones(4)
        zq = FeatureMap(np.stack([base, 2 * base]).reshape(2, 1, 4))
        zs = FeatureMap(np.stack([3 * base, 0.5 * base]).reshape(2, 1, 4))
        loss, grads = corr_loss_and_grad(params, zq, zs, bias=1.0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        for arr in grads.values():
            np.testing.assert_allclose(arr, 0.0, atol=1e-12)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.for_params(params, learning_rate=0.1)
        out = adam_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(out["w"], params["w"])
        assert state.step == 1

    def test_single_step_magnitude_is_learning_rate(self):
        # closed form: |delta| = lr * g / (|g| + eps)
        lr = 5e-4
        params = {"w": np.array([0.0])}
        state = AdamState.for_params(params, learning_rate=lr)
        out = adam_step(params, {"w": np.array([3.0])}, state)
        assert abs(out["w"][0] + lr * 3.0 / (3.0 + state.eps)) < 1e-12
        assert abs(abs(out["w"][0]) - lr) < 1e-10

    def test_deterministic_trajectories(self, rng):
        grads = [rng.standard_normal(3) for _ in range(10)]

        def run():
            params = {"w": np.zeros(3)}
            state = AdamState.for_params(params, learning_rate=0.01)
            for g in grads:
                params = adam_step(params, {"w": g}, state)
            return params["w"]

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch_rejected(self):
        params = {"w": np.zeros(3)}
        state = AdamState.for_params(params, learning_rate=0.1)
        with pytest.raises(ConfigurationError):
            adam_step(params, {"w": np.zeros(4)}, state)


class TestSelectSupports:
    def test_pool_of_two_returns_the_other(self, rng):
        pooled = np.array([[1.0, 0.0], [0.0, 1.0]])
        spec = BatchSpec(queries_per_step=1, random_supports=0)
        assert select_supports(0, pooled, spec, rng) == [1]

    def test_nearest_neighbor_by_cosine(self, rng):
        pooled = np.array([[1.0, 0.0], [0.9, 0.1], [-1.0, 0.5]])
        sims = cosine_matrix(pooled[0:1], pooled)[0]
        sims[0] = -np.inf
        expected = int(np.argmax(sims))
        spec = BatchSpec(queries_per_step=1, random_supports=0)
        assert select_supports(0, pooled, spec, rng)[0] == expected == 1

    def test_same_seed_same_supports(self):
        pooled = np.random.default_rng(3).standard_normal((10, 4))
        spec = BatchSpec(queries_per_step=1, random_supports=3)
        a = select_supports(2, pooled, spec, np.random.default_rng(9))
        b = select_supports(2, pooled, spec, np.random.default_rng(9))
        assert a == b

    def test_clamps_when_pool_too_small(self, rng):
        pooled = np.random.default_rng(3).standard_normal((3, 4))
        spec = BatchSpec(queries_per_step=1, random_supports=5)
        supports = select_supports(0, pooled, spec, rng)
        assert len(supports) == 2  # nn + the single remaining candidate

    def test_supports_never_include_query(self, rng):
        pooled = np.random.default_rng(4).standard_normal((8, 4))
        spec = BatchSpec(queries_per_step=1, random_supports=4)
        for q in range(8):
            assert q not in select_supports(q, pooled, spec, rng)


class TestTrainingSanity:
    def test_corr_loss_decreases_on_separable_batch(self):
        gens = make_class_generators(3, 12, spread=0.05, seed=0)
        layout = RegionLayout(height=3, width=3, random_field=True)
        zq = generate_scene(gens, layout, seed=1).features
        zs = generate_scene(gens, layout, seed=2).features
        params = init_head_params(12, 12, 4, seed=5)
        state = AdamState.for_params(params.as_dict(), learning_rate=5e-3)
        losses = []
        for _ in range(50):
            loss, grads = corr_loss_and_grad(params, zq, zs, bias=0.2)
            losses.append(loss)
            params = HeadParams.from_dict(adam_step(params.as_dict(), grads, state))
        violations = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
        assert violations <= 5
        assert losses[-1] < losses[0]
