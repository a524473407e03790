"""Unit tests for the autodiff engine: forward semantics and gradients."""

import numpy as np
import pytest

from sknet import autodiff as ad
from sknet.autodiff import (BatchNormState, DimensionError, Tensor,
                            UninitializedStatsError)

from gradcheck import check_gradients, rel_error
from op_checks import OP_BUILDERS, run_op_check


def tensor(values, requires_grad=False):
    return Tensor(np.array(values, dtype=np.float64), requires_grad=requires_grad)


class TestLinear:
    def test_identity(self):
        y = ad.linear(tensor([[1.0, 2.0]]), tensor([[1.0, 0.0], [0.0, 1.0]]),
                      tensor([0.0, 0.0]))
        assert np.array_equal(y.data, [[1.0, 2.0]])

    def test_hand_multiply(self):
        # [1,1] @ [[2,3],[4,5]] + [1,1] = [7,9]
        y = ad.linear(tensor([[1.0, 1.0]]), tensor([[2.0, 3.0], [4.0, 5.0]]),
                      tensor([1.0, 1.0]))
        assert np.array_equal(y.data, [[7.0, 9.0]])

    def test_bias_grad_is_ones(self):
        # single-row input: d(sum(y))/db is exactly ones(Cout)
        x = tensor(np.random.default_rng(0).normal(size=(1, 3)))
        W = tensor(np.random.default_rng(1).normal(size=(3, 2)), requires_grad=True)
        b = tensor([0.0, 0.0], requires_grad=True)
        ad.sum_all(ad.linear(x, W, b)).backward()
        assert np.array_equal(b.grad, np.ones(2))

    def test_bias_grad_scales_with_batch(self):
        x = tensor(np.zeros((5, 3)))
        b = tensor([0.0, 0.0], requires_grad=True)
        ad.sum_all(ad.linear(x, tensor(np.zeros((3, 2))), b)).backward()
        assert np.array_equal(b.grad, np.full(2, 5.0))

    def test_leading_batch_dims(self):
        x = tensor(np.ones((2, 4, 3)), requires_grad=True)
        W = tensor(np.eye(3), requires_grad=True)
        y = ad.linear(x, W, tensor(np.zeros(3)))
        assert y.data.shape == (2, 4, 3)
        ad.sum_all(y).backward()
        assert x.grad.shape == (2, 4, 3)
        assert W.grad.shape == (3, 3)

    def test_shape_mismatch_message(self):
        with pytest.raises(DimensionError, match=r"\(1, 2\).*\(3, 2\)"):
            ad.linear(tensor([[1.0, 2.0]]), tensor(np.zeros((3, 2))), tensor(np.zeros(2)))

    def test_gradcheck(self):
        rng = np.random.default_rng(7)
        x = tensor(rng.normal(size=(4, 3)), requires_grad=True)
        W = tensor(rng.normal(size=(3, 5)), requires_grad=True)
        b = tensor(rng.normal(size=5), requires_grad=True)
        check_gradients(lambda: ad.sum_all(ad.prelu(ad.linear(x, W, b),
                                                    tensor(np.full(5, 0.3)))),
                        [x, W, b], tol=1e-6)


class TestActivations:
    def test_prelu_negative_branch(self):
        y = ad.prelu(tensor([-2.0]), tensor([0.25]))
        assert np.array_equal(y.data, [-0.5])

    def test_prelu_positive_branch(self):
        y = ad.prelu(tensor([3.0]), tensor([0.9]))
        assert np.array_equal(y.data, [3.0])

    def test_prelu_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.prelu(tensor(np.zeros((2, 3))), tensor([0.25, 0.25]))

    def test_prelu_gradcheck_away_from_kink(self):
        rng = np.random.default_rng(3)
        x_data = rng.uniform(-1.0, 1.0, size=(6, 4))
        x_data[np.abs(x_data) < 1e-3] = 0.5  # keep clear of the kink
        x = tensor(x_data, requires_grad=True)
        a = tensor(rng.uniform(0.1, 0.5, size=4), requires_grad=True)
        check_gradients(lambda: ad.sum_all(ad.prelu(x, a)), [x, a],
                        h=1e-6, tol=1e-6)

    def test_relu_values(self):
        assert np.array_equal(ad.relu(tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
        assert np.array_equal(ad.relu(tensor([-5.0, -0.1])).data, [0.0, 0.0])

    def test_relu_subgradient_convention(self):
        x = tensor([2.0, -2.0, 0.0], requires_grad=True)
        ad.sum_all(ad.relu(x)).backward()
        assert np.array_equal(x.grad, [1.0, 0.0, 0.0])


class TestBatchNorm:
    def test_identity_statistics(self):
        # per-channel mean 0, var 1; output matches input up to the eps shift
        x = np.array([[1.0, -1.0], [-1.0, 1.0]])
        st = BatchNormState(2)
        y = ad.batch_norm(tensor(x), tensor([1.0, 1.0]), tensor([0.0, 0.0]), st, True)
        assert np.abs(y.data - x / np.sqrt(1.0 + st.eps)).max() < 1e-12
        assert np.abs(y.data - x).max() < 1e-5

    def test_constant_channel_gives_beta(self):
        x = tensor(np.full((8, 3), 2.5))
        st = BatchNormState(3)
        y = ad.batch_norm(x, tensor(np.ones(3)), tensor([0.1, 0.2, 0.3]), st, True)
        assert np.allclose(y.data, [0.1, 0.2, 0.3], atol=1e-9)

    def test_eval_before_train_raises(self):
        st = BatchNormState(3)
        with pytest.raises(UninitializedStatsError):
            ad.batch_norm(tensor(np.zeros((2, 3))), tensor(np.ones(3)),
                          tensor(np.zeros(3)), st, False)

    def test_running_stats_ema(self):
        st = BatchNormState(1, momentum=0.9)
        g, b = tensor([1.0]), tensor([0.0])
        ad.batch_norm(tensor([[0.0], [2.0]]), g, b, st, True)
        assert np.allclose(st.running_mean, [1.0]) and np.allclose(st.running_var, [1.0])
        ad.batch_norm(tensor([[4.0], [4.0]]), g, b, st, True)
        assert np.allclose(st.running_mean, [0.9 * 1.0 + 0.1 * 4.0])

    def test_eval_uses_running_stats(self):
        st = BatchNormState(1)
        g, b = tensor([2.0]), tensor([1.0])
        ad.batch_norm(tensor([[0.0], [2.0]]), g, b, st, True)
        y = ad.batch_norm(tensor([[1.0]]), g, b, st, False)
        expected = 2.0 * (1.0 - 1.0) / np.sqrt(1.0 + st.eps) + 1.0
        assert np.allclose(y.data, [[expected]], atol=1e-12)

    def test_gradcheck_train_mode(self):
        rng = np.random.default_rng(11)
        x = tensor(rng.normal(size=(4, 3)), requires_grad=True)
        gamma = tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
        beta = tensor(rng.normal(size=3), requires_grad=True)

        def build():
            return ad.sum_all(ad.relu(ad.batch_norm(x, gamma, beta,
                                                    BatchNormState(3), True)))

        check_gradients(build, [x, gamma, beta], h=1e-6, tol=1e-4)


class TestMaxPool:
    def test_axis0(self):
        y, idx = ad.max_pool_axis(tensor([[1.0, 5.0], [3.0, 2.0]]), axis=0)
        assert np.array_equal(y.data, [3.0, 5.0])
        assert np.array_equal(idx, [1, 0])

    def test_permutation_bit_identical(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(32, 7))
        perm = rng.permutation(32)
        y1, _ = ad.max_pool_axis(tensor(x), axis=0)
        y2, _ = ad.max_pool_axis(tensor(x[perm]), axis=0)
        assert np.array_equal(y1.data, y2.data)

    def test_ties_route_to_lowest_index(self):
        x = tensor([[2.0], [2.0], [1.0]], requires_grad=True)
        y, idx = ad.max_pool_axis(x, axis=0)
        ad.sum_all(y).backward()
        assert idx[0] == 0
        assert np.array_equal(x.grad, [[1.0], [0.0], [0.0]])

    def test_empty_axis_raises(self):
        with pytest.raises(ValueError):
            ad.max_pool_axis(tensor(np.zeros((0, 3))), axis=0)

    def test_gradcheck(self):
        rng = np.random.default_rng(13)
        # spread values out to keep finite differences away from ties
        x = tensor(np.sort(rng.normal(size=24))[rng.permutation(24)].reshape(4, 6) * 3,
                   requires_grad=True)
        check_gradients(lambda: ad.sum_all(ad.max_pool_axis(x, axis=1)[0]),
                        [x], tol=1e-6)


class TestConcat:
    def test_feature_axis_widths(self):
        a, b = tensor(np.zeros((6, 256))), tensor(np.ones((6, 256)))
        y = ad.concat([a, b], axis=1)
        assert y.data.shape == (6, 512)

    def test_single_tensor_identity(self):
        a = tensor([[1.0, 2.0]])
        assert np.array_equal(ad.concat([a], axis=0).data, a.data)

    def test_backward_splits_ones(self):
        a = tensor(np.zeros((2, 3)), requires_grad=True)
        b = tensor(np.zeros((2, 2)), requires_grad=True)
        ad.sum_all(ad.concat([a, b], axis=1)).backward()
        assert np.array_equal(a.grad, np.ones((2, 3)))
        assert np.array_equal(b.grad, np.ones((2, 2)))

    def test_incompatible_shapes(self):
        with pytest.raises(DimensionError):
            ad.concat([tensor(np.zeros((2, 3))), tensor(np.zeros((3, 3)))], axis=1)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = ad.softmax_cross_entropy(tensor(np.zeros((3, 4))), np.array([0, 1, 2]))
        assert abs(float(loss.data) - np.log(4.0)) < 1e-12

    def test_dominant_logit(self):
        logits = np.full((2, 5), -30.0)
        logits[0, 2] = 30.0
        logits[1, 4] = 30.0
        loss = ad.softmax_cross_entropy(tensor(logits), np.array([2, 4]))
        assert float(loss.data) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            ad.softmax_cross_entropy(tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_grad_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(17)
        logits = tensor(rng.normal(size=(4, 6)), requires_grad=True)
        labels = np.array([0, 5, 2, 2])
        check_gradients(lambda: ad.softmax_cross_entropy(logits, labels),
                        [logits], h=1e-6, tol=1e-6)
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        probs[np.arange(4), labels] -= 1.0
        logits.grad = None
        ad.softmax_cross_entropy(logits, labels).backward()
        assert rel_error(logits.grad, probs / 4.0) < 1e-12


class TestBackward:
    def test_linear_chain(self):
        x = tensor([2.0], requires_grad=True)
        ad.sum_all(ad.scale(x, 3.0)).backward()
        assert np.array_equal(x.grad, [3.0])

    def test_square_via_mul(self):
        x = tensor([3.0], requires_grad=True)
        ad.sum_all(ad.mul(x, x)).backward()
        assert np.array_equal(x.grad, [6.0])

    def test_fanout_accumulates(self):
        # y = relu(x) + 2x at x=1: dy/dx = 3
        x = tensor([1.0], requires_grad=True)
        ad.sum_all(ad.add(ad.relu(x), ad.scale(x, 2.0))).backward()
        assert np.array_equal(x.grad, [3.0])

    def test_repeated_backward_accumulates(self):
        x = tensor([2.0], requires_grad=True)
        y = ad.scale(x, 3.0)
        s = ad.sum_all(y)
        s.backward()
        s.backward()
        assert np.array_equal(x.grad, [6.0])

    def test_non_scalar_root_raises(self):
        with pytest.raises(ValueError):
            ad.backward(tensor([1.0, 2.0], requires_grad=True))

    def test_composite_mlp_gradcheck(self):
        rng = np.random.default_rng(23)
        x = tensor(rng.normal(size=(6, 4)))
        W1 = tensor(rng.normal(size=(4, 8)) * 0.5, requires_grad=True)
        b1 = tensor(rng.normal(size=8) * 0.1, requires_grad=True)
        a1 = tensor(np.full(8, 0.25), requires_grad=True)
        W2 = tensor(rng.normal(size=(8, 3)) * 0.5, requires_grad=True)
        b2 = tensor(np.zeros(3), requires_grad=True)
        labels = np.array([0, 1, 2, 0, 1, 2])

        def build():
            h = ad.prelu(ad.linear(x, W1, b1), a1)
            return ad.softmax_cross_entropy(ad.linear(h, W2, b2), labels)

        check_gradients(build, [W1, b1, a1, W2, b2], h=1e-5, tol=1e-4)


class TestAuxiliaryOps:
    def test_add_and_scale_values(self):
        a, b = tensor([1.0, 2.0]), tensor([0.5, -1.0])
        assert np.array_equal(ad.add(a, b).data, [1.5, 1.0])
        assert np.array_equal(ad.scale(a, -2.0).data, [-2.0, -4.0])

    def test_reshape_roundtrip_grad(self):
        x = tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ad.sum_all(ad.reshape(x, (3, 2))).backward()
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_recenter_groups(self):
        groups = np.arange(12.0).reshape(1, 2, 2, 3)
        q = tensor(np.ones((1, 2, 3)), requires_grad=True)
        y = ad.recenter_groups(groups, q)
        assert np.array_equal(y.data, groups - 1.0)
        ad.sum_all(y).backward()
        assert np.array_equal(q.grad, np.full((1, 2, 3), -2.0))

    def test_repeat_axis(self):
        x = tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        y = ad.repeat_axis(x, 1, 3)
        assert y.data.shape == (1, 3, 2)
        ad.sum_all(y).backward()
        assert np.array_equal(x.grad, [[3.0, 3.0]])

    def test_interpolate_weighted_forward(self):
        feats = tensor(np.array([[[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]]))
        idx = np.array([[[0, 1, 2]]])
        w = np.array([[[0.5, 0.25, 0.25]]])
        y = ad.interpolate_weighted(feats, idx, w)
        assert np.allclose(y.data, [[[1.75, 17.5]]])

    def test_interpolate_weighted_gradcheck(self):
        rng = np.random.default_rng(29)
        feats = tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
        idx = rng.integers(0, 5, size=(2, 4, 3))
        w = rng.random((2, 4, 3))
        check_gradients(lambda: ad.sum_all(ad.interpolate_weighted(feats, idx, w)),
                        [feats], tol=1e-6)

    def test_dropout_eval_identity_and_train_mask(self):
        x = tensor(np.ones((4, 4)), requires_grad=True)
        assert ad.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
        y = ad.dropout(x, 0.5, np.random.default_rng(0), training=True)
        kept = y.data != 0
        assert np.allclose(y.data[kept], 2.0)  # inverted scaling
        ad.sum_all(y).backward()
        assert np.array_equal(x.grad != 0, kept)

    def test_dropout_gradcheck_fixed_mask(self):
        x = tensor(np.random.default_rng(31).normal(size=(3, 3)), requires_grad=True)
        check_gradients(lambda: ad.sum_all(ad.dropout(x, 0.4, np.random.default_rng(42),
                                                      training=True)),
                        [x], tol=1e-6)


class TestGradientProperty:
    """Every differentiable op matches finite differences over many seeds."""

    @pytest.mark.parametrize("op_name", sorted(OP_BUILDERS))
    def test_op_matches_finite_differences(self, op_name):
        for seed in range(20):
            run_op_check(op_name, seed, h=1e-5, tol=1e-4)
