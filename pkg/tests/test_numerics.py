import math

import numpy as np
import pytest

from fuserec import numerics as nm
from fuserec.numerics import ContractError, NumericError, ShapeError, Tensor


def fd(f, x, eps=1e-5):
    return nm.finite_diff_check(f, x, eps=eps)


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(nm.matmul(a, b).data, b.data)

    def test_hand_product(self):
        out = nm.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        # hand multiplication: [1*5+2*6, 3*5+4*6]
        assert np.array_equal(out.data, [[17.0], [39.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            nm.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(4, 2)))
        assert fd(lambda t: nm.tsum(nm.matmul(t, b)), a) < 1e-6
        assert fd(lambda t: nm.tsum(nm.matmul(a, t)), b) < 1e-6

    def test_associative_on_random_chains(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b, c = (Tensor(rng.normal(size=(4, 4))) for _ in range(3))
            left = nm.matmul(nm.matmul(a, b), c).data
            right = nm.matmul(a, nm.matmul(b, c)).data
            assert np.abs(left - right).max() < 1e-9


class TestSoftmax:
    def test_uniform_logits(self):
        out = nm.softmax(Tensor([[0.0, 0.0, 0.0]]), axis=1)
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 5))
        for c in (1.7, -42.0, 1000.0):
            base = nm.softmax(Tensor(x), axis=1).data
            shifted = nm.softmax(Tensor(x + c), axis=1).data
            assert np.abs(base - shifted).max() < 1e-12

    def test_closed_form_two_logits(self):
        # direct evaluation: e^10 / (e^10 + 1) and its complement
        expected = np.array([math.exp(10.0), 1.0]) / (math.exp(10.0) + 1.0)
        out = nm.softmax(Tensor([[10.0, 0.0]]), axis=1)
        assert np.allclose(out.data[0], expected, atol=1e-7)
        assert round(out.data[0, 0], 7) == 0.9999546
        assert round(out.data[0, 1], 7) == 0.0000454

    def test_rows_sum_to_one_entries_in_unit_interval(self):
        rng = np.random.default_rng(3)
        x = nm.softmax(Tensor(rng.normal(scale=5.0, size=(10, 7))), axis=1)
        assert np.abs(x.data.sum(axis=1) - 1.0).max() < 1e-12
        assert (x.data > 0).all() and (x.data < 1).all()

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericError):
            nm.softmax(Tensor([[np.inf, 0.0]]), axis=1)

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            nm.softmax(Tensor([[1.0]]), axis=2)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(2, 6)))
        w = Tensor(rng.normal(size=(6, 1)))
        assert fd(lambda t: nm.tsum(nm.matmul(nm.softmax(t, axis=1), w)), x) < 1e-4


class TestLayerNorm:
    def test_constant_row_gives_zero(self):
        x = Tensor([[3.0, 3.0, 3.0, 3.0]])
        out = nm.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert np.abs(out.data).max() < 1e-12

    def test_output_mean_equals_bias_mean_with_unit_gain(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(6, 8)))
        bias = Tensor(rng.normal(size=8))
        out = nm.layer_norm(x, Tensor(np.ones(8)), bias)
        assert np.abs(out.data.mean(axis=1) - bias.data.mean()).max() < 1e-9

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(3, 5)))
        gain = Tensor(rng.normal(size=5))
        bias = Tensor(rng.normal(size=5))
        probe = Tensor(rng.normal(size=(5, 1)))

        def scalar(y):
            return nm.tsum(nm.matmul(nm.layer_norm(y, gain, bias), probe))

        assert fd(scalar, x) < 1e-5
        assert fd(lambda g: nm.tsum(nm.matmul(nm.layer_norm(x, g, bias), probe)), gain) < 1e-5
        assert fd(lambda b: nm.tsum(nm.matmul(nm.layer_norm(x, gain, b), probe)), bias) < 1e-5


class TestCrossEntropy:
    def test_uniform_logits_give_log_vocab(self):
        logits = Tensor(np.zeros((1, 8)))
        loss = nm.cross_entropy(logits, [3], [True])
        assert abs(loss.item() - math.log(8.0)) < 1e-12

    def test_certain_prediction_gives_zero(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 1e6
        loss = nm.cross_entropy(Tensor(logits), [2], [True])
        assert loss.item() < 1e-9

    def test_masked_out_position_contributes_nothing(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(2, 6))
        both = nm.cross_entropy(Tensor(logits), [1, 4], [True, False]).item()
        single = nm.cross_entropy(Tensor(logits[:1]), [1], [True]).item()
        assert both == single

    def test_all_false_mask_rejected(self):
        with pytest.raises(ContractError):
            nm.cross_entropy(Tensor(np.zeros((2, 4))), [0, 1], [False, False])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            nm.cross_entropy(Tensor(np.zeros((2, 4))), [0], [True, True])

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        logits = Tensor(rng.normal(size=(3, 5)))
        assert fd(lambda t: nm.cross_entropy(t, [1, 0, 4], [True, False, True]), logits) < 1e-5


class TestBackward:
    def test_square_gradient(self):
        x = Tensor([[3.0]], requires_grad=True)
        with nm.Tape() as tape:
            y = nm.tsum(nm.mul(x, x))
            grads = nm.backward(y, tape)
        assert nm.grad_of(grads, x)[0, 0] == 6.0

    def test_no_entry_for_frozen_leaf(self):
        x = Tensor([[2.0]], requires_grad=True)
        w = Tensor([[5.0]], requires_grad=False)
        with nm.Tape() as tape:
            y = nm.tsum(nm.matmul(x, w))
            grads = nm.backward(y, tape)
        assert x.node_id in grads
        assert w.node_id not in grads

    def test_untouched_leaf_gets_zeros(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        unused = Tensor([[1.0], [1.0]], requires_grad=True)
        with nm.Tape() as tape:
            nm.matmul(x, unused)  # recorded but disconnected from the loss
            loss = nm.tsum(nm.mul(x, x))
            grads = nm.backward(loss, tape)
        assert np.array_equal(nm.grad_of(grads, unused), np.zeros((2, 1)))

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with nm.Tape() as tape:
            y = nm.mul(x, x)
            with pytest.raises(ContractError):
                nm.backward(y, tape)

    def test_backward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(9)
        a = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        with nm.Tape() as tape:
            loss = nm.tsum(nm.mul(nm.matmul(a, b), nm.matmul(a, b)))
            g1 = nm.backward(loss, tape)
            g2 = nm.backward(loss, tape)
        assert np.array_equal(nm.grad_of(g1, a), nm.grad_of(g2, a))
        assert np.array_equal(nm.grad_of(g1, b), nm.grad_of(g2, b))


class TestFiniteDiffCheck:
    def test_sum_of_squares_is_nearly_exact(self):
        x = Tensor([[1.0, -2.0, 3.0, 0.5]])
        assert fd(lambda t: nm.tsum(nm.mul(t, t)), x) < 1e-7

    def test_constant_softmax_function(self):
        # sum of a softmax row is constant; both gradients vanish on this fixture
        x = Tensor(np.zeros((1, 5)))
        err = fd(lambda t: nm.tsum(nm.softmax(t, axis=1)), x)
        assert err < 1e-6

    def test_eps_must_be_positive(self):
        with pytest.raises(ContractError):
            nm.finite_diff_check(lambda t: nm.tsum(t), Tensor([[1.0]]), eps=0.0)


class TestElementwiseOps:
    @pytest.mark.parametrize(
        "op",
        [nm.relu, nm.gelu, nm.sigmoid, nm.softplus],
        ids=["relu", "gelu", "sigmoid", "softplus"],
    )
    def test_grad_matches_finite_differences(self, op):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(3, 4)) + 0.1)  # keep relu off its kink
        assert fd(lambda t: nm.tsum(op(t)), x) < 1e-4

    def test_gather_and_row_set_grads(self):
        rng = np.random.default_rng(11)
        table = Tensor(rng.normal(size=(6, 3)))
        vec = Tensor(rng.normal(size=3))

        def through_rows(t):
            picked = nm.gather_rows(t, [0, 2, 2, 5])
            return nm.tsum(nm.mul(picked, picked))

        assert fd(through_rows, table) < 1e-5

        def through_vec(v):
            emb = nm.gather_rows(table, [1, 3, 4])
            return nm.tsum(nm.mul(nm.row_set(emb, 1, v), nm.row_set(emb, 1, v)))

        assert fd(through_vec, vec) < 1e-5

    def test_slice_concat_round_trip(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(4, 6)))
        parts = [nm.slice_cols(x, 0, 2), nm.slice_cols(x, 2, 6)]
        assert np.array_equal(nm.concat_cols(parts).data, x.data)

    def test_add_bias_broadcast_grad(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(5, 3)))
        b = Tensor(rng.normal(size=3))
        assert fd(lambda t: nm.tsum(nm.mul(nm.add(x, t), nm.add(x, t))), b) < 1e-5

    def test_f32_mode_supported(self):
        x = Tensor(np.ones((2, 2)), dtype=np.float32)
        y = nm.matmul(x, x)
        assert y.data.dtype == np.float32
        assert np.allclose(y.data, 2.0, atol=1e-3)


class TestTapeInvariants:
    def test_tensor_invariant_shape_matches_data(self):
        t = Tensor(np.zeros((3, 4)))
        assert int(np.prod(t.shape)) == t.data.size

    def test_nested_tapes_rejected(self):
        with nm.Tape():
            with pytest.raises(ContractError):
                with nm.Tape():
                    pass

    def test_backward_without_tape_rejected(self):
        with pytest.raises(ContractError):
            nm.backward(Tensor(1.0))
