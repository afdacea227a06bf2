import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdlas import tensor as T
from mdlas.errors import ContractError, NonFiniteError, PrecisionError, ShapeError
from mdlas.tensor import Tensor


class TestMatmul:
    def test_identity(self):
        a = T.matmul(np.eye(2), [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(a.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_hand_product(self):
        out = T.matmul([[1.0, 2.0]], [[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_dimension_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            T.matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_adjoints(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        b = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        loss = T.tsum(T.matmul(a, b))
        loss.backward()
        g = np.ones((2, 4))
        np.testing.assert_allclose(a.grad, g @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ g)

    def test_matvec_and_vecmat(self):
        m = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        v = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        out = T.matmul(m, v)
        assert out.data.shape == (2,)
        T.tsum(out).backward()
        np.testing.assert_allclose(v.grad, m.data.sum(axis=0))
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        out2 = T.matmul(w, m)
        assert out2.data.shape == (3,)

    def test_associativity_on_random_f64(self, rng):
        for _ in range(10):
            a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
            left = T.matmul(T.matmul(a, b), c).data
            right = T.matmul(a, T.matmul(b, c)).data
            np.testing.assert_allclose(left, right, atol=1e-10)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        np.testing.assert_array_equal(T.sigmoid(np.zeros(2)).data, [0.5, 0.5])

    def test_tanh_at_zero(self):
        np.testing.assert_array_equal(T.tanh(np.zeros(1)).data, [0.0])

    def test_concat_last_axis(self):
        out = T.concat([Tensor([1.0, 2.0]), Tensor([3.0])])
        np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])

    def test_concat_2d(self):
        out = T.concat([Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 3)))])
        assert out.data.shape == (2, 5)

    def test_concat_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))])

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones(2)), Tensor(np.ones(3)))

    def test_scalar_times_tensor(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        s = Tensor(np.asarray(3.0), requires_grad=True)
        out = T.mul(a, s)
        np.testing.assert_array_equal(out.data, 3 * np.ones((2, 2)))
        T.tsum(out).backward()
        np.testing.assert_array_equal(a.grad, 3 * np.ones((2, 2)))
        assert float(s.grad) == 4.0

    def test_concat_adjoints_split_correctly(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        out = T.concat([a, b])
        T.tsum(T.mul(out, Tensor([1.0, 2.0, 3.0]))).backward()
        np.testing.assert_array_equal(a.grad, [1.0, 2.0])
        np.testing.assert_array_equal(b.grad, [3.0])

    def test_mixed_dtype_rejected(self):
        with pytest.raises(PrecisionError):
            T.add(Tensor(np.ones(2, dtype=np.float32)), Tensor(np.ones(2)))


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_array_equal(T.softmax(np.zeros(2)).data, [0.5, 0.5])

    def test_closed_form(self):
        out = T.softmax(np.array([np.log(2.0), 0.0]))
        np.testing.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-15)

    def test_stability_no_overflow(self):
        out = T.softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-300)

    def test_rows_sum_to_one(self, rng):
        x = rng.normal(size=(5, 7)) * 10
        s = T.softmax(x).data
        np.testing.assert_allclose(s.sum(axis=-1), np.ones(5), atol=1e-12)
        assert (s >= 0).all()

    def test_nonfinite_input_detected(self):
        with pytest.raises(NonFiniteError):
            T.softmax(np.array([np.nan, 0.0]))

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=6), requires_grad=True)
        w = Tensor(rng.normal(size=6))
        err = T.grad_check(lambda: T.tsum(T.mul(T.softmax(x), w)), [x])
        assert err < 1e-6


class TestCrossEntropy:
    def test_certain_prediction_zero_loss(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 1000.0
        loss = T.cross_entropy(Tensor(logits), [2])
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_log_v(self):
        loss = T.cross_entropy(Tensor(np.zeros((3, 75))), [0, 1, 2])
        assert float(loss.data) == pytest.approx(math.log(75), rel=1e-12)

    def test_all_masked_is_zero_with_zero_grad(self):
        logits = Tensor(np.random.default_rng(0).normal(size=(3, 5)), requires_grad=True)
        loss = T.cross_entropy(logits, [0, 1, 2], mask=[False, False, False])
        assert float(loss.data) == 0.0
        loss.backward()
        np.testing.assert_array_equal(logits.grad, np.zeros((3, 5)))

    def test_mask_restricts_gradient_and_value(self, rng):
        raw = rng.normal(size=(4, 5))
        logits = Tensor(raw.copy(), requires_grad=True)
        loss = T.cross_entropy(logits, [0, 1, 2, 3], mask=[True, True, False, False])
        ref = T.cross_entropy(Tensor(raw[:2]), [0, 1])
        assert float(loss.data) == pytest.approx(float(ref.data), rel=1e-14)
        loss.backward()
        np.testing.assert_array_equal(logits.grad[2:], np.zeros((2, 5)))
        assert np.abs(logits.grad[:2]).max() > 0

    def test_target_out_of_vocab(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor(np.zeros((1, 4))), [4])

    def test_gradient(self, rng):
        logits = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        err = T.grad_check(
            lambda: T.cross_entropy(logits, [1, 5, 0, 3], mask=[True, True, True, False]),
            [logits],
        )
        assert err < 1e-7


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(T.mul(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_detached_tensor_gets_no_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        d = Tensor([5.0, 6.0])  # constant
        T.tsum(T.mul(x, d)).backward()
        assert d.grad is None
        np.testing.assert_array_equal(x.grad, [5.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(T.mul(x, x))

    def test_loss_without_graph_rejected(self):
        with pytest.raises(ContractError):
            T.backward(Tensor(np.asarray(1.0)))

    def test_linearity_of_adjoints(self, rng):
        base = rng.normal(size=4)
        x = Tensor(base.copy(), requires_grad=True)
        both = T.add(T.tsum(T.mul(x, x)), T.tsum(T.sigmoid(x)))
        both.backward()
        combined = x.grad.copy()

        x1 = Tensor(base.copy(), requires_grad=True)
        T.tsum(T.mul(x1, x1)).backward()
        x2 = Tensor(base.copy(), requires_grad=True)
        T.tsum(T.sigmoid(x2)).backward()
        np.testing.assert_allclose(combined, x1.grad + x2.grad, rtol=1e-14)

    def test_reused_tensor_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = T.add(T.mul(x, x), T.mul(x, x))
        T.tsum(y).backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_graph_topological_order(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = T.mul(x, x)
        z = T.tsum(T.add(y, y))
        graph = T.ComputeGraph.from_output(z)
        seen = set()
        for node in graph.nodes:
            for t in node.inputs:
                if t.node is not None and t.requires_grad:
                    assert id(t.node) in seen
            seen.add(id(node))

    def test_no_grad_mode_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = T.mul(x, x)
        assert y.node is None and not y.requires_grad

    def test_add_n_is_order_independent(self, rng):
        vals = [Tensor(np.asarray(v), requires_grad=True) for v in rng.normal(size=9)]
        a = float(T.add_n(vals).data)
        b = float(T.add_n(list(reversed(vals))).data)
        assert a == b
        T.add_n(vals).backward()
        assert all(float(v.grad) == 1.0 for v in vals)


class TestGradCheck:
    def test_linear_function_is_exact(self, rng):
        x = Tensor(rng.normal(size=5), requires_grad=True)
        err = T.grad_check(lambda: T.tsum(x), [x])
        assert err < 1e-10

    def test_float32_rejected(self):
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(PrecisionError):
            T.grad_check(lambda: T.tsum(x), [x])

    def test_one_layer_model_cross_entropy(self, rng):
        w = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        b = Tensor(np.zeros(5), requires_grad=True)
        inp = Tensor(rng.normal(size=3))

        def f():
            logits = T.reshape(T.add(T.matmul(w, inp), b), (1, 5))
            return T.cross_entropy(logits, [2])

        assert T.grad_check(f, [w, b]) < 1e-6

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_composites_pass(self, seed):
        rng = np.random.default_rng(seed)
        w1 = Tensor(rng.normal(size=(4, 3)) * 0.7, requires_grad=True)
        w2 = Tensor(rng.normal(size=(2, 4)) * 0.7, requires_grad=True)
        x = Tensor(rng.normal(size=3))

        def f():
            h = T.tanh(T.matmul(w1, x))
            z = T.sigmoid(T.matmul(w2, h))
            probs = T.softmax(T.concat([z, T.mul(z, z)]))
            return T.cross_entropy(T.reshape(probs, (1, 4)), [1])

        assert T.grad_check(f, [w1, w2]) < 1e-4


class TestPrecision:
    def test_modes(self):
        assert T.Precision("float64").dtype == np.float64
        assert T.Precision("float32").dtype == np.float32
        with pytest.raises(ValueError):
            T.Precision("float16")

    def test_assert_finite(self):
        Tensor([1.0]).assert_finite()
        with pytest.raises(NonFiniteError):
            Tensor([np.inf]).assert_finite()
