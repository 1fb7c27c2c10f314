import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import seqdg.tensor as T
from seqdg.tensor import (
    GradCheckReport,
    NonDeterministicError,
    NonFiniteError,
    ShapeError,
    Tensor,
    grad_check,
)

# frozen with a 50-digit arbitrary-precision evaluation
SOFTMAX_123 = [0.09003057317038045800, 0.24472847105479765247, 0.66524095577482188953]
CE_210_CLASS1 = 1.4076059644443803045
LN2 = 0.69314718055994530942


def rand(shape, seed, scale=1.0, requires_grad=True):
    rng = np.random.default_rng(seed)
    return Tensor(scale * rng.standard_normal(shape), requires_grad=requires_grad)


class TestTensorBasics:
    def test_rejects_nan_and_inf(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_rejects_zero_size(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_scalar_shape_allowed(self):
        t = Tensor(3.5)
        assert t.shape == ()
        assert t.item() == 3.5

    def test_detach_shares_values_and_drops_grad(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        d = x.detach()
        assert not d.requires_grad
        assert np.array_equal(d.data, x.data)

    def test_op_surfaces_nonfinite(self):
        big = Tensor([[1e200]], requires_grad=True)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            T.mul(big, big)


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.matmul(a, b).data, b.data)

    def test_by_hand_1x2_2x1(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(rand((2, 3), 0), rand((2, 3), 1))

    def test_gradients_match_finite_differences(self):
        a = rand((3, 4), 7)
        b = rand((4, 2), 8)
        report = grad_check(lambda: T.sum_all(T.mul(y := T.matmul(a, b), y)),
                            {"a": a, "b": b}, h=1e-5, tol=1e-6)
        assert report.passed, report.summary()

    def test_batched_matmul_grad(self):
        a = rand((2, 3, 4), 11)
        w = rand((4, 5), 12)
        report = grad_check(lambda: T.sum_all(T.mul(y := T.matmul(a, w), y)),
                            {"a": a, "w": w}, tol=1e-6)
        assert report.passed, report.summary()


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax_rows(Tensor([[0.0, 0.0]]))
        assert out.data.tolist() == [[0.5, 0.5]]

    def test_large_inputs_do_not_overflow(self):
        out = T.softmax_rows(Tensor([[1000.0, 1000.0, 1000.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3] * 3], rtol=0, atol=1e-15)

    def test_against_high_precision_oracle(self):
        out = T.softmax_rows(Tensor([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(out.data[0], SOFTMAX_123, rtol=0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
                    min_size=1, max_size=8))
    def test_rows_sum_to_one(self, row):
        out = T.softmax_rows(Tensor([row]))
        assert abs(out.data.sum() - 1.0) < 1e-9
        assert (out.data >= 0).all()


class TestLayerNorm:
    def gb(self, d, gain=1.0, bias=0.0):
        return (Tensor(np.full(d, gain), requires_grad=True),
                Tensor(np.full(d, bias), requires_grad=True))

    def test_constant_row_maps_to_zero(self):
        g, b = self.gb(6)
        out = T.layer_norm(Tensor([[3.7] * 6]), g, b, eps=1e-5)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_standardization(self):
        g, b = self.gb(2)
        out = T.layer_norm(Tensor([[1.0, 3.0]]), g, b, eps=1e-30)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)

    def test_pre_affine_moments(self):
        x = rand((2, 8), 3, requires_grad=False)
        g, b = self.gb(8)
        out = T.layer_norm(x, g, b, eps=1e-12).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-10
        assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-6


class TestLosses:
    def test_mse_identical_inputs(self):
        x = rand((3, 4), 5)
        assert T.mse(x, x.detach()).item() == 0.0

    def test_cross_entropy_uniform_logits(self):
        out = T.cross_entropy(Tensor([0.0, 0.0], requires_grad=True), np.int64(0))
        assert abs(out.item() - LN2) < 1e-12

    def test_cross_entropy_against_oracle(self):
        out = T.cross_entropy(Tensor([2.0, 1.0, 0.0], requires_grad=True), np.int64(1))
        assert abs(out.item() - CE_210_CLASS1) < 1e-12

    def test_cross_entropy_index_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor([0.0, 0.0]), np.int64(2))

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.mse(rand((2, 3), 0), rand((3, 2), 1))

    def test_batched_cross_entropy_matches_loop(self):
        logits = rand((4, 6), 9)
        targets = np.array([1, 0, 5, 3])
        batched = T.cross_entropy(logits, targets).item()
        single = np.mean([
            T.cross_entropy(Tensor(logits.data[i]), np.int64(targets[i])).item()
            for i in range(4)
        ])
        assert abs(batched - single) < 1e-12


OPS = {
    "add": lambda p: T.add(p["a"], p["b"]),
    "add_trailing_bias": lambda p: T.add(p["a3"], p["bias"]),
    "sub": lambda p: T.sub(p["a"], p["b"]),
    "mul": lambda p: T.mul(p["a"], p["b"]),
    "scale": lambda p: T.scale(p["a"], -1.7),
    "relu": lambda p: T.relu(p["a"]),
    "matmul": lambda p: T.matmul(p["a"], p["w"]),
    "matmul_batched": lambda p: T.matmul(p["a3"], p["w"]),
    "transpose_last": lambda p: T.transpose_last(p["a"]),
    "permute": lambda p: T.permute(p["a3"], (2, 0, 1)),
    "reshape": lambda p: T.reshape(p["a"], (4, 3)),
    "concat": lambda p: T.concat([p["a"], p["b"]], axis=-2),
    "concat_last": lambda p: T.concat([p["a"], p["b"]], axis=-1),
    "narrow": lambda p: T.narrow(p["a"], -2, 1, 2),
    "take_rows": lambda p: T.take_rows(p["a"], [0, 2, 2, 1]),
    "zero_rows": lambda p: T.zero_rows(p["a"], 1),
    "expand_leading": lambda p: T.expand_leading(p["a"], (3,)),
    "softmax_rows": lambda p: T.softmax_rows(p["a"]),
    "layer_norm": lambda p: T.layer_norm(p["a"], p["gain"], p["bias_d"], eps=1e-5),
    # target is a fresh constant: perturbing a checked param must not move it
    "mse": lambda p: T.mse(p["a"], Tensor(np.linspace(-1.0, 1.0, 12).reshape(3, 4))),
    "cross_entropy": lambda p: T.cross_entropy(p["a"], np.array([0, 3, 1])),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(10))
def test_every_op_passes_gradcheck(name, seed):
    rng = np.random.default_rng(1000 + seed)
    params = {
        "a": Tensor(rng.standard_normal((3, 4)), requires_grad=True),
        "b": Tensor(rng.standard_normal((3, 4)), requires_grad=True),
        "w": Tensor(rng.standard_normal((4, 5)), requires_grad=True),
        "a3": Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True),
        "bias": Tensor(rng.standard_normal(4), requires_grad=True),
        "gain": Tensor(1.0 + 0.1 * rng.standard_normal(4), requires_grad=True),
        "bias_d": Tensor(rng.standard_normal(4), requires_grad=True),
    }
    op = OPS[name]

    def f():
        out = op(params)
        if out.ndim > 0:
            # square so the pooled scalar depends nonlinearly on every entry
            out = T.sum_all(T.mul(out, out))
        return out

    used = {k: v for k, v in params.items()}
    report = grad_check(f, used, h=1e-5, tol=1e-6)
    assert report.passed, f"{name}: {report.summary()}"


class TestGraphProperties:
    def build_loss(self, x, w):
        h = T.relu(T.matmul(x, w))
        return T.mse(h, Tensor(np.ones(h.shape)))

    def test_backward_leaves_values_bitwise_unchanged(self):
        x = rand((3, 4), 21, requires_grad=False)
        w = rand((4, 2), 22)
        before = x.data.tobytes()
        self.build_loss(x, w).backward()
        assert x.data.tobytes() == before
        assert x.grad is None

    def test_backward_is_bitwise_deterministic(self):
        grads = []
        for _ in range(2):
            x = rand((3, 4), 31, requires_grad=False)
            w = rand((4, 2), 32)
            self.build_loss(x, w).backward()
            grads.append(w.grad.tobytes())
        assert grads[0] == grads[1]

    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = T.sum_all(T.mul(x, x))
        y.backward()
        assert x.grad.tolist() == [4.0]

    def test_no_grad_blocks_graph(self):
        w = rand((2, 2), 41)
        with T.no_grad():
            out = T.matmul(w, w)
        assert not out.requires_grad
        assert out._parents == ()

    def test_backward_requires_scalar(self):
        with pytest.raises(ShapeError):
            rand((2, 2), 51).backward()


class TestGradCheck:
    def test_quadratic(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)

        def f():
            return T.sum_all(T.mul(theta, theta))

        report = grad_check(f, {"theta": theta}, h=1e-5, tol=1e-8)
        assert report.passed
        # analytic gradient of sum(x^2) is 2x
        f().backward()
        assert np.allclose(theta.grad, [2.0, 4.0])

    def test_corrupted_backward_is_flagged(self):
        theta = Tensor([0.5, -1.3], requires_grad=True)

        def bad_square(x):
            out = x.data * x.data

            def backward(dout):
                T._acc(x, dout * 3.0 * x.data)  # wrong: should be 2x

            return T._node(out, (x,), "bad_square", backward)

        def f():
            return T.sum_all(bad_square(theta))

        report = grad_check(f, {"theta": theta}, h=1e-5, tol=1e-6)
        assert not report.passed
        assert report.worst_param == "theta"
        assert report.failures()[0].failing

    def test_nondeterministic_function_hard_errors(self):
        state = {"n": 0}

        def f():
            state["n"] += 1
            return T.sum_all(Tensor([float(state["n"])]))

        with pytest.raises(NonDeterministicError):
            grad_check(f, {}, h=1e-5)

    def test_report_summary_mentions_tolerance(self):
        theta = Tensor([1.0], requires_grad=True)
        report = grad_check(lambda: T.sum_all(T.mul(theta, theta)), {"theta": theta})
        assert isinstance(report, GradCheckReport)
        assert "tol" in report.summary()
