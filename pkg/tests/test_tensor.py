import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icmoe.errors import ContractError, DimensionError
from icmoe.tensor import (Tensor, Tape, absolute, backward, elementwise, grad_check, l2_normalize,
                          linear, load_icmt, matmul, no_grad, reduce, relu, reshape, save_icmt,
                          sigmoid, softplus, transpose)


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_scalar_case(self):
        assert matmul(Tensor([[2]]), Tensor([[3]])).data.tolist() == [[6]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, triple_loop(a, b), atol=1e-14)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_rules(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        dc = rng.normal(size=(3, 2))
        backward(reduce("sum", matmul(a, b) * Tensor(dc)))
        np.testing.assert_allclose(a.grad, dc @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ dc)


class TestElementwise:
    def test_relu_sign_cases(self):
        assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]

    def test_sigmoid_symmetry_point(self):
        assert sigmoid(Tensor([0.0])).data.tolist() == [0.5]

    def test_sigmoid_extremes_are_finite(self):
        s = sigmoid(Tensor([-1000.0, 1000.0])).data
        assert s.tolist() == [0.0, 1.0]

    def test_abs_gradient_is_sign(self):
        rng = np.random.default_rng(3)
        x0 = rng.uniform(0.1, 2.0, size=10) * rng.choice([-1, 1], size=10)
        x = Tensor(x0, requires_grad=True)
        backward(reduce("sum", absolute(x)))
        fd = central_diff(lambda v: np.abs(v).sum(), x0)
        np.testing.assert_allclose(x.grad, fd, atol=1e-8)
        np.testing.assert_array_equal(x.grad, np.sign(x0))

    def test_dispatch(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        assert elementwise("add", a, b).data.tolist() == [4, 7]
        assert elementwise("sub", a, b).data.tolist() == [-2, -3]
        assert elementwise("mul", a, b).data.tolist() == [3, 10]
        assert elementwise("abs", Tensor([-2.0])).data.tolist() == [2]
        with pytest.raises(ContractError):
            elementwise("tanh", a)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))

    def test_scalar_broadcast_only(self):
        out = Tensor(np.ones((2, 2))) * 3.0
        assert out.data.tolist() == [[3, 3], [3, 3]]
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 2))) + Tensor(np.ones(2))

    def test_scalar_operand_gradient_sums(self):
        s = Tensor(2.0, requires_grad=True)
        x = Tensor(np.arange(4.0), requires_grad=True)
        backward(reduce("sum", x * s))
        assert s.grad == pytest.approx(6.0)
        np.testing.assert_array_equal(x.grad, np.full(4, 2.0))

    def test_softplus_stable(self):
        v = softplus(Tensor([-800.0, 0.0, 800.0])).data
        np.testing.assert_allclose(v, [0.0, np.log(2.0), 800.0])


class TestReduce:
    def test_mean_all(self):
        assert reduce("mean", Tensor([[1, 3], [5, 7]])).item() == 4

    def test_sum_of_zeros(self):
        assert reduce("sum", Tensor(np.zeros((3, 2)))).item() == 0

    @pytest.mark.parametrize("axes", [0, 1, 2, (0, 2), (1, 2), None, -1])
    @pytest.mark.parametrize("op", ["sum", "mean"])
    def test_against_naive_loop(self, op, axes):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 4))
        got = reduce(op, Tensor(x), axes).data
        ax = tuple(range(3)) if axes is None else ((axes,) if isinstance(axes, int) else axes)
        ax = tuple(a % 3 for a in ax)
        keep = [d for d in range(3) if d not in ax]
        out = np.zeros([x.shape[d] for d in keep])
        count = 0
        for idx in np.ndindex(x.shape):
            out[tuple(idx[d] for d in keep)] += x[idx]
        count = int(np.prod([x.shape[a] for a in ax]))
        if op == "mean":
            out = out / count
        np.testing.assert_allclose(got, out, atol=1e-12)

    def test_mean_gradient_distributes(self):
        x = Tensor(np.ones((2, 5)), requires_grad=True)
        backward(reduce("mean", x))
        np.testing.assert_array_equal(x.grad, np.full((2, 5), 0.1))

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            reduce("sum", Tensor(np.ones((2, 2))), 2)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])

    def test_zero_vector_guard(self):
        out = l2_normalize(Tensor(np.zeros(4))).data
        assert np.all(out == 0) and np.all(np.isfinite(out))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
    def test_positive_scale_invariance(self, seed, c):
        v = np.random.default_rng(seed).normal(size=(3, 5))
        np.testing.assert_allclose(l2_normalize(Tensor(c * v)).data, l2_normalize(Tensor(v)).data,
                                   rtol=1e-12, atol=1e-15)

    def test_unit_norm(self):
        v = np.random.default_rng(5).normal(size=(4, 6))
        out = l2_normalize(Tensor(v), axis=-1).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, rtol=1e-14)

    def test_gradient(self):
        v = np.random.default_rng(6).normal(size=(3, 4))
        w = np.random.default_rng(7).normal(size=(3, 4))
        assert grad_check(lambda x: reduce("sum", l2_normalize(x, axis=1) * Tensor(w)), v) < 1e-6


class TestBackward:
    def test_identity(self):
        x = Tensor(3.0, requires_grad=True)
        backward(x)
        assert x.grad == 1.0

    def test_sum_of_squares(self):
        x0 = np.array([1.0, -2.0, 0.5])
        x = Tensor(x0, requires_grad=True)
        backward(reduce("sum", x * x))
        np.testing.assert_array_equal(x.grad, 2 * x0)

    def test_non_scalar_root(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_fan_out_doubles(self):
        x0 = np.array([0.3, -1.2])
        single = Tensor(x0, requires_grad=True)
        backward(reduce("sum", sigmoid(single)))
        double = Tensor(x0, requires_grad=True)
        s = sigmoid(double)
        backward(reduce("sum", s) + reduce("sum", s))
        np.testing.assert_array_equal(double.grad, 2 * single.grad)

    def test_composite_graph_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=3)

        def f(x):
            h = linear(x, Tensor(w), Tensor(b))
            h = sigmoid(h) * relu(h + 0.1) + absolute(h)
            h = transpose(reshape(h, (2, 3, 3)), (0, 2, 1))
            return reduce("mean", l2_normalize(h, axis=-1) * h) / (reduce("sum", softplus(h)) + 1.0)

        for k in range(5):
            x0 = rng.normal(size=(2, 3, 4))
            pre = x0.reshape(-1, 4) @ w + b
            if np.min(np.abs(pre)) < 1e-3 or np.min(np.abs(pre + 0.1)) < 1e-3:
                continue
            assert grad_check(f, x0) < 1e-6

    def test_tape_is_topological_and_each_record_once(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x * x
        z = reduce("sum", y + y)
        tape = backward(z)
        ids = [id(r) for r in tape.records]
        assert len(ids) == len(set(ids))
        pos = {id(r): i for i, r in enumerate(tape.records)}
        for r in tape.records:
            for p in r._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(r)]
        assert isinstance(tape, Tape)

    def test_every_requires_grad_tensor_gets_grad(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        y = relu(x) * 2.0
        backward(reduce("sum", y))
        assert y.grad is not None and y.grad.shape == y.shape
        assert x.grad.shape == x.shape

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad and y._parents == ()

    def test_determinism(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=(20, 30)), rng.normal(size=(30, 10))
        r1 = reduce("sum", matmul(Tensor(a), Tensor(b))).data.tobytes()
        r2 = reduce("sum", matmul(Tensor(a), Tensor(b))).data.tobytes()
        assert r1 == r2


class TestGradCheck:
    def test_sum_is_exact(self):
        x = np.random.default_rng(10).normal(size=(3, 3))
        assert grad_check(lambda t: reduce("sum", t), x) < 1e-9

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "sigmoid", "softplus", "div"])
    def test_random_points(self, op):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(100):
            x0 = rng.normal(size=4)
            other = Tensor(rng.uniform(0.5, 2.0, size=4))
            if op in ("sigmoid", "softplus"):
                f = lambda x: reduce("sum", elementwise(op, x))
            elif op == "div":
                f = lambda x: reduce("sum", other / (x * x + 1.0))
            else:
                f = lambda x: reduce("sum", elementwise(op, x, other) * elementwise(op, x, other))
            worst = max(worst, grad_check(f, x0))
        assert worst < 1e-6

    def test_relu_abs_away_from_kinks(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            x0 = rng.uniform(0.05, 2.0, size=4) * rng.choice([-1, 1], size=4)
            assert grad_check(lambda x: reduce("sum", relu(x) * absolute(x)), x0) < 1e-6


class TestICMT:
    def test_roundtrip(self, tmp_path):
        a = np.random.default_rng(13).normal(size=(2, 3, 4))
        save_icmt(tmp_path / "a.icmt", a)
        np.testing.assert_array_equal(load_icmt(tmp_path / "a.icmt"), a)

    def test_layout(self, tmp_path):
        save_icmt(tmp_path / "b.icmt", np.array([[1.0, 2.0, 3.0]]))
        raw = (tmp_path / "b.icmt").read_bytes()
        assert raw[:4] == b"ICMT"
        assert raw[4:8] == (2).to_bytes(4, "little")
        assert raw[8:16] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert np.frombuffer(raw[16:], "<f8").tolist() == [1.0, 2.0, 3.0]

    def test_rejects_bad_magic(self, tmp_path):
        (tmp_path / "c.icmt").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ContractError):
            load_icmt(tmp_path / "c.icmt")
