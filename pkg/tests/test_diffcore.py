import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from gres3d import diffcore as dc
from gres3d.diffcore import ComputationError, Tensor
from oracles import naive_matmul, softmax_loop

finite = st.floats(-20, 20, allow_nan=False)


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def test_matmul_identity_and_scalar():
    a = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal(dc.matmul(np.eye(3), a).data, a)
    assert dc.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]


def test_matmul_naive_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(dc.matmul(a, b).data, naive_matmul(a, b), atol=1e-12)


def test_matmul_shape_error():
    with pytest.raises(ValueError):
        dc.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_adjoint_identity():
    rng = np.random.default_rng(2)
    A, B, dC = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2))), rng.normal(size=(3, 2))
    out = dc.sum(dc.mul(dc.matmul(A, B), dC))
    out.backward()
    # <dC, A B> = <A^T dC, B> = <dC B^T, A>
    lhs = np.sum(dC * (A.data @ B.data))
    assert abs(lhs - np.sum(B.grad * B.data)) < 1e-10
    assert abs(lhs - np.sum(A.grad * A.data)) < 1e-10


def test_softmax_constant_row_uniform():
    out = dc.softmax_rows(np.full((2, 5), 3.3)).data
    np.testing.assert_allclose(out, 0.2, atol=1e-15)


@given(hnp.arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 7)), elements=finite), finite)
def test_softmax_rows_sum_and_shift(x, c):
    out = dc.softmax_rows(x).data
    assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-12)
    np.testing.assert_allclose(dc.softmax_rows(x + c).data, out, atol=1e-12)
    np.testing.assert_allclose(out, softmax_loop(x), atol=1e-12)


def test_softmax_large_logits_stable():
    out = dc.softmax_rows([[1000.0, 0.0]]).data
    assert np.all(np.isfinite(out)) and out[0, 0] == 1.0


def test_softmax_nan_raises():
    with pytest.raises(ComputationError):
        dc.softmax_rows([[0.0, np.nan]])


def test_softmax_jvp_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = leaf(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        dc.sum(dc.mul(dc.softmax_rows(x), w)).backward()
        v = rng.normal(size=(3, 4))
        h = 1e-6
        f = lambda z: np.sum(softmax_loop(z) * w)
        fd = (f(x.data + h * v) - f(x.data - h * v)) / (2 * h)
        assert abs(np.sum(x.grad * v) - fd) < 1e-6


def test_mlp_zero_and_identity():
    x = np.abs(np.random.default_rng(4).normal(size=(5, 3)))
    zero = [(np.zeros((3, 3)), np.zeros(3))] * 2
    assert not dc.mlp_forward(x, zero).data.any()
    ident = [(np.eye(3), np.zeros(3))] * 2
    np.testing.assert_array_equal(dc.mlp_forward(x, ident).data, x)


def test_mlp_straight_line_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 3))
    w1, b1, w2, b2 = rng.normal(size=(3, 8)), rng.normal(size=8), rng.normal(size=(8, 2)), rng.normal(size=2)
    want = naive_matmul(np.maximum(naive_matmul(x, w1) + b1, 0), w2) + b2
    np.testing.assert_allclose(dc.mlp_forward(x, [(w1, b1), (w2, b2)]).data, want, atol=1e-12)


def test_mlp_shape_error():
    with pytest.raises(ValueError):
        dc.mlp_forward(np.ones((2, 3)), [(np.ones((4, 2)), np.zeros(2))])


def test_grad_check_quadratic():
    x = leaf(np.random.default_rng(6).normal(size=(4, 3)))
    f = lambda: dc.sum(dc.mul(x, x))
    assert dc.grad_check(f, [x]) < 1e-8
    f().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_bce_gradient_at_zero():
    z = leaf([0.0])
    dc.sum(dc.bce_with_logits(z, np.array([1.0]))).backward()
    assert z.grad[0] == pytest.approx(-0.5, abs=1e-15)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_non_finite_raises():
    x = leaf([-1.0])
    with pytest.raises(ComputationError):
        dc.grad_check(lambda: dc.sum(dc.log(x)), [x])


def test_every_op_gradient():
    rng = np.random.default_rng(7)
    a = leaf(rng.normal(size=(3, 4)))
    b = leaf(rng.uniform(0.5, 2.0, size=(3, 4)))
    ids = np.array([0, 1, 1, 2, 0, 2])
    c = leaf(rng.normal(size=(6, 2)))

    def f():
        h = dc.add(dc.mul(a, b), dc.div(a, b))
        h = dc.sub(dc.sigmoid(h), dc.exp(dc.mul(a, 0.1)))
        h = dc.add(h, dc.log(b))
        h = dc.log_softmax(dc.reshape(h, (4, 3)), axis=0)
        s = dc.mean(dc.take_rows(dc.softmax_rows(dc.transpose(h)), [2, 0]), axis=1)
        g = dc.segment_mean(dc.relu(c), ids, 3)
        t = dc.take(dc.bce_with_logits(c, (c.data > 0).astype(float) * 0.7), (np.array([1, 4]), np.array([0, 1])))
        return dc.add(dc.add(dc.sum(s), dc.sum(g)), dc.mean(t))

    assert dc.grad_check(f, [a, b, c]) < 1e-6


def test_repeated_backward_bit_identical():
    rng = np.random.default_rng(8)
    a = leaf(rng.normal(size=(4, 4)))
    root = dc.sum(dc.softmax_rows(dc.matmul(a, a)))
    tape = root.backward()
    g1 = a.grad.copy()
    tape.backward()
    assert np.array_equal(g1, a.grad)


def test_shared_subexpression_accumulates():
    x = leaf([2.0])
    y = dc.mul(x, x)
    dc.sum(dc.add(y, y)).backward()
    assert x.grad[0] == 8.0


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        leaf([1.0, 2.0]).backward()
