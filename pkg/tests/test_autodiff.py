import numpy as np
import pytest
import scipy.sparse as sp

from fedsemrec.autodiff import (Tensor, concat, finite_difference_check,
                                row_norms, softmax, spmm)


def rand(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def test_arithmetic_gradients():
    a = Tensor(rand((3, 4), 1), requires_grad=True)
    b = Tensor(rand((3, 4), 2), requires_grad=True)

    def f():
        return ((a * b + a / (b * b + 1.0) - b) ** 2).sum()
    finite_difference_check(f, [a, b])


def test_matmul_relu_log_exp_gradients():
    a = Tensor(rand((3, 4), 3), requires_grad=True)
    w = Tensor(rand((4, 2), 4), requires_grad=True)

    def f():
        h = (a @ w).relu() + 0.1
        return (h.log() + h.exp()).sum()
    finite_difference_check(f, [a, w])


def test_broadcast_gradients():
    a = Tensor(rand((5, 3), 5), requires_grad=True)
    bias = Tensor(rand((3,), 6), requires_grad=True)
    col = Tensor(rand((5, 1), 7), requires_grad=True)

    def f():
        return ((a + bias) * col).mean()
    finite_difference_check(f, [a, bias, col])


def test_gather_scatter_gradients():
    table = Tensor(rand((6, 3), 8), requires_grad=True)

    def f():
        rows = table.gather_rows([0, 2, 2, 5])
        return (rows * rows).sum()
    finite_difference_check(f, [table])


def test_concat_and_transpose_gradients():
    a = Tensor(rand((2, 3), 9), requires_grad=True)
    b = Tensor(rand((4, 3), 10), requires_grad=True)

    def f():
        z = concat([a, b], axis=0)
        return (z @ z.T).sum()
    finite_difference_check(f, [a, b])


def test_spmm_gradient():
    m = sp.random(5, 5, density=0.5, random_state=0, format="csr")
    x = Tensor(rand((5, 3), 11), requires_grad=True)

    def f():
        return (spmm(m, x) ** 2).sum()
    finite_difference_check(f, [x])


def test_log_sigmoid_stable_and_correct():
    x = Tensor(np.array([-50.0, -1.0, 0.0, 1.0, 50.0]))
    out = x.log_sigmoid().data
    assert np.isfinite(out).all()
    assert out[2] == pytest.approx(np.log(0.5))
    assert out[4] == pytest.approx(0.0, abs=1e-15)
    assert out[0] == pytest.approx(-50.0, rel=1e-6)

    y = Tensor(rand((4,), 12), requires_grad=True)
    finite_difference_check(lambda: y.log_sigmoid().sum(), [y])


def test_clip_gradient_masks_outside_range():
    x = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
    loss = x.clip(-1.0, 1.0).sum()
    loss.backward()
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])


def test_softmax_rows_sum_to_one():
    x = Tensor(rand((4, 6), 13))
    s = softmax(x, axis=1).data
    assert np.allclose(s.sum(axis=1), 1.0)
    assert (s > 0).all()


def test_softmax_spot_value():
    s = softmax(Tensor(np.array([[1.0, 0.0, 0.0]])), axis=1).data[0]
    assert s[0] == pytest.approx(np.e / (np.e + 2.0), abs=1e-12)
    assert s[0] == pytest.approx(0.576117, abs=1e-5)


def test_row_norms_guards_zero_rows():
    x = Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]))
    n = row_norms(x).data
    assert n[1, 0] == pytest.approx(5.0)
    assert n[0, 0] > 0


def test_backward_requires_scalar():
    x = Tensor(rand((2, 2), 14), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()
