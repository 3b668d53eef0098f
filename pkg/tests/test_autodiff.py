import numpy as np
import pytest

from ontraffic import autodiff as ad
from ontraffic.autodiff import (BackwardError, DomainError, ShapeMismatchError,
                                Tensor, gradient_check)


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = ad.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_softmax_constant_rows():
    out = ad.softmax(Tensor([7.3, 7.3, 7.3]), axis=0)
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_sums_to_one_and_in_range():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(scale=5, size=(6, 9)))
    out = ad.softmax(x, axis=1)
    assert np.all(out.data > 0) and np.all(out.data < 1)
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)


def test_square_sum_backward():
    x = Tensor([3.0], requires_grad=True)
    ad.sum_over_axis(ad.square(x)).backward()
    np.testing.assert_allclose(x.grad, [6.0])


def test_least_squares_gradient_closed_form():
    # oracle: d/dw mean((Xw - y)^2) = 2 X^T (Xw - y) / n
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(20, 4)), rng.normal(size=(20, 1))
    w0 = rng.normal(size=(4, 1))
    expected = 2.0 * X.T @ (X @ w0 - y) / 20

    w = Tensor(w0, requires_grad=True)
    ad.mean(ad.square(ad.matmul(Tensor(X), w) - Tensor(y))).backward()
    np.testing.assert_allclose(w.grad, expected, atol=1e-12)


def test_tanh_gradient_at_zero():
    x = Tensor(np.zeros(5), requires_grad=True)
    ad.sum_over_axis(ad.tanh(x)).backward()
    np.testing.assert_array_equal(x.grad, np.ones(5))


def test_backward_on_detached_output_is_noop():
    x = Tensor([2.0], requires_grad=True)
    out = ad.sum_over_axis(ad.square(x.detach()))
    out.backward()
    assert x.grad is None


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(BackwardError):
        ad.square(x).backward()


def test_backward_without_reset_errors():
    x = Tensor([1.0], requires_grad=True)
    ad.sum_over_axis(ad.square(x)).backward()
    with pytest.raises(BackwardError):
        ad.sum_over_axis(ad.square(x)).backward()
    x.zero_grad()
    ad.sum_over_axis(ad.square(x)).backward()  # fine after reset


def test_grad_accumulates_once_per_use():
    x = Tensor([2.0], requires_grad=True)
    y = ad.sum_over_axis(ad.square(x) + ad.square(x))  # 2x^2
    y.backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_shape_mismatch_names_op():
    with pytest.raises(ShapeMismatchError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor([-1.0]))


def test_div_by_zero():
    with pytest.raises(DomainError):
        ad.div(Tensor([1.0]), Tensor([0.0]))


def test_concat_and_split_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    out = ad.concat([a, b], axis=1)
    ad.sum_over_axis(ad.mul(out, np.arange(10.0).reshape(2, 5))).backward()
    np.testing.assert_array_equal(a.grad, [[0, 1], [5, 6]])
    np.testing.assert_array_equal(b.grad, [[2, 3, 4], [7, 8, 9]])


def test_forward_determinism():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 4))
    r1 = ad.softmax(ad.tanh(ad.matmul(Tensor(x), Tensor(x))), axis=1).data
    r2 = ad.softmax(ad.tanh(ad.matmul(Tensor(x), Tensor(x))), axis=1).data
    assert np.array_equal(r1, r2)


PRIMITIVES = [
    ("exp", lambda x: ad.sum_over_axis(ad.exp(x)), None),
    ("log", lambda x: ad.sum_over_axis(ad.log(x)), "positive"),
    ("tanh", lambda x: ad.sum_over_axis(ad.tanh(x)), None),
    ("softplus", lambda x: ad.sum_over_axis(ad.softplus(x)), None),
    ("square", lambda x: ad.sum_over_axis(ad.square(x)), None),
    ("abs", lambda x: ad.sum_over_axis(ad.absolute(x)), "away_from_zero"),
    ("mean", lambda x: ad.mean(x), None),
    ("softmax", lambda x: ad.sum_over_axis(ad.mul(ad.softmax(x, axis=0),
                                                  np.arange(float(x.size)).reshape(x.shape))), None),
    ("mul", lambda x: ad.sum_over_axis(ad.mul(x, x)), None),
    ("div", lambda x: ad.sum_over_axis(ad.div(1.0, x)), "positive"),
    ("relu", lambda x: ad.sum_over_axis(ad.relu(x)), "away_from_zero"),
]


@pytest.mark.parametrize("name,fn,domain", PRIMITIVES)
def test_primitives_match_finite_differences(name, fn, domain):
    # 100 random shapes/values per primitive, relative tolerance 1e-4
    import zlib
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for trial in range(100):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 3)))
        x = rng.normal(size=shape)
        if domain == "positive":
            x = np.abs(x) + 0.5
        elif domain == "away_from_zero":
            x = np.where(np.abs(x) < 0.2, np.sign(x) * 0.5 + (x == 0) * 0.5, x)
        err = gradient_check(fn, Tensor(x), eps=1e-5)
        assert err < 1e-4, f"{name} trial {trial}: {err}"


def test_matmul_gradient_check():
    rng = np.random.default_rng(7)
    B = rng.normal(size=(4, 3))
    err = gradient_check(lambda x: ad.sum_over_axis(ad.square(ad.matmul(x, Tensor(B)))),
                         Tensor(rng.normal(size=(2, 4))), eps=1e-5)
    assert err < 1e-4


def test_gradient_check_polynomial():
    rng = np.random.default_rng(4)
    err = gradient_check(lambda x: ad.sum_over_axis(ad.square(x)),
                         Tensor(rng.normal(size=7)), eps=1e-5)
    assert err <= 1e-6


def test_gradient_check_constant_function():
    err = gradient_check(lambda x: ad.sum_over_axis(ad.mul(x, 0.0)),
                         Tensor(np.ones(3)), eps=1e-5)
    assert err == 0.0


def test_gradient_check_two_layer_stub():
    # NLL-style loss of a small 2-layer network against central differences
    rng = np.random.default_rng(5)
    W2 = rng.normal(size=(6, 2))
    target = rng.uniform(0.2, 0.8, size=(3, 1))
    X = np.random.default_rng(8).normal(size=(3, 4))
    x = Tensor(rng.normal(size=(4, 6)))

    def loss_fixed(w1):
        h = ad.tanh(ad.matmul(Tensor(X), w1))
        out = ad.matmul(h, Tensor(W2))
        mu = ad._make(out.data[:, :1].copy(), (out,), lambda g: (np.pad(g, ((0, 0), (0, 1))),))
        sig = ad.softplus(ad._make(out.data[:, 1:].copy(), (out,),
                                   lambda g: (np.pad(g, ((0, 0), (1, 0))),))) + 1e-2
        var = ad.square(sig)
        return ad.mean(ad.square(mu - Tensor(target)) / var + ad.log(var))

    err = gradient_check(loss_fixed, x, eps=1e-5)
    assert err <= 1e-4
