"""Gradient correctness of the array autodiff engine."""

import numpy as np
import pytest

from pdpinn import tape
from pdpinn.errors import InvalidArgumentError, PoisonedGradientError
from pdpinn.tape import Var, as_var, zero_grads

from _oracles import fd_gradient, rel_err


def check_against_fd(build, *leaves, tol=5e-7, h=1e-6):
    """Backward-pass gradients of build() must match central differences."""
    root = build()
    root.backward()
    got = [leaf.grad.copy() for leaf in leaves]
    for leaf, g in zip(leaves, got):
        want = fd_gradient(lambda: build().value, leaf.value, h=h)
        assert rel_err(g, want, floor=1e-12) < tol
    zero_grads(leaves)


def test_add_mul_broadcast_bias():
    rng = np.random.default_rng(0)
    x = Var(rng.normal(size=(4, 3)))
    b = Var(rng.normal(size=3))
    check_against_fd(lambda: ((x * 2.0 + b) ** 2).sum(), x, b)


def test_matmul_chain():
    rng = np.random.default_rng(1)
    a = Var(rng.normal(size=(5, 4)))
    w = Var(rng.normal(size=(4, 3)))
    check_against_fd(lambda: ((a @ w) * (a @ w)).sum(), a, w)


def test_div_and_pow():
    rng = np.random.default_rng(2)
    x = Var(rng.uniform(0.5, 2.0, size=(6,)))
    y = Var(rng.uniform(0.5, 2.0, size=(6,)))
    check_against_fd(lambda: (x / y + y ** 1.5).sum(), x, y)


@pytest.mark.parametrize("fn", [tape.tanh, tape.exp, tape.softplus])
def test_smooth_elementwise(fn):
    rng = np.random.default_rng(3)
    x = Var(rng.normal(size=(7,)))
    check_against_fd(lambda: (fn(x) * fn(x)).sum(), x)


def test_log_sqrt_positive_domain():
    rng = np.random.default_rng(4)
    x = Var(rng.uniform(0.5, 3.0, size=(5,)))
    check_against_fd(lambda: (tape.log(x) + tape.sqrt(x)).sum(), x)


def test_relu_subgradient_zero_at_kink():
    x = Var(np.array([-1.0, 0.0, 2.0]))
    out = tape.relu(x).sum()
    out.backward()
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


def test_sqrt_subgradient_zero_at_zero():
    x = Var(np.array([0.0, 4.0]))
    out = tape.sqrt(x).sum()
    out.backward()
    assert np.array_equal(x.grad, [0.0, 0.25])
    assert np.all(np.isfinite(x.grad))


def test_where_routes_by_mask():
    a = Var(np.array([1.0, 2.0, 3.0]))
    b = Var(np.array([10.0, 20.0, 30.0]))
    mask = np.array([True, False, True])
    out = (tape.where(mask, a, b) * np.array([1.0, 2.0, 3.0])).sum()
    assert out.value == 1.0 + 40.0 + 9.0
    out.backward()
    assert np.array_equal(a.grad, [1.0, 0.0, 3.0])
    assert np.array_equal(b.grad, [0.0, 2.0, 0.0])


def test_getitem_scatter():
    rng = np.random.default_rng(5)
    x = Var(rng.normal(size=(4, 3)))
    check_against_fd(lambda: (x[:, 1] * x[1, :].sum()).sum(), x)


def test_transpose_and_reshape():
    rng = np.random.default_rng(6)
    x = Var(rng.normal(size=(3, 4)))
    check_against_fd(lambda: (x.T @ x).sum() + x.reshape(12).sum(), x)


def test_shared_subexpression_accumulates_once_per_path():
    # diamond: y = s + s**2 with s shared; dy/dx must include both paths
    x = Var(np.array([1.5]))
    s = x * 3.0
    y = (s + s * s).sum()
    y.backward()
    assert abs(x.grad[0] - (3.0 + 2.0 * 4.5 * 3.0)) < 1e-12


def test_mean_and_sum_axis():
    rng = np.random.default_rng(7)
    x = Var(rng.normal(size=(3, 5)))
    check_against_fd(lambda: (x.sum(axis=0) * x.mean(axis=1).sum()).sum(), x)


def test_backward_requires_scalar_root():
    x = Var(np.ones(3))
    with pytest.raises(InvalidArgumentError):
        (x * 2.0).backward()


def test_gradients_accumulate_until_zeroed():
    x = Var(np.array([2.0]))
    (x * x).sum().backward()
    first = x.grad.copy()
    (x * x).sum().backward()
    assert np.allclose(x.grad, 2.0 * first)
    zero_grads([x])
    assert x.grad is None


def test_poisoned_gradient_is_detected_and_named():
    # log is finite at subnormal arguments but its backward 1/x overflows
    x = Var(np.array([1e-320]))
    y = tape.log(x).sum()
    y.backward()
    with pytest.raises(PoisonedGradientError, match="log"):
        y.check_gradients()


def test_constants_do_not_need_wrapping():
    x = Var(np.array([1.0, 2.0]))
    y = (2.0 * x + np.array([1.0, 1.0])) / 2.0 - 0.5
    assert np.allclose(y.value, x.value)
    assert as_var(y) is y
