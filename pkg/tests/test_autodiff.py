import numpy as np
import pytest

from hazecast.autodiff import Tensor, concat, stack, zero_grads

from gradcheck import assert_gradients_match


def test_hand_chain_rule():
    # d/dw 0.5*(w*x - y)^2 at w=1, x=2, y=0 is (w*x - y)*x = 4
    w = Tensor(np.array(1.0), requires_grad=True)
    x = Tensor(np.array(2.0))
    y = Tensor(np.array(0.0))
    loss = (w * x - y) * (w * x - y) * 0.5
    loss.backward()
    assert w.grad == pytest.approx(4.0)


def test_constant_path_zero_gradient():
    x = Tensor(np.arange(4.0), requires_grad=True)
    loss = (x * 0.0).sum()
    loss.backward()
    assert np.all(x.grad == 0.0)


def test_reused_tensor_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x + x * x  # dy/dx = 4x
    y.backward()
    assert x.grad == pytest.approx(12.0)


def test_backward_accumulates_across_calls():
    x = Tensor(np.array(2.0), requires_grad=True)
    (x * x).backward()
    (x * x).backward()
    assert x.grad == pytest.approx(8.0)
    zero_grads([x])
    assert x.grad is None


def test_long_chain_no_recursion_error():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(3000):
        y = y * 1.0001
    y.backward()
    assert x.grad == pytest.approx(1.0001 ** 3000)


def test_matmul_shapes_enforced():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        _ = a @ b


def test_backward_requires_scalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_forward_only_tensors_carry_no_graph():
    a = Tensor(np.ones((2, 2)))
    b = Tensor(np.ones((2, 2)))
    c = a @ b + a
    assert not c.requires_grad
    assert c._backward is None


@pytest.mark.parametrize("seed", range(3))
def test_elementwise_and_broadcast_gradients(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    c = Tensor(rng.normal(size=(4, 1)) + 2.0, requires_grad=True)

    def loss():
        return (((a + b) * c - a / c) * (a * 0.5 + 1.3)).sum()

    assert_gradients_match(loss, {"a": a, "b": b, "c": c})


def test_matmul_gradients():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    k = Tensor(rng.normal(size=(3, 2)))

    def loss():
        return ((a @ b) * k).sum()

    assert_gradients_match(loss, {"a": a, "b": b})


def test_nonlinearity_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(5,)), requires_grad=True)

    def loss():
        return (x.tanh() + x.sigmoid() + (x * 0.1).exp()).sum()

    assert_gradients_match(loss, {"x": x})


def test_reduction_gradients():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(1, 5)))

    def loss():
        per_col = (x * w).sum(axis=0, keepdims=True)   # (1, 5)
        return (per_col * per_col).mean() + x.mean(axis=1).sum()

    assert_gradients_match(loss, {"x": x})


def test_concat_stack_gather_getitem_gradients():
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    idx = np.array([0, 2, 2, 1])

    def loss():
        joined = concat([a, b], axis=1)          # (3, 6)
        piled = stack([joined, joined * 2.0])    # (2, 3, 6)
        picked = joined.gather_rows(idx)         # (4, 6), repeated row 2
        return piled.sum() + (picked * picked).sum() + joined[1:, :3].sum()

    assert_gradients_match(loss, {"a": a, "b": b})


def test_reshape_transpose_gradients():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(6, 2)), requires_grad=True)

    def loss():
        y = x.reshape(3, 4).T  # (4, 3)
        return (y * y).sum()

    assert_gradients_match(loss, {"x": x})


def test_division_by_tensor_gradients():
    rng = np.random.default_rng(6)
    num = Tensor(rng.normal(size=(4,)), requires_grad=True)
    den = Tensor(rng.uniform(1.0, 3.0, size=(4,)), requires_grad=True)

    def loss():
        return (num / den + 2.0 / den).sum()

    assert_gradients_match(loss, {"num": num, "den": den})


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(123)
        x = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
        loss = ((x @ w).tanh()).sum()
        loss.backward()
        return loss.data.copy(), w.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()
