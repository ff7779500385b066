"""Adam updates against a scalar reference loop, plus freezing semantics."""

import numpy as np

from floodseg.optim import Adam
from floodseg.tensor import Tensor


def adam_oracle(x0, grads, lr, beta1, beta2, eps):
    """Textbook bias-corrected Adam on a single scalar."""
    x, m, v = x0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return x


def test_updates_match_scalar_oracle():
    rng = np.random.RandomState(0)
    grads = rng.uniform(-2, 2, 20)
    p = Tensor(np.array([1.5]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    want = adam_oracle(1.5, grads, 0.01, 0.9, 0.999, 1e-8)
    assert abs(p.data[0] - want) < 1e-12


def test_first_step_moves_by_learning_rate_times_sign():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.array([2.0, -0.003])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)


def test_elementwise_independence():
    rng = np.random.RandomState(1)
    p = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    start = p.data.copy()
    grads = [rng.uniform(-1, 1, (3, 4)) for _ in range(5)]
    opt = Adam({"p": p}, lr=0.02)
    for g in grads:
        p.grad = g
        opt.step()
    for idx in np.ndindex(3, 4):
        want = adam_oracle(start[idx], [g[idx] for g in grads], 0.02, 0.9, 0.999, 1e-8)
        assert abs(p.data[idx] - want) < 1e-12


def test_freeze_by_name_prefix():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"base.w": a, "head.w": b}, lr=0.1, freeze=("base.",))
    assert opt.trainable_names == ["head.w"]
    a.grad = np.array([5.0])
    b.grad = np.array([5.0])
    opt.step()
    assert a.data[0] == 1.0          # frozen despite having a gradient
    assert b.data[0] != 1.0


def test_zero_grad_clears_everything_and_none_grads_are_skipped():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam({"a": a, "b": b}, lr=0.1)
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    opt.zero_grad()
    assert a.grad is None and b.grad is None
    a.grad = np.array([1.0])
    opt.step()                       # b has no grad this step
    assert a.data[0] != 1.0
    assert b.data[0] == 2.0


def test_identical_runs_are_deterministic():
    results = []
    for _ in range(2):
        p = Tensor(np.full((4,), 0.25), requires_grad=True)
        opt = Adam({"p": p}, lr=0.03)
        rng = np.random.RandomState(2)
        for _ in range(10):
            p.grad = rng.uniform(-1, 1, 4)
            opt.step()
        results.append(p.data.copy())
    np.testing.assert_array_equal(results[0], results[1])
