import numpy as np
import pytest

from gliopipe import tensor as T
from gliopipe.dcn import DcnConfig, build_dcn
from gliopipe.gradcheck import grad_check
from gliopipe.optim import AdamState, adam_step
from gliopipe.selfcheck import run_gradient_checks
from gliopipe.tensor import ShapeError, Tensor


class TestBackward:
    def test_sum_gradient_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4, 2)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4, 2), dtype=np.float32))

    def test_square_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_detached_branch_gets_no_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x.detach()
        loss = (x * y).sum()
        loss.backward()
        assert y.grad is None
        np.testing.assert_allclose(x.grad, y.data)

    def test_backward_on_non_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * x).backward()

    def test_backward_twice_fails(self):
        x = Tensor([1.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(RuntimeError):
            loss.backward()

    def test_gradients_accumulate_until_zeroed(self):
        x = Tensor([3.0], requires_grad=True)
        x.sum().backward()
        x.sum().backward()
        np.testing.assert_allclose(x.grad, [2.0])
        x.zero_grad()
        assert x.grad is None


class TestAdam:
    def test_zero_gradient_noop(self):
        p = Tensor(np.array([1.5, -0.5], dtype=np.float32), requires_grad=True)
        state = AdamState({"p": p})
        before = p.data.copy()
        for _ in range(5):
            p.grad = np.zeros_like(p.data)
            adam_step({"p": p}, state)
        np.testing.assert_array_equal(p.data, before)
        assert state.step == 5

    def test_first_step_magnitude(self):
        # bias-corrected m_hat / sqrt(v_hat) = 1 on the first step
        p = Tensor(np.array([0.0], dtype=np.float32), requires_grad=True)
        state = AdamState({"p": p}, lr=0.001)
        p.grad = np.array([1.0], dtype=np.float32)
        adam_step({"p": p}, state)
        assert abs(float(p.data[0]) + 0.001) < 1e-6

    def test_constant_gradient_is_monotone(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        state = AdamState({"p": p}, lr=0.01)
        values = [float(p.data[0])]
        for _ in range(2):
            p.grad = np.array([2.0], dtype=np.float32)
            adam_step({"p": p}, state)
            values.append(float(p.data[0]))
        assert values[0] > values[1] > values[2]

    def test_shape_drift_rejected(self):
        p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
        state = AdamState({"p": p})
        p.data = np.zeros(3, dtype=np.float32)
        p.grad = np.zeros(3, dtype=np.float32)
        with pytest.raises(ShapeError):
            adam_step({"p": p}, state)


class TestGradCheck:
    def test_quadratic(self):
        x = Tensor(np.array([0.7, -1.2, 2.0], dtype=np.float32))
        err = grad_check(lambda t: (t * t).sum(), x, eps=1e-3)
        assert err < 1e-4

    def test_linear_nearly_exact(self):
        x = Tensor(np.array([0.3, 1.7, -0.4], dtype=np.float32))
        a = Tensor(np.array([2.0, -1.0, 0.5], dtype=np.float32))
        err = grad_check(lambda t: (t * a).sum(), x, eps=1e-3)
        assert err < 1e-6

    def test_randomized_chains(self):
        assert run_gradient_checks(n_cases=30, seed=11) < 1e-3

    def test_one_block_dcn(self):
        cfg = DcnConfig(block_config=[1], growth_rate=4, init_features=6,
                        input_size=16, in_channels=1, num_classes=4)
        model = build_dcn(cfg, seed=0)
        model.train()
        labels = np.array([1, 2], dtype=np.int64)

        def f(t):
            return T.cross_entropy_loss(model(t), labels)

        x = Tensor(np.random.default_rng(1).normal(size=(2, 1, 16, 16)))
        assert grad_check(f, x, eps=1e-2) < 1e-2
