import numpy as np
import pytest

from hclpipe.optim import AdamW, scheduled_lr


def reference_adamw(p0, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Textbook decoupled-weight-decay recursion, written out step by step."""
    p = float(p0)
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p = p * (1 - lr * wd)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


class TestAdamW:
    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=25)
        p = np.array([1.5])
        opt = AdamW([p], lr=0.01, weight_decay=0.1)
        for g in grads:
            opt.step([np.array([g])])
        assert p[0] == pytest.approx(
            reference_adamw(1.5, grads, lr=0.01, wd=0.1), rel=1e-14
        )

    def test_first_step_is_normalized(self):
        # with zero state, m_hat/(sqrt(v_hat)+eps) ~= sign(g), so the first
        # step moves by ~lr against the gradient
        p = np.array([0.0])
        opt = AdamW([p], lr=0.1)
        opt.step([np.array([0.5])])
        assert p[0] == pytest.approx(-0.1, rel=1e-6)

    def test_decoupled_decay_shrinks_multiplicatively(self):
        # zero gradients: the only motion is the decay factor (1 - lr*wd)
        p = np.array([2.0])
        opt = AdamW([p], lr=0.5, weight_decay=0.1)
        for step in range(1, 6):
            opt.step([np.zeros(1)])
            assert p[0] == pytest.approx(2.0 * (1 - 0.5 * 0.1) ** step, rel=1e-14)

    def test_matches_torch_reference(self):
        torch = pytest.importorskip("torch")
        rng = np.random.default_rng(1)
        W0 = rng.normal(size=(4, 3))
        grads = [rng.normal(size=(4, 3)) for _ in range(30)]

        W = W0.copy()
        opt = AdamW([W], lr=5e-4, weight_decay=1e-4)
        for g in grads:
            opt.step([g])

        tp = torch.tensor(W0, dtype=torch.float64, requires_grad=True)
        topt = torch.optim.AdamW([tp], lr=5e-4, weight_decay=1e-4, eps=1e-8)
        for g in grads:
            topt.zero_grad()
            tp.grad = torch.tensor(g, dtype=torch.float64)
            topt.step()
        np.testing.assert_allclose(W, tp.detach().numpy(), rtol=1e-12, atol=1e-14)

    def test_argument_validation(self):
        p = np.zeros(1)
        with pytest.raises(ValueError):
            AdamW([p], lr=0.0)
        with pytest.raises(ValueError):
            AdamW([p], lr=0.1, weight_decay=-1.0)
        with pytest.raises(ValueError):
            AdamW([p], lr=0.1, betas=(1.0, 0.999))
        opt = AdamW([p], lr=0.1)
        with pytest.raises(ValueError):
            opt.step([np.zeros(1), np.zeros(1)])


class TestSchedule:
    def test_step_decay_exact(self):
        for epoch in range(20):
            expected = 5e-4 * 0.1 ** (epoch // 5)
            assert scheduled_lr(5e-4, epoch, 0.1, 5) == expected

    def test_no_decay_with_unit_factor(self):
        assert scheduled_lr(1e-3, 17, 1.0, 5) == 1e-3

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            scheduled_lr(1e-3, -1, 0.1, 5)
        with pytest.raises(ValueError):
            scheduled_lr(1e-3, 0, 0.1, 0)
