import numpy as np
import pytest

from sttn import tensor as T
from sttn.losses import LossLog, LossWeights, d_loss, g_adv_loss, l1_hole, l1_valid, total_loss
from sttn.tensor import Tensor


def hole_mask(n_pixels, shape=(1, 1, 8, 8)):
    m = np.zeros(shape)
    m.reshape(-1)[:n_pixels] = 1
    return m


def test_l1_zero_for_identical():
    y = Tensor(np.random.default_rng(0).standard_normal((2, 3, 8, 8)))
    m = np.zeros((2, 1, 8, 8))
    m[:, :, 2:4, 2:4] = 1
    assert l1_hole(y, y, m).item() == 0.0
    assert l1_valid(y, y, m).item() == 0.0


def test_l1_constant_error_in_hole():
    y = Tensor(np.zeros((1, 3, 8, 8)))
    y_hat = Tensor(np.full((1, 3, 8, 8), 2.0))
    assert l1_hole(y, y_hat, hole_mask(10)).item() == 2.0
    assert l1_valid(y, y_hat, hole_mask(10)).item() == 2.0


def test_l1_hole_size_invariance():
    rng = np.random.default_rng(1)
    y = Tensor(rng.standard_normal((1, 3, 8, 8)))
    y_hat = y + 0.5
    small, large = l1_hole(y, y_hat, hole_mask(10)).item(), l1_hole(y, y_hat, hole_mask(20)).item()
    assert small == pytest.approx(0.5, abs=1e-12) and large == pytest.approx(small, abs=1e-12)


def test_l1_symmetry_and_errors():
    rng = np.random.default_rng(2)
    a, b = Tensor(rng.standard_normal((1, 3, 4, 4))), Tensor(rng.standard_normal((1, 3, 4, 4)))
    m = hole_mask(5, (1, 1, 4, 4))
    assert l1_hole(a, b, m).item() == pytest.approx(l1_hole(b, a, m).item())
    with pytest.raises(ValueError):
        l1_hole(a, b, np.zeros((1, 1, 4, 4)))
    with pytest.raises(ValueError):
        l1_valid(a, b, np.ones((1, 1, 4, 4)))
    with pytest.raises(ValueError):
        l1_hole(a, b, np.full((1, 1, 4, 4), 0.5))


def test_d_loss_examples():
    real, fake = Tensor(np.full((1, 1, 5, 1, 1), 1.5)), Tensor(np.full((1, 1, 5, 1, 1), -1.0))
    assert d_loss(real, fake).item() == 0.0
    zero = Tensor(np.zeros((1, 1, 5, 1, 1)))
    assert d_loss(zero, zero).item() == 2.0


def test_d_loss_saturated_gradient_is_zero():
    real = Tensor(np.full((4,), 2.0), requires_grad=True)
    fake = Tensor(np.full((4,), -3.0), requires_grad=True)
    T.backward(d_loss(real, fake))
    assert np.all(real.grad == 0) and np.all(fake.grad == 0)


def test_g_adv_loss():
    assert g_adv_loss(Tensor(np.zeros(6))).item() == 0.0
    assert g_adv_loss(Tensor(np.full(6, 3.0))).item() == -3.0
    a, b = np.random.default_rng(3).standard_normal((2, 6))
    assert g_adv_loss(Tensor(2 * a + b)).item() == pytest.approx(
        2 * g_adv_loss(Tensor(a)).item() + g_adv_loss(Tensor(b)).item())


def test_total_loss_examples():
    assert total_loss((1.0, 1.0, 1.0)) == 2.01
    assert total_loss((0.0, 0.0, 0.0)) == 0.0
    assert total_loss((5.0, 7.0, -2.0), LossWeights(0, 0, 1)) == -2.0
    out = total_loss((Tensor(1.0), Tensor(1.0), Tensor(1.0)))
    assert out.item() == 2.01
    with pytest.raises(ValueError):
        LossWeights(-1, 1, 1)


def test_loss_log_roundtrip(tmp_path):
    log = LossLog(tmp_path / "losses.csv")
    log.append(1, 0.5, 0.25, -0.1, 2.0)
    log.append(2, 0.4, 0.2, -0.2, 1.9)
    rows = log.read()
    assert (tmp_path / "losses.csv").read_text().splitlines()[0] == "step,L_hole,L_valid,L_adv,L_D"
    assert rows[1] == {"step": 2, "L_hole": 0.4, "L_valid": 0.2, "L_adv": -0.2, "L_D": 1.9}
