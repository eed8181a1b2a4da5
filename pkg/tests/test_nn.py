import numpy as np
import pytest

from sttn import tensor as T
from sttn.gradcheck import check_gradients
from sttn.nn import (Conv2d, Conv3d, ResidualBlock, SNConv3d, SpectralNormState, avg_downsample,
                     bilinear_upsample, conv2d, conv3d, residual_block, spectral_normalize)
from sttn.tensor import ShapeError, Tensor

from oracles import direct_conv


def test_conv2d_1x1_identity():
    layer = Conv2d(3, 3, 1, dtype=np.float64)
    layer.weight.data[...] = np.eye(3)[:, :, None, None]
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 5, 4)))
    np.testing.assert_allclose(conv2d(x, layer).data, x.data)


def test_conv2d_ones_kernel_plateau():
    layer = Conv2d(1, 1, 3, dtype=np.float64)
    layer.weight.data[...] = 1.0
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    out = conv2d(Tensor(x), layer).data[0, 0]
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = 1.0
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(out, direct_conv(x, layer.weight.data, None, (1, 1), (1, 1))[0, 0])


def test_two_stride2_convs_give_full_size_feature_map():
    a = Conv2d(1, 1, 3, stride=2)
    b = Conv2d(1, 1, 3, stride=2)
    assert b.output_size(a.output_size((240, 432))) == (60, 108)


def test_conv3d_identity_and_discriminator_strides():
    ident = Conv3d(2, 2, 1, dtype=np.float64)
    ident.weight.data[...] = np.eye(2)[:, :, None, None, None]
    x = Tensor(np.random.default_rng(1).standard_normal((1, 2, 3, 4, 4)))
    np.testing.assert_allclose(conv3d(x, ident).data, x.data)
    layer = Conv3d(3, 4, (3, 5, 5), stride=(1, 2, 2), padding=(1, 2, 2))
    out = layer(Tensor(np.zeros((1, 3, 5, 64, 64), np.float32)))
    assert out.shape == (1, 4, 5, 32, 32)


@pytest.mark.parametrize("seed", range(8))
def test_conv_matches_direct_loop(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 4, size=2)
    x = rng.standard_normal((2, c_in, *rng.integers(3, 9, size=2)))
    w = rng.standard_normal((c_out, c_in, 3, 3))
    b = rng.standard_normal(c_out)
    stride = int(rng.integers(1, 3))
    got = T.conv(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=1).data
    np.testing.assert_allclose(got, direct_conv(x, w, b, (stride,) * 2, (1, 1)), atol=1e-6)
    x3 = rng.standard_normal((1, c_in, *rng.integers(3, 7, size=3)))
    w3 = rng.standard_normal((c_out, c_in, 3, 3, 3))
    got3 = T.conv(Tensor(x3), Tensor(w3), Tensor(b), stride=(1, stride, stride), padding=1).data
    np.testing.assert_allclose(got3, direct_conv(x3, w3, b, (1, stride, stride), (1, 1, 1)), atol=1e-6)


def test_conv_errors():
    layer = Conv2d(3, 2, 3)
    with pytest.raises(ShapeError):
        layer(Tensor(np.zeros((1, 2, 5, 5), np.float32)))
    with pytest.raises(ShapeError):
        T.conv(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


def test_dilated_conv_output_size():
    layer = Conv2d(1, 1, 3, dilation=2)
    assert layer(Tensor(np.zeros((1, 1, 9, 7), np.float32))).shape == (1, 1, 9, 7)


@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    conv = Conv2d(2, 3, 3, stride=2, rng=rng, dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 2, 5, 6)), requires_grad=True)
    assert check_gradients(lambda: conv(x), [x, conv.weight, conv.bias]) < 1e-4

    c3 = Conv3d(2, 2, (3, 3, 3), stride=(1, 2, 2), rng=rng, dtype=np.float64)
    x3 = Tensor(rng.standard_normal((1, 2, 3, 4, 4)), requires_grad=True)
    assert check_gradients(lambda: c3(x3), [x3, c3.weight, c3.bias]) < 1e-4

    block = ResidualBlock(2, rng=rng, dtype=np.float64)
    xr = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    w_out = Tensor(rng.standard_normal((1, 2, 4, 4)))
    assert check_gradients(lambda: block(xr) * w_out,
                           [xr, block.conv_a.weight, block.conv_b.weight]) < 1e-4

    sn = SNConv3d(2, 3, (3, 3, 3), stride=(1, 2, 2), rng=rng, dtype=np.float64)
    # at a converged u the estimate is stationary in (u, v), so the fixed-(u, v)
    # gradient is the true one
    for _ in range(200):
        sn.effective_weight()
    sn.update_u = False
    assert check_gradients(lambda: sn(x3), [x3, sn.weight]) < 1e-4


# -- bilinear --------------------------------------------------------------------------

def test_upsample_constant():
    out = bilinear_upsample(Tensor(np.full((1, 2, 3, 4), 0.7)), 2).data
    np.testing.assert_allclose(out, 0.7)


def test_upsample_2x2_closed_form():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = bilinear_upsample(Tensor(x[None, None]), 2).data[0, 0]
    # half-pixel centres: outputs sit at source coords -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]
    w = np.array([0.0, 0.25, 0.75, 1.0])
    expected = 2.0 * w[:, None] + 1.0 * w[None, :]
    np.testing.assert_allclose(out, expected)
    assert out.min() >= 0.0 and out.max() <= 3.0
    assert {0.0, 1.0, 2.0, 3.0} <= set(out[[0, 0, -1, -1], [0, -1, 0, -1]].tolist())


def test_upsample_of_downsampled_ramp():
    ramp = np.add.outer(np.arange(16.0), np.arange(16.0)) * 0.1
    small = avg_downsample(ramp[None, None], 2)
    back = bilinear_upsample(Tensor(small), 2).data[0, 0]
    # linear content is reproduced except the clamped outermost rows/cols
    assert np.max(np.abs(back[1:-1, 1:-1] - ramp[1:-1, 1:-1])) < 1e-9
    assert np.max(np.abs(back - ramp)) <= 0.1 + 1e-9


# -- spectral norm ----------------------------------------------------------------------

def test_spectral_norm_diagonal():
    w = Tensor(np.diag([3.0, 1.0])[:, :, None], requires_grad=True)
    state = SpectralNormState(u=np.array([0.6, 0.8]))
    for _ in range(20):
        out = spectral_normalize(w, state)
    assert abs(np.linalg.svd(out.data[:, :, 0], compute_uv=False)[0] - 1.0) < 1e-3


def test_spectral_norm_orthogonal_unchanged():
    q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((4, 4)))
    w = Tensor(q, requires_grad=True)
    state = SpectralNormState(u=np.ones(4) / 2)
    for _ in range(20):
        out = spectral_normalize(w, state)
    np.testing.assert_allclose(out.data, q, atol=1e-3)
    assert abs(np.linalg.norm(state.u) - 1) < 1e-12


def test_spectral_norm_zero_guard():
    w = Tensor(np.zeros((3, 2)), requires_grad=True)
    out = spectral_normalize(w, SpectralNormState(u=np.ones(3) / np.sqrt(3)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_spectral_norm_bound_after_iterations():
    rng = np.random.default_rng(5)
    layer = SNConv3d(3, 8, (3, 5, 5), rng=rng, dtype=np.float64)
    for _ in range(30):
        w = layer.effective_weight()
    mat = w.data.reshape(8, -1)
    _, _, sigma = __import__("sttn.nn", fromlist=["power_iteration"]).power_iteration(
        mat, SpectralNormState(u=layer.sn_state.u.copy()), update=False)
    assert sigma <= 1 + 1e-2


# -- residual block ---------------------------------------------------------------------

def test_residual_zero_branch_is_identity():
    block = ResidualBlock(2, dtype=np.float64)
    for conv in (block.conv_a, block.conv_b):
        conv.weight.data[...] = 0.0
    x = Tensor(np.random.default_rng(0).standard_normal((1, 2, 4, 4)), requires_grad=True)
    out = residual_block(x, block)
    np.testing.assert_array_equal(out.data, x.data)
    T.backward(T.sum_(out))
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_residual_matches_composition():
    rng = np.random.default_rng(2)
    block = ResidualBlock(3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 3, 5, 5))
    a = direct_conv(x, block.conv_a.weight.data, block.conv_a.bias.data, (1, 1), (1, 1))
    a = np.where(a > 0, a, 0.2 * a)
    expected = x + direct_conv(a, block.conv_b.weight.data, block.conv_b.bias.data, (1, 1), (1, 1))
    np.testing.assert_allclose(block(Tensor(x)).data, expected, atol=1e-9)


def test_residual_channel_mismatch():
    with pytest.raises(ShapeError):
        ResidualBlock(3)(Tensor(np.zeros((1, 2, 4, 4), np.float32)))
