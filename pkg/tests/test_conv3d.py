"""Convolution ops against the loop oracle, shape contracts, gradchecks."""

import numpy as np
import pytest

from codedhdr import engine as eng
from codedhdr.engine import ConvSpec, same_size_padding

from _helpers import conv3d_loops, gradcheck, probe_loss


def _spec(cin, cout, k=(3, 3, 3), s=(1, 1, 1), d=(1, 1, 1), p=(0, 0, 0),
          transposed=False, op=(0, 0, 0)):
    return ConvSpec(in_channels=cin, out_channels=cout, kernel=k, stride=s,
                    dilation=d, padding=p, transposed=transposed,
                    output_padding=op)


def test_identity_kernel():
    x = eng.Tensor(np.random.default_rng(0).random((1, 1, 3, 4, 4), np.float32))
    w = eng.Tensor(np.ones((1, 1, 1, 1, 1), np.float32))
    b = eng.Tensor(np.zeros(1, np.float32))
    y = eng.conv3d(x, _spec(1, 1, k=(1, 1, 1)), w, b)
    np.testing.assert_array_equal(y.data, x.data)


def test_ones_kernel_centered_impulse():
    x = np.zeros((1, 1, 3, 3, 3), np.float32)
    x[0, 0, 1, 1, 1] = 1.0
    w = np.ones((1, 1, 3, 3, 3), np.float32)
    spec = _spec(1, 1, p=(1, 1, 1))
    y = eng.conv3d(eng.Tensor(x), spec, eng.Tensor(w))
    oracle = conv3d_loops(x, w, None, spec.stride, spec.dilation, spec.padding)
    np.testing.assert_allclose(y.data, oracle, atol=1e-6)
    np.testing.assert_array_equal(y.data, np.ones((1, 1, 3, 3, 3), np.float32))


@pytest.mark.parametrize("h,w", [(8, 8), (9, 7)])
def test_strided_halving_shape(h, w):
    # encoder downsampling: stride (1,2,2) halves H and W (ceil), keeps f
    x = np.random.default_rng(1).random((2, 32, 3, h, w)).astype(np.float32)
    spec = _spec(32, 32, s=(1, 2, 2), p=(1, 1, 1))
    wt = np.random.default_rng(2).random((32, 32, 3, 3, 3)).astype(np.float32) * 0.01
    y = eng.conv3d(eng.Tensor(x), spec, eng.Tensor(wt))
    assert y.data.shape == (2, 32, 3, (h + 1) // 2, (w + 1) // 2)


def test_random_vs_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 4, 6, 5)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    for s, d, p in [((1, 1, 1), (1, 1, 1), (1, 1, 1)),
                    ((1, 2, 2), (1, 1, 1), (1, 1, 1)),
                    ((1, 1, 1), (1, 2, 2), (1, 2, 2)),
                    ((1, 1, 1), (2, 2, 2), (2, 2, 2))]:
        spec = _spec(3, 4, s=s, d=d, p=p)
        y = eng.conv3d(eng.Tensor(x), spec, eng.Tensor(w), eng.Tensor(b))
        oracle = conv3d_loops(x, w, b, s, d, p)
        np.testing.assert_allclose(y.data, oracle, rtol=1e-4, atol=1e-4)


def test_same_size_padding_contract():
    assert same_size_padding((3, 3, 3)) == (1, 1, 1)
    assert same_size_padding((3, 3, 3), (2, 2, 2)) == (2, 2, 2)
    assert same_size_padding((5, 5, 5)) == (2, 2, 2)
    with pytest.raises(ValueError, match="odd"):
        same_size_padding((4, 3, 3))
    x = np.random.default_rng(4).random((1, 2, 3, 6, 6)).astype(np.float32)
    w = np.random.default_rng(5).standard_normal((2, 2, 3, 3, 3)).astype(np.float32)
    spec = _spec(2, 2, p=same_size_padding((3, 3, 3)))
    y = eng.conv3d(eng.Tensor(x), spec, eng.Tensor(w))
    assert y.data.shape == x.shape


def test_shape_mismatch_diagnostics():
    x = eng.Tensor(np.zeros((1, 3, 2, 4, 4), np.float32))
    w = eng.Tensor(np.zeros((4, 2, 3, 3, 3), np.float32))
    with pytest.raises(ValueError, match="channel"):
        eng.conv3d(x, _spec(2, 4, p=(1, 1, 1)), w)
    with pytest.raises(ValueError, match="weight shape"):
        eng.conv3d(x, _spec(3, 4), eng.Tensor(np.zeros((4, 3, 3, 3), np.float32)))
    with pytest.raises(ValueError, match="frame axis"):
        eng.conv3d(eng.Tensor(np.zeros((1, 3, 1, 4, 4), np.float32)),
                   _spec(3, 4), eng.Tensor(np.zeros((4, 3, 3, 3, 3), np.float32)))


def test_conv_linearity_zero_bias():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 2, 2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float32)
    spec = _spec(2, 3, p=(1, 1, 1))
    y1 = eng.conv3d(eng.Tensor(2.5 * x), spec, eng.Tensor(w))
    y2 = eng.conv3d(eng.Tensor(x), spec, eng.Tensor(w))
    np.testing.assert_allclose(y1.data, 2.5 * y2.data, rtol=1e-5, atol=1e-5)


def test_transposed_identity():
    x = np.random.default_rng(7).random((1, 2, 2, 4, 4)).astype(np.float32)
    w = np.zeros((2, 2, 1, 1, 1), np.float32)
    w[0, 0] = w[1, 1] = 1.0
    spec = _spec(2, 2, k=(1, 1, 1), transposed=True)
    y = eng.conv3d_transposed(eng.Tensor(x), spec, eng.Tensor(w))
    np.testing.assert_array_equal(y.data, x)


def test_transposed_doubling_shape():
    x = np.random.default_rng(8).random((1, 4, 3, 4, 4)).astype(np.float32)
    w = np.random.default_rng(9).standard_normal((4, 2, 3, 3, 3)).astype(np.float32)
    spec = _spec(4, 2, s=(1, 2, 2), p=(1, 1, 1), transposed=True, op=(0, 1, 1))
    y = eng.conv3d_transposed(eng.Tensor(x), spec, eng.Tensor(w))
    assert y.data.shape == (1, 2, 3, 8, 8)


def test_transposed_adjoint_of_forward():
    # <conv(x), y> == <x, conv_T(y)> for matching specs and shared weights
    rng = np.random.default_rng(10)
    x = rng.standard_normal((1, 3, 2, 6, 6)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3, 3)).astype(np.float32)
    fwd = eng.conv3d(eng.Tensor(x), _spec(3, 4, s=(1, 2, 2), p=(1, 1, 1)),
                     eng.Tensor(w))
    y = rng.standard_normal(fwd.data.shape).astype(np.float32)
    # transposed conv weights live as (in, out, k): same array, axes swapped
    wt = np.swapaxes(w, 0, 1).copy()
    back = eng.conv3d_transposed(
        eng.Tensor(y), _spec(4, 3, s=(1, 2, 2), p=(1, 1, 1), transposed=True,
                             op=(0, 1, 1)), eng.Tensor(np.swapaxes(wt, 0, 1).copy()))
    lhs = float(np.sum(fwd.data.astype(np.float64) * y))
    rhs = float(np.sum(x.astype(np.float64) * back.data))
    assert abs(lhs - rhs) <= 1e-3 * max(abs(lhs), 1.0)


def test_transposed_round_trip_rejected():
    x = eng.Tensor(np.zeros((1, 2, 2, 4, 4), np.float32))
    w = eng.Tensor(np.zeros((2, 2, 3, 3, 3), np.float32))
    # output_padding must stay below max(stride, dilation)
    spec = _spec(2, 2, s=(1, 2, 2), p=(1, 1, 1), transposed=True, op=(0, 2, 2))
    with pytest.raises(ValueError, match="output_padding"):
        eng.conv3d_transposed(x, spec, w)
    # dilated, stride-1: output_padding 1 breaks the encoder/decoder round trip
    spec = _spec(2, 2, d=(1, 2, 2), p=(1, 2, 2), transposed=True, op=(0, 1, 1))
    with pytest.raises(ValueError, match="maps back"):
        eng.conv3d_transposed(x, spec, w)


@pytest.mark.parametrize("kind", ["plain", "strided", "dilated", "transposed"])
def test_gradcheck_conv_kinds(kind):
    rng = np.random.default_rng(11)
    x = eng.parameter(rng.standard_normal((1, 2, 2, 6, 6)).astype(np.float32) * 0.5,
                      "x")
    if kind == "transposed":
        spec = _spec(2, 3, s=(1, 2, 2), p=(1, 1, 1), transposed=True, op=(0, 1, 1))
    elif kind == "strided":
        spec = _spec(2, 3, s=(1, 2, 2), p=(1, 1, 1))
    elif kind == "dilated":
        spec = _spec(2, 3, d=(1, 2, 2), p=(1, 2, 2))
    else:
        spec = _spec(2, 3, p=(1, 1, 1))
    w = eng.parameter(rng.standard_normal(spec.weight_shape).astype(np.float32) * 0.3,
                      "w")
    b = eng.parameter(rng.standard_normal(3).astype(np.float32) * 0.1, "b")

    def loss():
        op = eng.conv3d_transposed if kind == "transposed" else eng.conv3d
        return probe_loss(op(x, spec, w, b))

    gradcheck(loss, [x, w, b])
