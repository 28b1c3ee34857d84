"""Raw 3-D convolution kernels (forward and backward) on float32 numpy arrays.

All tensors use N x C x F x H x W layout.  The convolution is decomposed per
kernel tap: each of the kf*kh*kw taps contributes one (C_out x C_in) by
(C_in x L) matrix product over the flattened output volume, which routes all
heavy arithmetic through BLAS sgemm on contiguous buffers.

Backward passes avoid strided scatter-adds entirely:
  * input gradients (and the transposed-conv forward) are themselves plain
    gather convolutions of the zero-stuffed, complementary-padded gradient
    with tap-flipped weights;
  * weight gradients use one im2col buffer per sample and a single GEMM.
"""

import numpy as np

try:
    from scipy.linalg.blas import sgemm as _sgemm
except ImportError:  # pragma: no cover
    _sgemm = None


def _f32c(a):
    return np.ascontiguousarray(a, dtype=np.float32)


def _c_contig(*arrays):
    return all(a.flags.c_contiguous for a in arrays)


def _gemm_acc(a, b, out):
    """out += a @ b without a temporary; all arrays C-contiguous float32 2-D.

    BLAS sees the transposed (Fortran-order) views: out.T = b.T @ a.T + out.T.
    If anything is non-contiguous scipy would update an internal copy instead
    of `out`, so fall back to plain numpy in that case.
    """
    if _sgemm is not None and _c_contig(a, b, out):
        _sgemm(1.0, b.T, a.T, beta=1.0, c=out.T, overwrite_c=True)
    else:
        out += a @ b


def _gemm_acc_abt(a, b, out):
    """out += a @ b.T for C-contiguous float32 2-D arrays (out.T = b @ a.T)."""
    if _sgemm is not None and _c_contig(a, b, out):
        _sgemm(1.0, b.T, a.T, beta=1.0, c=out.T, trans_a=1, overwrite_c=True)
    else:
        out += a @ b.T


def conv_out_extent(length, k, s, d, p):
    """Output extent of one axis: floor((L + 2p - d*(k-1) - 1)/s) + 1."""
    eff = d * (k - 1) + 1
    if length + 2 * p < eff:
        return 0
    return (length + 2 * p - eff) // s + 1


def convt_out_extent(length, k, s, d, p, op):
    """Output extent of one transposed-conv axis."""
    return (length - 1) * s - 2 * p + d * (k - 1) + 1 + op


def _pad5(x, pad):
    pf, ph, pw = pad
    if pf == 0 and ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pf, pf), (ph, ph), (pw, pw)))


def _offsets(kernel):
    kf, kh, kw = kernel
    for dz in range(kf):
        for dy in range(kh):
            for dx in range(kw):
                yield dz, dy, dx


def _tap_window(xp, off, stride, dilation, out_sizes):
    """View of the padded volume read by kernel tap `off`, shape (N,C,*out_sizes)."""
    dz, dy, dx = off
    sf, sh, sw = stride
    df, dh, dw = dilation
    Fo, Ho, Wo = out_sizes
    return xp[:, :,
              dz * df: dz * df + (Fo - 1) * sf + 1: sf,
              dy * dh: dy * dh + (Ho - 1) * sh + 1: sh,
              dx * dw: dx * dw + (Wo - 1) * sw + 1: sw]


def _gather(xp, taps, kernel, stride, dilation, out_sizes, nc_out):
    """Core gather convolution: out[n,o,:] = sum over taps of taps[i] @ window.

    `taps` is a list of contiguous (C_out, C_in) matrices, one per kernel
    offset in _offsets order.  Output is written contiguously; no scatter.
    """
    N, C = xp.shape[:2]
    L = int(np.prod(out_sizes))
    out = np.zeros((N, nc_out, L), np.float32)
    buf = np.empty((C, L), np.float32)
    bufv = buf.reshape((C,) + tuple(out_sizes))
    for i, off in enumerate(_offsets(kernel)):
        win = _tap_window(xp, off, stride, dilation, out_sizes)
        for n in range(N):
            np.copyto(bufv, win[n])
            _gemm_acc(taps[i], buf, out[n])
    return out.reshape((N, nc_out) + tuple(out_sizes))


def _dilate_and_pad(g, stride, pad_adj, tail):
    """Zero-stuff g by `stride` along F,H,W, then pad (or crop, if negative)
    by pad_adj on both sides, with `tail` extra zeros at the high end."""
    N, C = g.shape[:2]
    sizes = g.shape[2:]
    ext = [(sizes[i] - 1) * stride[i] + 1 + max(tail[i], 0) for i in range(3)]
    lo = [max(p, 0) for p in pad_adj]
    hi = lo
    full = [ext[i] + lo[i] + hi[i] for i in range(3)]
    buf = np.zeros((N, C) + tuple(full), np.float32)
    buf[:, :,
        lo[0]: lo[0] + (sizes[0] - 1) * stride[0] + 1: stride[0],
        lo[1]: lo[1] + (sizes[1] - 1) * stride[1] + 1: stride[1],
        lo[2]: lo[2] + (sizes[2] - 1) * stride[2] + 1: stride[2]] = g
    crop = [-min(p, 0) for p in pad_adj]
    if any(crop):
        buf = buf[:, :,
                  crop[0]: buf.shape[2] - crop[0],
                  crop[1]: buf.shape[3] - crop[1],
                  crop[2]: buf.shape[4] - crop[2]]
    return buf


def _flipped_taps(w, kernel, swap):
    """Per-offset matrices of the tap-flipped kernel; `swap` transposes the
    channel axes (conv weights (O,C,...) -> (C,O) taps for the input grad)."""
    kf, kh, kw = kernel
    taps = []
    for dz, dy, dx in _offsets(kernel):
        m = w[:, :, kf - 1 - dz, kh - 1 - dy, kw - 1 - dx]
        taps.append(_f32c(m.T if swap else m))
    return taps


def _plain_taps(w, kernel, swap):
    taps = []
    for dz, dy, dx in _offsets(kernel):
        m = w[:, :, dz, dy, dx]
        taps.append(_f32c(m.T if swap else m))
    return taps


def _fill_cols(cols, xp, kernel, stride, dilation, out_sizes, n):
    """im2col into `cols` (taps * C, L), tap-major blocks of C rows."""
    C = xp.shape[1]
    L = int(np.prod(out_sizes))
    view = cols.reshape((len(cols) // C, C) + tuple(out_sizes))
    for i, off in enumerate(_offsets(kernel)):
        win = _tap_window(xp, off, stride, dilation, out_sizes)
        np.copyto(view[i], win[n])
    del L


def _weight_grad(g2, xp, kernel, stride, dilation, out_sizes, cin, cout):
    """dW via one cols GEMM per sample: (O, L) @ (L, taps*C) -> (O, taps*C)."""
    N = xp.shape[0]
    ntaps = int(np.prod(kernel))
    L = int(np.prod(out_sizes))
    cols = np.empty((ntaps * cin, L), np.float32)
    dw2 = np.zeros((cout, ntaps * cin), np.float32)
    for n in range(N):
        _fill_cols(cols, xp, kernel, stride, dilation, out_sizes, n)
        _gemm_acc_abt(g2[n], cols, dw2)
    # tap-major blocks back to (O, C, kf, kh, kw)
    dw = dw2.reshape((cout,) + tuple(kernel) + (cin,))
    return np.ascontiguousarray(np.moveaxis(dw, 4, 1))


def conv3d_forward(x, w, b, stride, dilation, padding):
    """Cross-correlation of x (N,C,F,H,W) with w (O,C,kf,kh,kw) plus bias.

    Returns (y, xp): the output and the padded input, which the backward pass
    reuses to avoid re-padding.
    """
    if x.ndim != 5:
        raise ValueError(f"expected 5-D N x C x F x H x W input, got rank {x.ndim}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"channel axis mismatch: input has {x.shape[1]} channels, "
            f"weights expect {w.shape[1]}")
    kernel = w.shape[2:]
    out_sizes = tuple(
        conv_out_extent(x.shape[2 + i], kernel[i], stride[i], dilation[i], padding[i])
        for i in range(3))
    for i, name in enumerate(("frame", "height", "width")):
        if out_sizes[i] <= 0:
            raise ValueError(
                f"{name} axis too small: extent {x.shape[2 + i]} with kernel "
                f"{kernel[i]}, stride {stride[i]}, dilation {dilation[i]}, "
                f"padding {padding[i]} yields empty output")
    xp = _pad5(x, padding)
    taps = _plain_taps(w, kernel, swap=False)
    y = _gather(xp, taps, kernel, stride, dilation, out_sizes, w.shape[0])
    if b is not None:
        y += b.reshape(1, -1, 1, 1, 1)
    return y, xp


def conv3d_backward(grad_y, xp, w, stride, dilation, padding, input_shape,
                    with_bias=True):
    """Gradients of conv3d_forward wrt input, weights and bias.

    The input gradient is computed as a stride-1 gather convolution of the
    zero-stuffed gradient with the tap-flipped, channel-swapped weights and
    complementary padding d*(k-1) - p.
    """
    N, O = grad_y.shape[:2]
    C = w.shape[1]
    kernel = w.shape[2:]
    out_sizes = tuple(grad_y.shape[2:])
    in_sizes = tuple(input_shape[2:])
    g = _f32c(grad_y)
    g2 = g.reshape(N, O, int(np.prod(out_sizes)))

    dw = _weight_grad(g2, xp, kernel, stride, dilation, out_sizes, C, O)

    pad_adj, tail = [], []
    for i in range(3):
        span = dilation[i] * (kernel[i] - 1)
        pad_adj.append(span - padding[i])
        # zero tail covers input positions no output window ever touched
        tail.append(in_sizes[i] + 2 * padding[i] - span
                    - ((out_sizes[i] - 1) * stride[i] + 1))
    gd = _dilate_and_pad(g, stride, pad_adj, tail)
    taps = _flipped_taps(w, kernel, swap=True)
    dx = _gather(gd, taps, kernel, (1, 1, 1), dilation, in_sizes, C)

    db = g2.sum(axis=(0, 2), dtype=np.float64).astype(np.float32) if with_bias else None
    return dx, dw, db


def convt3d_forward(x, w, b, stride, dilation, padding, output_padding):
    """Transposed convolution: x (N,I,F,H,W), w (I,O,kf,kh,kw).

    Adjoint of conv3d_forward, realized as a stride-1 gather convolution of
    the zero-stuffed input.  Output extent per axis is
    (L-1)*s - 2p + d*(k-1) + 1 + output_padding.
    """
    if x.ndim != 5:
        raise ValueError(f"expected 5-D N x C x F x H x W input, got rank {x.ndim}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(
            f"channel axis mismatch: input has {x.shape[1]} channels, "
            f"weights expect {w.shape[0]}")
    O = w.shape[1]
    kernel = w.shape[2:]
    for i in range(3):
        if not 0 <= output_padding[i] < max(stride[i], dilation[i]):
            raise ValueError(
                f"output_padding {output_padding[i]} on axis {i} must be < "
                f"max(stride, dilation) = {max(stride[i], dilation[i])}")
    out_sizes = tuple(
        convt_out_extent(x.shape[2 + i], kernel[i], stride[i], dilation[i],
                         padding[i], output_padding[i])
        for i in range(3))
    if any(s <= 0 for s in out_sizes):
        raise ValueError(f"transposed conv yields empty output {out_sizes}")
    # the matching forward conv must map out_sizes back onto x's extents,
    # otherwise the encoder/decoder round trip cannot be exact
    for i in range(3):
        back = conv_out_extent(out_sizes[i], kernel[i], stride[i], dilation[i], padding[i])
        if back != x.shape[2 + i]:
            raise ValueError(
                f"axis {i}: transposed output extent {out_sizes[i]} maps back to "
                f"{back}, not {x.shape[2 + i]}; adjust output_padding")
    pad_adj = [dilation[i] * (kernel[i] - 1) - padding[i] for i in range(3)]
    xd = _dilate_and_pad(_f32c(x), stride, pad_adj, output_padding)
    taps = _flipped_taps(w, kernel, swap=True)  # (O, I) per tap
    y = _gather(xd, taps, kernel, (1, 1, 1), dilation, out_sizes, O)
    if b is not None:
        y += b.reshape(1, -1, 1, 1, 1)
    return y


def convt3d_backward(grad_y, x, w, stride, dilation, padding, with_bias=True):
    """Gradients of convt3d_forward; the input gradient is a plain forward
    conv of grad_y with the same weights (roles flipped), and the weight
    gradient mirrors the conv dW with gradient and input exchanged."""
    N, I = x.shape[:2]
    O = w.shape[1]
    kernel = w.shape[2:]
    in_sizes = tuple(x.shape[2:])
    gp = _pad5(_f32c(grad_y), padding)
    taps = _plain_taps(w, kernel, swap=False)  # (I, O) per tap
    dx = _gather(gp, taps, kernel, stride, dilation, in_sizes, I)

    x2 = _f32c(x).reshape(N, I, int(np.prod(in_sizes)))
    dwt = _weight_grad(x2, gp, kernel, stride, dilation, in_sizes, O, I)
    dw = np.ascontiguousarray(np.swapaxes(dwt, 0, 1))

    db = grad_y.sum(axis=(0, 2, 3, 4), dtype=np.float64).astype(np.float32) \
        if with_bias else None
    return dx, dw, db
