"""2-D convolution (cross-correlation) over NCHW tensors.

Three ops close under differentiation:

* ``conv2d(x, w)``              forward correlation
* ``conv_transpose2d(y, w)``    adjoint of conv2d in its input
* ``conv2d_weight(x, y)``       adjoint of conv2d in its kernel

Each op's backward is written with the other two, so second derivatives
through convolutions are exact.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .ops import add, reshape
from .tensor import Tensor, make_result


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*kh*kw, OH*OW)."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    sn, sc, sh, sw = x.strides
    view = as_strided(x, shape=(n, c, kh, kw, oh, ow),
                      strides=(sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)
    return view.reshape(n, c * kh * kw, oh * ow)


def _col2im_numpy(cols: np.ndarray, height: int, width: int, stride: int) -> np.ndarray:
    n, c, kh, kw, oh, ow = cols.shape
    out = np.zeros((n, c, height, width), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return out


try:
    from numba import njit

    @njit(cache=True)
    def _col2im_kernel(cols, height, width, stride):
        n, c, kh, kw, oh, ow = cols.shape
        out = np.zeros((n, c, height, width), dtype=cols.dtype)
        for a in range(n):
            for b in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for y in range(oh):
                            row = out[a, b, i + stride * y]
                            src = cols[a, b, i, j, y]
                            for x in range(ow):
                                row[j + stride * x] += src[x]
        return out
except ImportError:  # pragma: no cover
    _col2im_kernel = _col2im_numpy


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add (N, C*kh*kw, OH*OW) columns back into an (N, C, H, W) image."""
    n, c, h, w = x_shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    cols = np.ascontiguousarray(cols.reshape(n, c, kh, kw, oh, ow))
    out = _col2im_kernel(cols, h + 2 * pad, w + 2 * pad, stride)
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def conv2d_raw(x: np.ndarray, w: np.ndarray, stride: int, pad: int, return_cols: bool = False):
    n, _, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(wd, kw, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    out = np.matmul(w.reshape(o, -1), cols).reshape(n, o, oh, ow)
    return (out, cols) if return_cols else out


def conv2d_input_grad_raw(gy: np.ndarray, w: np.ndarray, x_shape, stride: int, pad: int) -> np.ndarray:
    n, o, oh, ow = gy.shape
    _, _, kh, kw = w.shape
    cols = np.matmul(w.reshape(o, -1).T, gy.reshape(n, o, oh * ow))
    return _col2im(cols, x_shape, kh, kw, stride, pad)


def conv2d_weight_grad_raw(x: np.ndarray, gy: np.ndarray, w_shape, stride: int, pad: int,
                           cols: np.ndarray | None = None) -> np.ndarray:
    o, c, kh, kw = w_shape
    n = x.shape[0]
    if cols is None:
        cols = _im2col(x, kh, kw, stride, pad)
    g2 = gy.reshape(n, o, -1)
    return np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w_shape)


def _check_conv(x_shape, w_shape, stride, pad):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ValueError(f"conv2d expects NCHW input and OIHW kernel, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise ValueError(f"conv2d: input has {x_shape[1]} channels, kernel expects {w_shape[1]}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    oh = conv_out_size(x_shape[2], w_shape[2], stride, pad)
    ow = conv_out_size(x_shape[3], w_shape[3], stride, pad)
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: kernel {w_shape[2:]} does not fit input {x_shape[2:]} with padding {pad}")


def _conv(x: Tensor, w: Tensor, stride: int, pad: int) -> Tensor:
    _check_conv(x.shape, w.shape, stride, pad)
    data, cols = conv2d_raw(x.data, w.data, stride, pad, return_cols=True)
    # the input's columns are reused by the kernel gradient
    cache = cols if w.requires_grad else None

    def bw(g, needs):
        gx = conv_transpose2d(g, w, stride, pad, x.shape[2:]) if needs[0] else None
        gw = conv2d_weight(x, g, w.shape, stride, pad, cols=cache) if needs[1] else None
        return gx, gw

    return make_result(data, (x, w), bw, "conv2d")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate NCHW ``x`` with OIHW kernel ``w`` (zero padding)."""
    out = _conv(x, w, stride, padding)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


def conv_transpose2d(y: Tensor, w: Tensor, stride: int = 1, padding: int = 0,
                     out_size: tuple[int, int] | None = None, bias: Tensor | None = None) -> Tensor:
    """Exact adjoint of conv2d in its input.

    ``w`` keeps conv2d's OIHW layout: ``y`` has O channels, the result has I.
    ``out_size`` resolves the spatial extent when stride > 1 leaves it ambiguous.
    """
    n, o, oh, ow = y.shape
    if w.shape[0] != o:
        raise ValueError(f"conv_transpose2d: input has {o} channels, kernel expects {w.shape[0]}")
    kh, kw = w.shape[2:]
    if out_size is None:
        out_size = ((oh - 1) * stride - 2 * padding + kh, (ow - 1) * stride - 2 * padding + kw)
    x_shape = (n, w.shape[1], int(out_size[0]), int(out_size[1]))
    if (conv_out_size(x_shape[2], kh, stride, padding), conv_out_size(x_shape[3], kw, stride, padding)) != (oh, ow):
        raise ValueError(f"conv_transpose2d: output size {out_size} inconsistent with input {(oh, ow)}")

    def bw(g, needs):
        gy = _conv(g, w, stride, padding) if needs[0] else None
        gw = conv2d_weight(g, y, w.shape, stride, padding) if needs[1] else None
        return gy, gw

    out = make_result(conv2d_input_grad_raw(y.data, w.data, x_shape, stride, padding),
                      (y, w), bw, "conv_transpose2d")
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


def conv2d_weight(x: Tensor, y: Tensor, w_shape, stride: int, padding: int,
                  cols: np.ndarray | None = None) -> Tensor:
    """Adjoint of conv2d in its kernel: correlate input ``x`` with output-grad ``y``."""
    w_shape = tuple(w_shape)

    def bw(g, needs):
        gx = conv_transpose2d(y, g, stride, padding, x.shape[2:]) if needs[0] else None
        gy = _conv(x, g, stride, padding) if needs[1] else None
        return gx, gy

    data = conv2d_weight_grad_raw(x.data, y.data, w_shape, stride, padding, cols)
    return make_result(data, (x, y), bw, "conv2d_weight")
