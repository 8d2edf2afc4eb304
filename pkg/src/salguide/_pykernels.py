"""Pure numpy implementations of the hot convolution / pooling kernels.

All kernels work on channels-last (n, h, w, c) arrays. Every function has
a twin with the identical signature in the compiled ``_ckernels`` extension
and the two must agree bit for bit.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Lower (n, h, w, c) to a (n*oh*ow, kh*kw*c) patch matrix.

    Rows are ordered (n, oy, ox); columns (ky, kx, c), matching a kernel laid
    out as (cout, kh, kw, cin).
    """
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    # win: (n, oh, ow, c, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * oh * ow, kh * kw * c)


def col2im(cols, shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patches back to (n, h, w, c)."""
    n, h, w, c = shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh, ow = out_size(h, kh, stride, pad), out_size(w, kw, stride, pad)
    patches = np.asarray(cols).reshape(n, oh, ow, kh, kw, c)
    out = np.zeros((n, hp, wp, c))
    for ky in range(kh):
        ys = slice(ky, ky + stride * (oh - 1) + 1, stride)
        for kx in range(kw):
            xs = slice(kx, kx + stride * (ow - 1) + 1, stride)
            out[:, ys, xs, :] += patches[:, :, :, ky, kx, :]
    if pad:
        out = out[:, pad:hp - pad, pad:wp - pad, :]
    return np.ascontiguousarray(out)


def maxpool_argmax(x, k):
    """Non-overlapping k x k max pooling of (n, h, w, c).

    Returns pooled values and the flat index (into ``x.ravel()``) of each
    winner. Ties resolve to the first element in row-major window order.
    """
    n, h, w, c = x.shape
    oh, ow = h // k, w // k
    xc = np.asarray(x)[:, :oh * k, :ow * k, :]
    win = xc.reshape(n, oh, k, ow, k, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, k * k)
    arg = win.argmax(axis=-1)
    dy, dx = np.divmod(arg, k)
    iy = np.arange(oh)[None, :, None, None] * k + dy
    ix = np.arange(ow)[None, None, :, None] * k + dx
    idx = ((np.arange(n)[:, None, None, None] * h + iy) * w + ix) * c + np.arange(c)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int64)
