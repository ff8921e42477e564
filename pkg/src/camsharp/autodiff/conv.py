"""Numpy kernels for 2-D cross-correlation and its two adjoints (NCHW / OIHW)."""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def resolve_padding(size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return (pad_before, pad_after, out_size) for one spatial axis."""
    if padding == "valid":
        if size < k:
            raise ValueError(f"kernel {k} does not fit input {size} with valid padding")
        return 0, 0, (size - k) // stride + 1
    if padding == "same":
        out = math.ceil(size / stride)
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2, out
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _windows(x, kh, kw, stride, pads, out_hw):
    pt, pb, pl, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(pads) else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return win[:, :, : out_hw[0], : out_hw[1]]  # N C OH OW kh kw


def conv2d_forward(x, w, stride, pads):
    kh, kw = w.shape[2:]
    oh = (x.shape[2] + pads[0] + pads[1] - kh) // stride + 1
    ow = (x.shape[3] + pads[2] + pads[3] - kw) // stride + 1
    win = _windows(x, kh, kw, stride, pads, (oh, ow))
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N OH OW O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_input_grad(g, w, x_shape, stride, pads):
    """Adjoint of conv2d_forward w.r.t. its input (a transposed convolution)."""
    n, c, h, wd = x_shape
    pt, pb, pl, pr = pads
    kh, kw = w.shape[2:]
    oh, ow = g.shape[2:]
    gx = np.zeros((n, c, h + pt + pb, wd + pl + pr))
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += np.einsum(
                "nohw,oc->nchw", g, w[:, :, i, j], optimize=True
            )
    return gx[:, :, pt : pt + h, pl : pl + wd]


def conv2d_kernel_grad(x, g, w_shape, stride, pads):
    """Adjoint of conv2d_forward w.r.t. its kernel."""
    kh, kw = w_shape[2:]
    win = _windows(x, kh, kw, stride, pads, g.shape[2:])
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # O C kh kw
