# nn/functional.py

"""
Stateless NCHW kernels with explicit backward rules.

Convolutions use an im2col-style strided window view (no copy of the padded
input) contracted with the weights through einsum; backward scatters window
gradients back with a fixed (kernel row, kernel column) loop order so results
are bitwise reproducible for a given platform.

Every *_forward returns (output, cache); the matching *_backward consumes the
cache. Shape rule for conv and pool outputs:
    H' = floor((H + 2*pad - k) / stride) + 1
"""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ShapeError
from nn.tensor import Tensor, require_rank


def output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """Conv/pool output extent for one spatial axis."""
    return (size + 2 * padding - kernel) // stride + 1


def _windows(xp: Tensor, kh: int, kw: int, stride: int) -> Tensor:
    # [N, C, Ho, Wo, kh, kw] read-only view into xp
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _scatter_windows(dcols: Tensor, padded_shape: Tuple[int, ...], stride: int) -> Tensor:
    """col2im: accumulates [N, C, Ho, Wo, kh, kw] window grads into a padded input grad."""
    _, _, ho, wo, kh, kw = dcols.shape
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    h_span = stride * (ho - 1) + 1
    w_span = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + h_span:stride, j:j + w_span:stride] += dcols[:, :, :, :, i, j]
    return dxp


def _pad(x: Tensor, padding: int, value: float = 0.0) -> Tensor:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                  mode="constant", constant_values=value)


def conv2d_forward(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1,
                   padding: int = 0, groups: int = 1) -> Tuple[Tensor, dict]:
    """
    Grouped 2-D cross-correlation.

    Args:
        x: Input [N, Cin, H, W]
        weight: [Cout, Cin/groups, kH, kW]
        bias: Optional [Cout]
        stride: Positive stride applied to both axes
        padding: Zero padding on every side
        groups: Cin and Cout must both be divisible by groups

    Returns:
        (output [N, Cout, H', W'], cache for conv2d_backward)
    """
    require_rank(x, 4)
    require_rank(weight, 4, "conv weight")
    n, c_in, h, w = x.shape
    c_out, c_per_group, kh, kw = weight.shape
    if stride < 1 or padding < 0 or groups < 1:
        raise ShapeError(f"Invalid conv geometry: stride={stride}, padding={padding}, groups={groups}")
    if c_in % groups or c_out % groups or c_in // groups != c_per_group:
        raise ShapeError(
            f"Channel/group mismatch: input has {c_in} channels, weight expects "
            f"{c_per_group} x {groups} groups -> {c_out} outputs"
        )
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"Kernel {kh}x{kw} does not fit {h}x{w} input with padding {padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"Bias shape {tuple(bias.shape)} does not match {c_out} output channels")

    xp = _pad(x, padding)
    cols = _windows(xp, kh, kw, stride)
    ho, wo = cols.shape[2], cols.shape[3]
    cols_g = cols.reshape(n, groups, c_per_group, ho, wo, kh, kw)
    w_g = weight.reshape(groups, c_out // groups, c_per_group, kh, kw)
    out = np.einsum("ngchwij,gocij->ngohw", cols_g, w_g, optimize=True)
    out = out.reshape(n, c_out, ho, wo)
    if bias is not None:
        out = out + bias.reshape(1, c_out, 1, 1)
    cache = {
        "cols_g": cols_g,
        "w_g": w_g,
        "x_shape": x.shape,
        "padded_shape": xp.shape,
        "weight_shape": weight.shape,
        "stride": stride,
        "padding": padding,
        "groups": groups,
        "has_bias": bias is not None,
    }
    return np.ascontiguousarray(out, dtype=x.dtype), cache


def conv2d_backward(dy: Tensor, cache: dict) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """Returns (input grad, weight grad, bias grad or None)."""
    n, c_out, ho, wo = dy.shape
    groups = cache["groups"]
    cols_g, w_g = cache["cols_g"], cache["w_g"]
    dy_g = dy.reshape(n, groups, c_out // groups, ho, wo)

    dw = np.einsum("ngohw,ngchwij->gocij", dy_g, cols_g, optimize=True)
    dw = dw.reshape(cache["weight_shape"])
    db = dy.sum(axis=(0, 2, 3)) if cache["has_bias"] else None

    dcols = np.einsum("ngohw,gocij->ngchwij", dy_g, w_g, optimize=True)
    c_in = cache["x_shape"][1]
    kh, kw = cache["weight_shape"][2], cache["weight_shape"][3]
    dcols = dcols.reshape(n, c_in, ho, wo, kh, kw)
    dxp = _scatter_windows(dcols, cache["padded_shape"], cache["stride"])
    p = cache["padding"]
    h, w = cache["x_shape"][2], cache["x_shape"][3]
    dx = dxp[:, :, p:p + h, p:p + w]
    return np.ascontiguousarray(dx), dw, db


def maxpool2d_forward(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tuple[Tensor, dict]:
    """
    Window maximum. Padding is -inf, so it is never selected; padding is
    limited to kernel // 2 which guarantees every window holds a real element.
    Ties resolve to the first (row-major) position in the window.
    """
    require_rank(x, 4)
    n, c, h, w = x.shape
    if padding > kernel // 2:
        raise ShapeError(f"MaxPool padding {padding} exceeds half the kernel size {kernel}")
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise ShapeError(f"MaxPool window {kernel} larger than padded input {h}x{w} (pad {padding})")
    xp = _pad(x, padding, value=-np.inf)
    cols = _windows(xp, kernel, kernel, stride)
    ho, wo = cols.shape[2], cols.shape[3]
    flat = cols.reshape(n, c, ho, wo, kernel * kernel)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    cache = {"argmax": argmax, "x_shape": x.shape, "padded_shape": xp.shape,
             "kernel": kernel, "stride": stride, "padding": padding}
    return np.ascontiguousarray(out), cache


def maxpool2d_backward(dy: Tensor, cache: dict) -> Tensor:
    k, s, p = cache["kernel"], cache["stride"], cache["padding"]
    argmax = cache["argmax"]
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros(cache["padded_shape"], dtype=dy.dtype)
    h_span = s * (ho - 1) + 1
    w_span = s * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            mask = argmax == (i * k + j)
            dxp[:, :, i:i + h_span:s, j:j + w_span:s] += np.where(mask, dy, 0.0)
    h, w = cache["x_shape"][2], cache["x_shape"][3]
    return np.ascontiguousarray(dxp[:, :, p:p + h, p:p + w])


def adaptive_bins(size: int, out: int):
    """[start, end) pairs with floor boundaries; the bins tile range(size) exactly."""
    return [((i * size) // out, ((i + 1) * size) // out) for i in range(out)]


def adaptive_avg_pool2d_forward(x: Tensor, out_h: int, out_w: int) -> Tuple[Tensor, dict]:
    """
    Adaptive average pooling with floor bin boundaries:
        rows [floor(i*H/out_h), floor((i+1)*H/out_h)), columns likewise.

    Raises:
        ShapeError: out extents < 1 or larger than the input (empty bins)
    """
    require_rank(x, 4)
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"Adaptive pool output must be >= 1x1, got {out_h}x{out_w}")
    if out_h > h or out_w > w:
        raise ShapeError(f"Adaptive pool output {out_h}x{out_w} exceeds input {h}x{w}")
    rows, cols = adaptive_bins(h, out_h), adaptive_bins(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out, {"x_shape": x.shape, "rows": rows, "cols": cols}


def adaptive_avg_pool2d_backward(dy: Tensor, cache: dict) -> Tensor:
    dx = np.zeros(cache["x_shape"], dtype=dy.dtype)
    for i, (r0, r1) in enumerate(cache["rows"]):
        for j, (c0, c1) in enumerate(cache["cols"]):
            area = (r1 - r0) * (c1 - c0)
            dx[:, :, r0:r1, c0:c1] += dy[:, :, i, j][:, :, None, None] / area
    return dx


def sigmoid(x: Tensor) -> Tensor:
    """
    Numerically stable logistic function.

    Saturated values are clamped to [tiny, 1 - eps] of the tensor's precision
    so the result stays strictly inside (0, 1) for every finite input.
    """
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    info = np.finfo(x.dtype)
    return np.clip(out, info.tiny, 1.0 - info.eps, out=out)
