"""NHWC convolution primitives.

Three ops close under differentiation:

* ``conv2d(x, k)``            forward convolution
* ``conv2d_transpose(y, k)``  adjoint of ``conv2d`` in its input
* ``conv2d_kernel_grad(x, g)``  adjoint of ``conv2d`` in its kernel

Each VJP is expressed with the other two, which is what lets the gradient
penalty backpropagate through a first backward pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import DimensionError, Tensor, make_op


@dataclass(frozen=True)
class ConvGeometry:
    """Spatial bookkeeping for one convolution: input size, kernel, stride, pads, output size."""

    in_h: int
    in_w: int
    kh: int
    kw: int
    sh: int
    sw: int
    pad_top: int
    pad_bottom: int
    pad_left: int
    pad_right: int
    out_h: int
    out_w: int

    @classmethod
    def build(cls, in_hw, kernel_hw, stride, padding: str = "same") -> ConvGeometry:
        in_h, in_w = in_hw
        kh, kw = kernel_hw
        sh, sw = stride
        if sh < 1 or sw < 1:
            raise DimensionError(f"stride must be >= 1, got {stride}")
        if padding == "same":
            out_h, out_w = math.ceil(in_h / sh), math.ceil(in_w / sw)
            ph = max((out_h - 1) * sh + kh - in_h, 0)
            pw = max((out_w - 1) * sw + kw - in_w, 0)
            pads = (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
        elif padding == "valid":
            if in_h < kh or in_w < kw:
                raise DimensionError(f"valid conv needs input {in_hw} >= kernel {kernel_hw}")
            out_h, out_w = (in_h - kh) // sh + 1, (in_w - kw) // sw + 1
            pads = (0, 0, 0, 0)
        else:
            raise ValueError(f"unknown padding {padding!r}")
        return cls(in_h, in_w, kh, kw, sh, sw, *pads, out_h, out_w)

    @property
    def padded_hw(self) -> tuple[int, int]:
        return (self.in_h + self.pad_top + self.pad_bottom, self.in_w + self.pad_left + self.pad_right)


def _pad(x: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    if geo.pad_top == geo.pad_bottom == geo.pad_left == geo.pad_right == 0:
        return x
    return np.pad(x, ((0, 0), (geo.pad_top, geo.pad_bottom), (geo.pad_left, geo.pad_right), (0, 0)))


def im2col(x: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    """(N, H, W, C) -> (N*out_h*out_w, kh*kw*C) patch matrix."""
    xp = np.ascontiguousarray(_pad(x, geo))
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = as_strided(
        xp,
        shape=(n, geo.out_h, geo.out_w, geo.kh, geo.kw, c),
        strides=(s0, s1 * geo.sh, s2 * geo.sw, s1, s2, s3),
        writeable=False,
    )
    return view.reshape(n * geo.out_h * geo.out_w, geo.kh * geo.kw * c)


def col2im(cols: np.ndarray, geo: ConvGeometry, n: int, c: int) -> np.ndarray:
    """Scatter-add a patch matrix back onto an (N, H, W, C) image (adjoint of ``im2col``)."""
    ph, pw = geo.padded_hw
    out = np.zeros((n, ph, pw, c), dtype=cols.dtype)
    cols = cols.reshape(n, geo.out_h, geo.out_w, geo.kh, geo.kw, c)
    h_span = geo.sh * (geo.out_h - 1) + 1
    w_span = geo.sw * (geo.out_w - 1) + 1
    for i in range(geo.kh):
        for j in range(geo.kw):
            out[:, i:i + h_span:geo.sh, j:j + w_span:geo.sw, :] += cols[:, :, :, i, j, :]
    return out[:, geo.pad_top:geo.pad_top + geo.in_h, geo.pad_left:geo.pad_left + geo.in_w, :]


def _conv_fwd(x: np.ndarray, k: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    n = x.shape[0]
    cout = k.shape[3]
    out = im2col(x, geo) @ k.reshape(-1, cout)
    return out.reshape(n, geo.out_h, geo.out_w, cout)


def _conv_adj_input(g: np.ndarray, k: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    n = g.shape[0]
    cin, cout = k.shape[2], k.shape[3]
    cols = g.reshape(-1, cout) @ k.reshape(-1, cout).T
    return col2im(cols, geo, n, cin)


def _conv_adj_kernel(x: np.ndarray, g: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    cin, cout = x.shape[3], g.shape[3]
    kg = im2col(x, geo).T @ g.reshape(-1, cout)
    return kg.reshape(geo.kh, geo.kw, cin, cout)


def _check_conv(x: Tensor, k: Tensor):
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d expects NHWC input and KhKwCinCout kernel, got {x.shape} and {k.shape}")
    if x.shape[3] != k.shape[2]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")


def conv2d(x: Tensor, k: Tensor, stride=(1, 1), padding: str = "same") -> Tensor:
    """Cross-correlation of NHWC ``x`` with a (kh, kw, cin, cout) kernel."""
    _check_conv(x, k)
    geo = ConvGeometry.build(x.shape[1:3], k.shape[:2], tuple(stride), padding)
    return _conv_geo(x, k, geo)


def _conv_geo(x: Tensor, k: Tensor, geo: ConvGeometry) -> Tensor:
    def vjp(g, out):
        gx = _conv_t_geo(g, k, geo) if x.requires_grad else None
        gk = _kgrad_geo(x, g, geo) if k.requires_grad else None
        return gx, gk

    return make_op(_conv_fwd(x.data, k.data, geo), (x, k), vjp, "conv2d")


def conv2d_transpose(y: Tensor, k: Tensor, stride=(1, 1), padding: str = "same",
                     output_hw: tuple[int, int] | None = None) -> Tensor:
    """Transposed convolution; ``k`` has shape (kh, kw, out_channels, in_channels).

    With ``padding="same"`` the output is ``in * stride``. It is exactly the
    adjoint of ``conv2d`` taken from the output size with the same kernel.
    """
    if y.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d_transpose expects 4-d operands, got {y.shape} and {k.shape}")
    if y.shape[3] != k.shape[3]:
        raise DimensionError(f"conv2d_transpose channel mismatch: input {y.shape} vs kernel {k.shape}")
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if output_hw is None:
        if padding == "same":
            output_hw = (y.shape[1] * sh, y.shape[2] * sw)
        else:
            output_hw = ((y.shape[1] - 1) * sh + k.shape[0], (y.shape[2] - 1) * sw + k.shape[1])
    geo = ConvGeometry.build(output_hw, k.shape[:2], (sh, sw), padding)
    if (geo.out_h, geo.out_w) != tuple(y.shape[1:3]):
        raise DimensionError(f"conv2d_transpose: output size {output_hw} inconsistent with input {y.shape}")
    return _conv_t_geo(y, k, geo)


def _conv_t_geo(y: Tensor, k: Tensor, geo: ConvGeometry) -> Tensor:
    def vjp(g, out):
        gy = _conv_geo(g, k, geo) if y.requires_grad else None
        gk = _kgrad_geo(g, y, geo) if k.requires_grad else None
        return gy, gk

    return make_op(_conv_adj_input(y.data, k.data, geo), (y, k), vjp, "conv2d_transpose")


def conv2d_kernel_grad(x: Tensor, g: Tensor, geo: ConvGeometry) -> Tensor:
    """Kernel-shaped map W with <conv2d(x, w), g> = <w, W> for every w."""
    return _kgrad_geo(x, g, geo)


def _kgrad_geo(x: Tensor, g: Tensor, geo: ConvGeometry) -> Tensor:
    def vjp(h, out):
        gx = _conv_t_geo(g, h, geo) if x.requires_grad else None
        gg = _conv_geo(x, h, geo) if g.requires_grad else None
        return gx, gg

    return make_op(_conv_adj_kernel(x.data, g.data, geo), (x, g), vjp, "conv2d_kernel_grad")
