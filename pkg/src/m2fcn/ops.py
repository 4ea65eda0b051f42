"""Differentiable building blocks on channels x height x width maps.

Convolution is cross-correlation (no kernel flip) plus bias. Upsampling is a
fixed-weight transposed convolution with a bilinear kernel applied per
channel. All ops are exact float64 and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _result, trace_pool_windows, trace_relu

__all__ = [
    "ConvParams",
    "conv2d",
    "maxpool2",
    "upsample",
    "bilinear_kernel",
    "concat_channels",
    "relu",
    "sigmoid",
    "pointwise",
]


@dataclass
class ConvParams:
    """Weights of one convolution layer.

    weight: (out_channels, in_channels, k, k); bias: (out_channels,).
    padding None selects "same" mode (odd kernels only).
    """

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int | None = None

    def apply(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | None = None,
) -> Tensor:
    """Cross-correlate a CxHxW map with OxCxkHxkW filters.

    Output spatial extent is floor((in + 2*pad - k) / stride) + 1 per axis.
    ``padding=None`` means "same" (requires odd kernels and stride 1 to
    actually preserve the extent; the padding amount is (k - 1) // 2 either
    way).
    """
    if x.data.ndim != 3:
        raise ValueError(f"conv2d input must be CxHxW, got shape {x.shape}")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d weight must be OxCxKhxKw, got {weight.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cx, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != cx:
        raise ValueError(f"conv2d channel mismatch: input has {cx}, weight expects {ci}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"bias shape {bias.shape} does not match {o} filters")
    if padding is None:
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("same padding needs odd kernels")
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        if padding < 0:
            raise ValueError("padding must be >= 0")
        ph = pw = padding
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(
            f"kernel {kh}x{kw} with padding {ph} exceeds input {h}x{w}"
        )

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = np.empty((cx, kh, kw, ho, wo))
    for ki in range(kh):
        for kj in range(kw):
            cols[:, ki, kj] = xp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
    cols2 = cols.reshape(cx * kh * kw, ho * wo)
    wmat = weight.data.reshape(o, cx * kh * kw)
    out = wmat @ cols2
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(o, ho, wo)

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = _result(out, parents)
    if res.requires_grad:

        def _bw():
            g = res.grad.reshape(o, ho * wo)
            if weight.requires_grad:
                weight.grad += (g @ cols2.T).reshape(weight.shape)
            if bias is not None and bias.requires_grad:
                bias.grad += g.sum(axis=1)
            if x.requires_grad:
                dcols = (wmat.T @ g).reshape(cx, kh, kw, ho, wo)
                dxp = np.zeros((cx, h + 2 * ph, w + 2 * pw))
                for ki in range(kh):
                    for kj in range(kw):
                        dxp[
                            :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride
                        ] += dcols[:, ki, kj]
                x.grad += dxp[:, ph : ph + h, pw : pw + w]

        res._backward = _bw
    return res


def maxpool2(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; odd extents replicate the last row/column.

    Ties route the gradient to the first maximal element in row-major
    window order.
    """
    if x.data.ndim != 3 or x.data.size == 0:
        raise ValueError(f"maxpool2 input must be a nonempty CxHxW map, got {x.shape}")
    c, h, w = x.shape
    ph, pw = h % 2, w % 2
    xp = np.pad(x.data, ((0, 0), (0, ph), (0, pw)), mode="edge") if (ph or pw) else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    h2, w2 = hp // 2, wp // 2
    windows = xp.reshape(c, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    trace_pool_windows(windows)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    res = _result(out, (x,))
    if res.requires_grad:

        def _bw():
            dwin = np.zeros_like(windows)
            np.put_along_axis(dwin, idx[..., None], res.grad[..., None], axis=-1)
            dxp = dwin.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, hp, wp)
            dx = dxp[:, :h, :w].copy()
            # Fold gradients of replicated cells back onto their source.
            if ph:
                dx[:, h - 1, :] += dxp[:, h, :w]
            if pw:
                dx[:, :, w - 1] += dxp[:, :h, w]
            if ph and pw:
                dx[:, h - 1, w - 1] += dxp[:, h, w]
            x.grad += dx

        res._backward = _bw
    return res


def bilinear_kernel(factor: int) -> np.ndarray:
    """1D interpolation kernel of size 2*factor - factor % 2."""
    k = 2 * factor - factor % 2
    center = (k - 1) / 2.0
    return 1.0 - np.abs(np.arange(k) - center) / factor


def upsample(
    x: Tensor,
    factor: int,
    weight: Tensor | None = None,
    out_hw: tuple[int, int] | None = None,
) -> Tensor:
    """Upsample each channel by an integer factor via transposed convolution.

    The default kernel is the fixed bilinear one (outer product of
    ``bilinear_kernel``). Interior values interpolate exactly; borders decay
    because the implicit padding is zero. ``out_hw`` crops the top-left
    corner of the result, which undoes the replication padding a pooling
    ladder may have added. Pass an unfrozen (k, k) weight tensor to make the
    kernel learnable.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if x.data.ndim != 3:
        raise ValueError(f"upsample input must be CxHxW, got {x.shape}")
    c, h, w = x.shape
    k = 2 * factor - factor % 2
    pad = (k - factor) // 2
    if weight is None:
        k1 = bilinear_kernel(factor)
        weight = Tensor(np.outer(k1, k1), requires_grad=False, name="bilinear_kernel")
    elif weight.shape != (k, k):
        raise ValueError(f"upsample weight must be {(k, k)} for factor {factor}")

    full_h, full_w = (h - 1) * factor + k, (w - 1) * factor + k
    wd = weight.data
    full = np.zeros((c, full_h, full_w))
    for ki in range(k):
        for kj in range(k):
            full[:, ki : ki + factor * (h - 1) + 1 : factor, kj : kj + factor * (w - 1) + 1 : factor] += (
                wd[ki, kj] * x.data
            )
    th, tw = out_hw if out_hw is not None else (h * factor, w * factor)
    if th < 1 or tw < 1 or th > h * factor or tw > w * factor:
        raise ValueError(f"crop target {(th, tw)} outside upsampled extent {(h * factor, w * factor)}")
    y = np.ascontiguousarray(full[:, pad : pad + th, pad : pad + tw])

    res = _result(y, (x, weight))
    if res.requires_grad:

        def _bw():
            gfull = np.zeros((c, full_h, full_w))
            gfull[:, pad : pad + th, pad : pad + tw] = res.grad
            if x.requires_grad:
                dx = np.zeros_like(x.data)
                for ki in range(k):
                    for kj in range(k):
                        dx += wd[ki, kj] * gfull[
                            :, ki : ki + factor * (h - 1) + 1 : factor, kj : kj + factor * (w - 1) + 1 : factor
                        ]
                x.grad += dx
            if weight.requires_grad:
                dw = np.empty((k, k))
                for ki in range(k):
                    for kj in range(k):
                        dw[ki, kj] = np.sum(
                            x.data
                            * gfull[:, ki : ki + factor * (h - 1) + 1 : factor, kj : kj + factor * (w - 1) + 1 : factor]
                        )
                weight.grad += dw

        res._backward = _bw
    return res


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Stack maps along the channel axis; spatial extents must agree."""
    if not parts:
        raise ValueError("concat_channels needs at least one input")
    hw = parts[0].shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.shape[1:] != hw:
            raise ValueError(
                f"concat_channels spatial mismatch: {[p.shape for p in parts]}"
            )
    out = np.concatenate([p.data for p in parts], axis=0)
    res = _result(out, tuple(parts))
    if res.requires_grad:

        def _bw():
            offset = 0
            for p in parts:
                n = p.shape[0]
                if p.requires_grad:
                    p.grad += res.grad[offset : offset + n]
                offset += n

        res._backward = _bw
    return res


def relu(x: Tensor) -> Tensor:
    trace_relu(x.data)
    res = _result(np.maximum(x.data, 0.0), (x,))
    if res.requires_grad:
        mask = x.data > 0.0

        def _bw():
            x.grad += res.grad * mask

        res._backward = _bw
    return res


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    res = _result(y, (x,))
    if res.requires_grad:

        def _bw():
            x.grad += res.grad * y * (1.0 - y)

        res._backward = _bw
    return res


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")
