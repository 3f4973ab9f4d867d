"""Forward ops with their backward rules.

Elementwise binary ops follow numpy broadcasting; gradients are summed back to
each input's shape. Reductions accumulate in float64 and round once to float32
so results do not depend on summation blocking.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import DTYPE, Function, Tensor


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise arithmetic -------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    name = "div"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -g * self.a / (self.b * self.b)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class AddScalar(Function):
    name = "add_scalar"

    def forward(self, a, value: float = 0.0):
        return a + DTYPE(value)

    def backward(self, g):
        return (g,)


class MulScalar(Function):
    name = "mul_scalar"

    def forward(self, a, value: float = 1.0):
        self.value = DTYPE(value)
        return a * self.value

    def backward(self, g):
        return (g * self.value,)


class PowScalar(Function):
    name = "pow_scalar"

    def forward(self, a, exponent: float = 2.0):
        self.a, self.p = a, exponent
        return np.power(a, DTYPE(exponent))

    def backward(self, g):
        return (g * DTYPE(self.p) * np.power(self.a, DTYPE(self.p - 1.0)),)


# --- unary nonlinearities ---------------------------------------------------


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    name = "log"

    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


class SafeSqrt(Function):
    """sqrt(max(x, 0)) whose gradient is zero below ``floor``."""

    name = "safe_sqrt"

    def forward(self, a, floor: float = 1e-12):
        self.out = np.sqrt(np.maximum(a, 0.0))
        self.live = a >= floor
        return self.out

    def backward(self, g):
        safe = np.where(self.live, self.out, 1.0)
        return (np.where(self.live, g * 0.5 / safe, 0.0),)


class Sin(Function):
    name = "sin"

    def forward(self, a):
        self.a = a
        return np.sin(a)

    def backward(self, g):
        return (g * np.cos(self.a),)


class Cos(Function):
    name = "cos"

    def forward(self, a):
        self.a = a
        return np.cos(a)

    def backward(self, g):
        return (-g * np.sin(self.a),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        # Split by sign so exp never overflows.
        e = np.exp(-np.abs(a))
        self.out = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(DTYPE)
        return self.out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class Elu(Function):
    name = "elu"

    def forward(self, a, alpha: float = 1.0):
        self.pos = a > 0
        self.alpha = DTYPE(alpha)
        self.neg_branch = self.alpha * np.expm1(np.minimum(a, 0.0))
        return np.where(self.pos, a, self.neg_branch)

    def backward(self, g):
        return (g * np.where(self.pos, 1.0, self.neg_branch + self.alpha),)


class ClampMin(Function):
    """max(x, floor); the clamped branch passes no gradient."""

    name = "clamp_min"

    def forward(self, a, floor: float = 0.0):
        self.live = a >= floor
        return np.maximum(a, DTYPE(floor))

    def backward(self, g):
        return (np.where(self.live, g, 0.0),)


# --- reductions and shape ops -----------------------------------------------


class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None, keepdims: bool = False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64).astype(DTYPE)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.shape).astype(DTYPE),)


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape=()):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


class Narrow(Function):
    """Contiguous slice ``[start, start + length)`` along one axis."""

    name = "narrow"

    def forward(self, a, axis: int = 0, start: int = 0, length: int = 1):
        if start < 0 or length < 1 or start + length > a.shape[axis]:
            raise ValueError(f"narrow [{start}, {start + length}) outside axis extent {a.shape[axis]}")
        self.shape, self.index = a.shape, [slice(None)] * a.ndim
        self.index[axis] = slice(start, start + length)
        self.index = tuple(self.index)
        return a[self.index].copy()

    def backward(self, g):
        out = np.zeros(self.shape, dtype=DTYPE)
        out[self.index] = g
        return (out,)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis: int = 0):
        ref = arrays[0]
        ax = axis % ref.ndim
        for a in arrays[1:]:
            if a.ndim != ref.ndim or any(a.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
                raise ValueError(f"concat: shapes {ref.shape} and {a.shape} disagree off axis {axis}")
        self.axis = ax
        self.bounds = np.cumsum([a.shape[ax] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=ax)

    def backward(self, g):
        return tuple(np.split(g, self.bounds, axis=self.axis))


class MaskedSelect(Function):
    name = "masked_select"

    def forward(self, a, mask=None):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ValueError(f"mask shape {mask.shape} does not match tensor shape {a.shape}")
        self.mask, self.shape = mask, a.shape
        return a[mask]

    def backward(self, g):
        out = np.zeros(self.shape, dtype=DTYPE)
        out[self.mask] = g
        return (out,)


# --- spatial ops ------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


class Conv2d(Function):
    """Zero-padded cross-correlation, implemented as im2col + one GEMM.

    Columns are laid out as (Cin, kh, kw, B, H', W') so the whole batch is a
    single matrix product with the (Cout, Cin*kh*kw) weight matrix.
    """

    name = "conv2d"

    def forward(self, x, w, b=None, stride: int = 1, dilation: int = 1, padding: int = 0):
        if x.ndim != 4 or w.ndim != 4:
            raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
        B, C, H, W = x.shape
        O, Cw, kh, kw = w.shape
        if Cw != C:
            raise ValueError(f"conv2d: input has {C} channels but weight expects {Cw}")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
        if b is not None and b.shape != (O,):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match {O} output channels")
        if stride < 1 or dilation < 1 or padding < 0:
            raise ValueError("conv2d: stride and dilation must be >= 1 and padding >= 0")
        Ho = conv_output_size(H, kh, stride, dilation, padding)
        Wo = conv_output_size(W, kw, stride, dilation, padding)
        if Ho < 1 or Wo < 1:
            raise ValueError(f"conv2d: non-positive output extent {Ho}x{Wo}")

        p = padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=DTYPE)
        for i in range(kh):
            r0 = i * dilation
            for j in range(kw):
                c0 = j * dilation
                patch = xp[:, :, r0:r0 + stride * (Ho - 1) + 1:stride, c0:c0 + stride * (Wo - 1) + 1:stride]
                cols[:, i, j] = patch.transpose(1, 0, 2, 3)
        cols2 = cols.reshape(C * kh * kw, B * Ho * Wo)
        w2 = w.reshape(O, -1)
        out = (w2 @ cols2).reshape(O, B, Ho, Wo)
        if b is not None:
            out += b[:, None, None, None]

        self.cols, self.w, self.has_bias = cols2, w, b is not None
        self.geom = (x.shape, xp.shape, stride, dilation, padding, Ho, Wo)
        return out.transpose(1, 0, 2, 3)

    def backward(self, g):
        (B, C, H, W), padded, stride, dilation, p, Ho, Wo = self.geom
        O, _, kh, kw = self.w.shape
        g2 = g.transpose(1, 0, 2, 3).reshape(O, B * Ho * Wo)
        gw = (g2 @ self.cols.T).reshape(self.w.shape)
        dcols = (self.w.reshape(O, -1).T @ g2).reshape(C, kh, kw, B, Ho, Wo)
        gxp = np.zeros(padded, dtype=DTYPE)
        for i in range(kh):
            r0 = i * dilation
            for j in range(kw):
                c0 = j * dilation
                gxp[:, :, r0:r0 + stride * (Ho - 1) + 1:stride, c0:c0 + stride * (Wo - 1) + 1:stride] += (
                    dcols[:, i, j].transpose(1, 0, 2, 3)
                )
        gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if self.has_bias:
            grads.append(np.sum(g, axis=(0, 2, 3), dtype=np.float64).astype(DTYPE))
        return tuple(grads)


class NearestUpsample(Function):
    name = "nearest_upsample"

    def forward(self, x, factor: int = 2):
        if factor < 1:
            raise ValueError(f"upsample factor must be >= 1, got {factor}")
        self.factor = factor
        if factor == 1:
            return x.copy()
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, g):
        f = self.factor
        if f == 1:
            return (g,)
        B, C, H, W = g.shape
        return (g.reshape(B, C, H // f, f, W // f, f).sum(axis=(3, 5)),)


class DownsampleNearest(Function):
    """Keeps the top-left element of every ``factor x factor`` block."""

    name = "downsample_nearest"

    def forward(self, x, factor: int = 2):
        if factor < 1 or x.shape[2] % factor or x.shape[3] % factor:
            raise ValueError(f"factor {factor} does not divide spatial extents {x.shape[2:]}")
        self.shape, self.factor = x.shape, factor
        return x[:, :, ::factor, ::factor].copy()

    def backward(self, g):
        out = np.zeros(self.shape, dtype=DTYPE)
        out[:, :, ::self.factor, ::self.factor] = g
        return (out,)


# Row (or column) tap folding for a 3x3 kernel applied after x2 nearest
# upsampling: for output parity a, original tap i lands on low-res tap _FOLD[a][:, i].
_FOLD = np.array(
    [
        [[1, 0, 0], [0, 1, 1], [0, 0, 0]],
        [[0, 0, 0], [1, 1, 0], [0, 0, 1]],
    ],
    dtype=DTYPE,
)


class Upconv2d(Function):
    """``conv2d(nearest_upsample(x, 2), w, b, padding=1)`` for 3x3 ``w``, computed at low resolution.

    Each of the four output parities sees a fixed folding of the kernel onto
    the low-resolution grid, so one 3x3 convolution with 4*Cout folded filters
    followed by a pixel interleave gives the exact result.
    """

    name = "upconv2d"

    def forward(self, x, w, b=None):
        if w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ValueError(f"upconv2d expects a 3x3 kernel, got weight shape {w.shape}")
        B, _, h, wd = x.shape
        O = w.shape[0]
        folded = np.einsum("ari,ocij,bsj->abocrs", _FOLD, w, _FOLD, optimize=True).reshape(4 * O, w.shape[1], 3, 3)
        self.inner = Conv2d()
        low = self.inner.forward(x, np.ascontiguousarray(folded), None, stride=1, dilation=1, padding=1)
        out = low.reshape(B, 2, 2, O, h, wd).transpose(0, 3, 4, 1, 5, 2).reshape(B, O, 2 * h, 2 * wd)
        if b is not None:
            out = out + b[None, :, None, None]
        self.O, self.has_bias = O, b is not None
        return out

    def backward(self, g):
        B, O, H2, W2 = g.shape
        h, wd = H2 // 2, W2 // 2
        g_low = g.reshape(B, O, h, 2, wd, 2).transpose(0, 3, 5, 1, 2, 4).reshape(B, 4 * O, h, wd)
        gx, g_folded = self.inner.backward(np.ascontiguousarray(g_low))
        g_folded = g_folded.reshape(2, 2, O, -1, 3, 3)
        gw = np.einsum("ari,abocrs,bsj->ocij", _FOLD, g_folded, _FOLD, optimize=True)
        grads = [gx, gw]
        if self.has_bias:
            grads.append(np.sum(g, axis=(0, 2, 3), dtype=np.float64).astype(DTYPE))
        return tuple(grads)


# --- functional wrappers ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return Div.apply(a, b)


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def add_scalar(a: Tensor, value: float) -> Tensor:
    return AddScalar.apply(a, value=value)


def mul_scalar(a: Tensor, value: float) -> Tensor:
    return MulScalar.apply(a, value=value)


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    return PowScalar.apply(a, exponent=exponent)


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


def safe_sqrt(a: Tensor, floor: float = 1e-12) -> Tensor:
    return SafeSqrt.apply(a, floor=floor)


def sin(a: Tensor) -> Tensor:
    return Sin.apply(a)


def cos(a: Tensor) -> Tensor:
    return Cos.apply(a)


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(a)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    return Elu.apply(a, alpha=alpha)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    return ClampMin.apply(a, floor=floor)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor) -> Tensor:
    return mul_scalar(sum(a), 1.0 / a.size)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    return Narrow.apply(a, axis=axis, start=start, length=length)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    return Concat.apply(*tensors, axis=axis)


def masked_select(a: Tensor, mask: np.ndarray) -> Tensor:
    return MaskedSelect.apply(a, mask=mask)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*inputs, stride=stride, dilation=dilation, padding=padding)


def upconv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    return Upconv2d.apply(*((x, weight) if bias is None else (x, weight, bias)))


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    return NearestUpsample.apply(x, factor=factor)


def downsample_nearest(x: Tensor, factor: int) -> Tensor:
    return DownsampleNearest.apply(x, factor=factor)
