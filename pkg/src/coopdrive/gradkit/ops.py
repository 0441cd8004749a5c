"""Differentiable operations over :class:`Tensor`.

Broadcasting is limited to bias-style addition: an operand may be a scalar or
have a shape equal to a trailing suffix of the other operand's shape.
"""
from __future__ import annotations

import numpy as np

from .tensor import DimensionError, NumericError, Tensor, as_tensor, make_node


def _check_bias_shapes(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) and long_[len(long_) - len(short):] == short:
        return
    raise DimensionError(f"{op}: shapes {sa} and {sb} are not bias-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _operands(a, b):
    """Python scalars take the dtype of the tensor operand so float32 graphs stay float32."""
    if np.isscalar(a) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif np.isscalar(b) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_bias_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_bias_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_bias_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_node(ad * bd, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_bias_shapes(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_node(out, (a, b), back)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(np.log(xd), (x,), lambda g: (g / xd,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out * out),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _operands(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return make_node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for x of shape (N, in) and weight (in, out)."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, dtype=np.float64).astype(x.dtype)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_node(np.asarray(out), (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: list, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(out, tuple(tensors), back)


def minimum(a, b) -> Tensor:
    a, b = _operands(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"minimum: shapes {a.shape} and {b.shape} differ")
    pick_a = a.data <= b.data
    return make_node(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def maximum(a, b) -> Tensor:
    a, b = _operands(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"maximum: shapes {a.shape} and {b.shape} differ")
    pick_a = a.data >= b.data
    return make_node(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def clip(x: Tensor, lo, hi) -> Tensor:
    """Clamp to constant bounds (scalars or arrays); gradient passes inside the band."""
    lo = np.asarray(lo.data if isinstance(lo, Tensor) else lo)
    hi = np.asarray(hi.data if isinstance(hi, Tensor) else hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi).astype(x.dtype), (x,), lambda g: (g * inside,))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("log_softmax: non-finite logits")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return make_node(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis))


def pick(x: Tensor, index) -> Tensor:
    """Select ``x[i, index[i]]`` from a 2-D tensor."""
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise DimensionError(f"pick: need (N,K) tensor and N indices, got {x.shape} and {idx.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[rows, idx] = g
        return (full,)

    return make_node(x.data[rows, idx], (x,), back)


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is (C_in, H, W) or batched (N, C_in, H, W); ``weight`` is
    (C_out, C_in, kH, kW); optional ``bias`` is (C_out,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected (N,C,H,W) input and 4-D weight, got {x.shape}, {weight.shape}")
    n, c_in, h, w = xd.shape
    c_out, wc_in, kh, kw = weight.shape
    if wc_in != c_in:
        raise DimensionError(f"conv2d: input channel axis has {c_in}, weight axis 1 has {wc_in}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel ({kh},{kw}) exceeds padded input ({h + 2 * padding},{w + 2 * padding})")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    wshape = weight.shape
    if stride == kh == kw and padding == 0 and h == ho * kh and w == wo * kw:
        out, back = _conv_tiled(xd, weight.data, x.requires_grad)
    else:
        out, back = _conv_shifted(xd, weight.data, stride, padding, ho, wo, x.requires_grad)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)
    out = np.ascontiguousarray(out)
    if unbatched:
        out = out[0]

    def back_all(g):
        g4 = g[None] if unbatched else g
        gx, gw = back(g4)
        if gx is not None:
            gx = (gx[0] if unbatched else gx).reshape(x.shape)
        grads = [gx, gw.reshape(wshape)]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    return make_node(out, parents, back_all)


def _conv_tiled(xd, wd, need_gx):
    """Non-overlapping windows (stride == kernel, no padding): a reshape gives the patches."""
    n, c_in, h, w = xd.shape
    c_out, _, kh, kw = wd.shape
    ho, wo = h // kh, w // kw
    cols = xd.reshape(n, c_in, ho, kh, wo, kw).transpose(0, 2, 4, 1, 3, 5).reshape(n * ho * wo, -1)
    wmat = wd.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        gw = gmat.T @ cols
        gx = None
        if need_gx:
            gx = (gmat @ wmat).reshape(n, ho, wo, c_in, kh, kw).transpose(0, 3, 1, 4, 2, 5).reshape(xd.shape)
        return gx, gw

    return out, back


def _conv_shifted(xd, wd, stride, padding, ho, wo, need_gx):
    """Sum over kernel offsets of (C_out, C_in) matrix products on strided views.

    Works channel-major so no (N*Ho*Wo, C_in*kH*kW) patch matrix is ever built.
    """
    n, c_in, h, w = xd.shape
    c_out, _, kh, kw = wd.shape
    xc = np.zeros((c_in, n, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
    xc[:, :, padding:padding + h, padding:padding + w] = xd.transpose(1, 0, 2, 3)

    def view(a, i, j):
        return a[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]

    dtype = np.result_type(xd.dtype, wd.dtype)
    out = np.zeros((c_out, n * ho * wo), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            out += wd[:, :, i, j] @ view(xc, i, j).reshape(c_in, -1)
    out = out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)

    def back(g):
        gc = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
        gw = np.empty(wd.shape, dtype=g.dtype)
        gxc = np.zeros(xc.shape, dtype=g.dtype) if need_gx else None
        for i in range(kh):
            for j in range(kw):
                gw[:, :, i, j] = gc @ view(xc, i, j).reshape(c_in, -1).T
                if need_gx:
                    view(gxc, i, j)[...] += (wd[:, :, i, j].T @ gc).reshape(c_in, n, ho, wo)
        gx = None
        if need_gx:
            gx = gxc[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)
        return gx, gw

    return out, back
