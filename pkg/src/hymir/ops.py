"""Primitive differentiable operators.

Every function here follows the same shape: compute the forward result with
numpy, and if anything on the active tape needs gradients, close over the
saved values and register a vector-Jacobian product. The VJPs are written by
hand; tests/test_ops.py checks each one against central finite differences.

Convolution convention is cross-correlation (no kernel flip). Normalization
epsilon is 1e-5 everywhere. GELU is the tanh approximation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, Record, Tensor, active_tape, as_tensor, finite_checks_enabled

NORM_EPS = 1e-5

_GELU_K = float(np.sqrt(2.0 / np.pi))
_GELU_C = 0.044715


def _will_record(*tensors) -> bool:
    if active_tape() is None:
        return False
    return any(t.requires_grad for t in tensors if isinstance(t, Tensor))


def _apply(name, out, inputs, vjp):
    """Wrap raw output array(s) into Tensor(s), recording vjp if given."""
    multi = isinstance(out, tuple)
    outs = out if multi else (out,)
    if finite_checks_enabled():
        for o in outs:
            if not np.all(np.isfinite(o)):
                raise NonFiniteError(f"non-finite values in output of {name}")
    rec = vjp is not None
    out_tensors = tuple(Tensor(o, requires_grad=rec) for o in outs)
    if rec:
        active_tape().record(Record(name, out_tensors, tuple(inputs), vjp))
    return out_tensors if multi else out_tensors[0]


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back down to the given shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    vjp = None
    if _will_record(a, b):
        ash, bsh = a.shape, b.shape

        def vjp(gs):
            (g,) = gs
            return _sum_to(g, ash), _sum_to(g, bsh)

    return _apply("add", out, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    vjp = None
    if _will_record(a, b):
        ash, bsh = a.shape, b.shape

        def vjp(gs):
            (g,) = gs
            return _sum_to(g, ash), _sum_to(-g, bsh)

    return _apply("sub", out, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    vjp = None
    if _will_record(a, b):
        ad, bd = a.data, b.data

        def vjp(gs):
            (g,) = gs
            return _sum_to(g * bd, ad.shape), _sum_to(g * ad, bd.shape)

    return _apply("mul", out, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    vjp = None
    if _will_record(a):

        def vjp(gs):
            return (-gs[0],)

    return _apply("neg", -a.data, (a,), vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    vjp = None
    if _will_record(a):

        def vjp(gs):
            return (gs[0] * out,)

    return _apply("exp", out, (a,), vjp)


def absolute(a):
    a = as_tensor(a)
    out = np.abs(a.data)
    vjp = None
    if _will_record(a):
        s = np.sign(a.data)

        def vjp(gs):
            return (gs[0] * s,)

    return _apply("absolute", out, (a,), vjp)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    vjp = None
    if _will_record(a):

        def vjp(gs):
            return (gs[0] * (1.0 - out * out),)

    return _apply("tanh", out, (a,), vjp)


def _sigmoid(x):
    # tanh form is stable for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    vjp = None
    if _will_record(a):

        def vjp(gs):
            return (gs[0] * out * (1.0 - out),)

    return _apply("sigmoid", out, (a,), vjp)


def gelu(a):
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_K * (x + _GELU_C * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)
    vjp = None
    if _will_record(a):

        def vjp(gs):
            du = _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
            return (gs[0] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _apply("gelu", out, (a,), vjp)


def silu(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s
    vjp = None
    if _will_record(a):
        x = a.data

        def vjp(gs):
            return (gs[0] * (s + x * s * (1.0 - s)),)

    return _apply("silu", out, (a,), vjp)


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    vjp = None
    if _will_record(a):
        s = _sigmoid(a.data)

        def vjp(gs):
            return (gs[0] * s,)

    return _apply("softplus", out, (a,), vjp)


# ---------------------------------------------------------------------------
# Linear algebra and shape


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires ndim >= 2, got {a.ndim} and {b.ndim}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    vjp = None
    if _will_record(a, b):
        ad, bd = a.data, b.data

        def vjp(gs):
            (g,) = gs
            ga = _sum_to(g @ np.swapaxes(bd, -1, -2), ad.shape)
            gb = _sum_to(np.swapaxes(ad, -1, -2) @ g, bd.shape)
            return ga, gb

    return _apply("matmul", out, (a, b), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    vjp = None
    if _will_record(a):
        orig = a.shape

        def vjp(gs):
            return (gs[0].reshape(orig),)

    return _apply("reshape", out, (a,), vjp)


def transpose(a, axes):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    vjp = None
    if _will_record(a):
        inv = tuple(np.argsort(axes))

        def vjp(gs):
            return (np.transpose(gs[0], inv),)

    return _apply("transpose", out, (a,), vjp)


def flip(a, axis):
    a = as_tensor(a)
    out = np.flip(a.data, axis).copy()
    vjp = None
    if _will_record(a):

        def vjp(gs):
            return (np.flip(gs[0], axis),)

    return _apply("flip", out, (a,), vjp)


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    vjp = None
    if _will_record(*ts):
        sizes = [t.shape[axis] for t in ts]
        splits = np.cumsum(sizes)[:-1]

        def vjp(gs):
            return tuple(np.split(gs[0], splits, axis=axis))

    return _apply("concat", out, tuple(ts), vjp)


def narrow(a, axis, start, size):
    """Slice size elements from start along one axis."""
    a = as_tensor(a)
    if start < 0 or start + size > a.shape[axis]:
        raise ValueError(f"narrow [{start}:{start + size}] out of range for axis {axis} with extent {a.shape[axis]}")
    idx = (slice(None),) * (axis % a.ndim) + (slice(start, start + size),)
    out = a.data[idx].copy()
    vjp = None
    if _will_record(a):
        full = a.shape

        def vjp(gs):
            gx = np.zeros(full, dtype=gs[0].dtype)
            gx[idx] = gs[0]
            return (gx,)

    return _apply("narrow", out, (a,), vjp)


def sum(a, axis=None, keepdims=False):  # noqa: A001 shadows builtins.sum inside this module only
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    out = np.asarray(out)
    vjp = None
    if _will_record(a):
        vjp = _reduce_vjp(a.shape, axis, keepdims, scale=1.0)
    return _apply("sum", out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.asarray(np.mean(a.data, axis=axis, keepdims=keepdims))
    vjp = None
    if _will_record(a):
        count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
        vjp = _reduce_vjp(a.shape, axis, keepdims, scale=1.0 / float(count))
    return _apply("mean", out, (a,), vjp)


def _reduce_vjp(shape, axis, keepdims, scale):
    def vjp(gs):
        g = gs[0] * scale if scale != 1.0 else gs[0]
        if axis is None:
            return (np.broadcast_to(g, shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return vjp


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    vjp = None
    if _will_record(a):

        def vjp(gs):
            g = gs[0]
            return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _apply("softmax", out, (a,), vjp)


# ---------------------------------------------------------------------------
# Normalization


def layer_norm(x, gamma, beta, axis=-1, eps=NORM_EPS):
    """Normalize along one axis with per-element affine on that axis."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.size != c or beta.size != c:
        raise ValueError(f"layer_norm affine size {gamma.size}/{beta.size} does not match normalized extent {c}")
    bshape = [1] * x.ndim
    bshape[axis] = c
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=axis, keepdims=True)
    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivstd
    gr = gamma.data.reshape(bshape)
    out = xhat * gr + beta.data.reshape(bshape)
    vjp = None
    if _will_record(x, gamma, beta):
        red = tuple(i for i in range(x.ndim) if i != axis)

        def vjp(gs):
            g = gs[0]
            gxhat = g * gr
            gx = ivstd * (
                gxhat
                - np.mean(gxhat, axis=axis, keepdims=True)
                - xhat * np.mean(gxhat * xhat, axis=axis, keepdims=True)
            )
            ggamma = np.sum(g * xhat, axis=red).reshape(gamma.shape)
            gbeta = np.sum(g, axis=red).reshape(beta.shape)
            return gx, ggamma, gbeta

    return _apply("layer_norm", out, (x, gamma, beta), vjp)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    counter: np.ndarray,
    momentum: float = 0.1,
    eps: float = NORM_EPS,
):
    """Batch normalization over (N, H, W) per channel of an NCHW tensor.

    running_mean/var/counter are plain numpy buffers owned by the caller;
    training mode updates them in place (counter tracks batches seen, and
    eval mode refuses to run until it is at least 1).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ValueError(f"batch_norm expects NCHW input, got ndim {x.ndim}")
    ch = x.shape[1]
    if gamma.size != ch or beta.size != ch:
        raise ValueError(f"batch_norm affine size {gamma.size}/{beta.size} does not match channels {ch}")
    axes = (0, 2, 3)
    bshape = (1, ch, 1, 1)
    gr = gamma.data.reshape(bshape)

    if training:
        n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(bshape)
        var = np.mean(xc * xc, axis=axes)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        counter += 1
        ivstd = 1.0 / np.sqrt(var.reshape(bshape) + eps)
        xhat = xc * ivstd
        out = xhat * gr + beta.data.reshape(bshape)
        vjp = None
        if _will_record(x, gamma, beta):

            def vjp(gs):
                g = gs[0]
                gxhat = g * gr
                gvar = np.sum(gxhat * xc, axis=axes, keepdims=True) * (-0.5) * ivstd**3
                gmu = -np.sum(gxhat, axis=axes, keepdims=True) * ivstd + gvar * np.mean(
                    -2.0 * xc, axis=axes, keepdims=True
                )
                gx = gxhat * ivstd + gvar * (2.0 / n) * xc + gmu / n
                ggamma = np.sum(g * xhat, axis=axes).reshape(gamma.shape)
                gbeta = np.sum(g, axis=axes).reshape(beta.shape)
                return gx, ggamma, gbeta

        return _apply("batch_norm", out, (x, gamma, beta), vjp)

    if int(counter) < 1:
        raise RuntimeError("batch_norm eval mode without populated running statistics; train first or load a checkpoint")
    ivstd = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
    xhat = (x.data - running_mean.reshape(bshape)) * ivstd
    out = xhat * gr + beta.data.reshape(bshape)
    vjp = None
    if _will_record(x, gamma, beta):

        def vjp(gs):
            g = gs[0]
            gx = g * gr * ivstd
            ggamma = np.sum(g * xhat, axis=axes).reshape(gamma.shape)
            gbeta = np.sum(g, axis=axes).reshape(beta.shape)
            return gx, ggamma, gbeta

    return _apply("batch_norm", out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# Convolution


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0):
    """2D cross-correlation, NCHW input, OIHW weight, square odd kernel."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4D input and weight, got {x.ndim}D and {w.ndim}D")
    bsz, cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if k != k2:
        raise ValueError(f"conv2d kernel must be square, got {k}x{k2}")
    if k % 2 != 1:
        raise ValueError(f"conv2d kernel size must be odd, got k={k}")
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input has C_in={cin}, weight expects C_in={cin_w}")
    if b is not None and b.size != cout:
        raise ValueError(f"conv2d bias size {b.size} does not match C_out={cout}")
    s, p = int(stride), int(padding)
    if (h + 2 * p - k) % s != 0 or (wd + 2 * p - k) % s != 0:
        raise ValueError(
            f"conv2d output extent not integral: (H,W)=({h},{wd}), k={k}, padding={p}, stride={s} "
            f"gives ({h + 2 * p - k}/{s}+1, {wd + 2 * p - k}/{s}+1)"
        )
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output extent not positive: ({ho},{wo})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, cin * k * k)
    wf = w.data.reshape(cout, -1)
    y = cols @ wf.T
    if b is not None:
        y = y + b.data
    out = y.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)

    inputs = (x, w) if b is None else (x, w, b)
    vjp = None
    if _will_record(*inputs):
        hp, wp = xp.shape[2], xp.shape[3]

        def vjp(gs):
            g = gs[0]
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
            gw = (g2.T @ cols).reshape(w.shape)
            gcols = (g2 @ wf).reshape(bsz, ho, wo, cin, k, k)
            gxp = np.zeros((bsz, cin, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
            if b is None:
                return gx, gw
            return gx, gw, g2.sum(axis=0).reshape(b.shape)

    return _apply("conv2d", out, inputs, vjp)


def depthwise_conv2d(x, w, b=None, padding: int = 0):
    """Per-channel 2D cross-correlation: weight (C, 1, k, k), stride 1."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"depthwise_conv2d expects 4D input and weight, got {x.ndim}D and {w.ndim}D")
    bsz, ch, h, wd = x.shape
    cw, one, k, k2 = w.shape
    if one != 1:
        raise ValueError(f"depthwise weight must have exactly one filter per input channel, got shape {tuple(w.shape)}")
    if cw != ch:
        raise ValueError(f"depthwise channel mismatch: input has C={ch}, weight has C={cw}")
    if k != k2 or k % 2 != 1:
        raise ValueError(f"depthwise kernel must be square and odd, got {k}x{k2}")
    if b is not None and b.size != ch:
        raise ValueError(f"depthwise bias size {b.size} does not match C={ch}")
    p = int(padding)
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"depthwise output extent not positive: ({ho},{wo})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    wk = w.data[:, 0]
    out = np.einsum("bchwij,cij->bchw", win, wk, optimize=True)
    if b is not None:
        out = out + b.data.reshape(1, ch, 1, 1)

    inputs = (x, w) if b is None else (x, w, b)
    vjp = None
    if _will_record(*inputs):

        def vjp(gs):
            g = gs[0]
            gw = np.einsum("bchw,bchwij->cij", g, win, optimize=True).reshape(w.shape)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + ho, j : j + wo] += g * wk[:, i, j].reshape(1, ch, 1, 1)
            gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
            if b is None:
                return gx, gw
            return gx, gw, g.sum(axis=(0, 2, 3)).reshape(b.shape)

    return _apply("depthwise_conv2d", out, inputs, vjp)


def pointwise_conv2d(x, w, b=None):
    w = as_tensor(w)
    if w.ndim != 4 or w.shape[2] != 1 or w.shape[3] != 1:
        raise ValueError(f"pointwise_conv2d weight must be (C_out, C_in, 1, 1), got {tuple(w.shape)}")
    return conv2d(x, w, b, stride=1, padding=0)


# ---------------------------------------------------------------------------
# Resampling


def downsample2(x):
    """2x2 average pooling."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"downsample2 expects NCHW input, got ndim {x.ndim}")
    bsz, ch, h, w = x.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ValueError(f"downsample2 requires H, W divisible by 2, got ({h},{w})")
    out = x.data.reshape(bsz, ch, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    vjp = None
    if _will_record(x):

        def vjp(gs):
            g = gs[0] * 0.25
            gx = np.broadcast_to(g[:, :, :, None, :, None], (bsz, ch, h // 2, 2, w // 2, 2))
            return (gx.reshape(bsz, ch, h, w),)

    return _apply("downsample2", out, (x,), vjp)


_RESIZE_CACHE: dict = {}


def _resize_matrix(n_in: int, scale: int) -> np.ndarray:
    """Bilinear interpolation matrix (scale*n_in, n_in), half-pixel centers."""
    key = (n_in, scale)
    m = _RESIZE_CACHE.get(key)
    if m is None:
        n_out = n_in * scale
        m = np.zeros((n_out, n_in))
        for i in range(n_out):
            src = (i + 0.5) / scale - 0.5
            if src <= 0.0:
                m[i, 0] = 1.0
            elif src >= n_in - 1:
                m[i, n_in - 1] = 1.0
            else:
                i0 = int(np.floor(src))
                f = src - i0
                m[i, i0] = 1.0 - f
                m[i, i0 + 1] = f
        _RESIZE_CACHE[key] = m
    return m


def upsample_bilinear(x, scale: int):
    """Bilinear upsampling by an integer factor, corner-aligned sampling disabled."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"upsample expects NCHW input, got ndim {x.ndim}")
    scale = int(scale)
    if scale < 1:
        raise ValueError(f"upsample scale must be >= 1, got {scale}")
    if scale == 1:
        return x
    _, _, h, w = x.shape
    mh = _resize_matrix(h, scale).astype(x.dtype)
    mw = _resize_matrix(w, scale).astype(x.dtype)
    out = mh @ x.data @ mw.T
    vjp = None
    if _will_record(x):

        def vjp(gs):
            return (mh.T @ gs[0] @ mw,)

    return _apply("upsample_bilinear", out, (x,), vjp)


def upsample2(x):
    return upsample_bilinear(x, 2)


def pixel_shuffle(x, scale: int):
    """Rearrange (B, C*r^2, H, W) into (B, C, H*r, W*r).

    out[b, c, i*r + di, j*r + dj] = x[b, c*r^2 + di*r + dj, i, j]
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"pixel_shuffle expects NCHW input, got ndim {x.ndim}")
    scale = int(scale)
    if scale < 1:
        raise ValueError(f"pixel_shuffle scale must be >= 1, got {scale}")
    b, c, h, w = x.shape
    if c % (scale * scale):
        raise ValueError(f"pixel_shuffle needs channels divisible by scale^2={scale * scale}, got {c}")
    if scale == 1:
        return x
    co = c // (scale * scale)
    t = reshape(x, (b, co, scale, scale, h, w))
    t = transpose(t, (0, 1, 4, 2, 5, 3))
    return reshape(t, (b, co, h * scale, w * scale))


def pad_reflect(x, pads):
    """Reflect-pad the two trailing axes; pads = (top, bottom, left, right)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"pad_reflect expects NCHW input, got ndim {x.ndim}")
    top, bottom, left, right = (int(p) for p in pads)
    _, _, h, w = x.shape
    for p, n, name in ((top, h, "top"), (bottom, h, "bottom"), (left, w, "left"), (right, w, "right")):
        if p < 0:
            raise ValueError(f"negative pad {name}={p}")
        if p > n - 1:
            raise ValueError(f"reflect pad {name}={p} exceeds extent-1={n - 1}; input too small to pad")
    if top == bottom == left == right == 0:
        return x
    idx_h = np.pad(np.arange(h), (top, bottom), mode="reflect")
    idx_w = np.pad(np.arange(w), (left, right), mode="reflect")
    rh = np.zeros((len(idx_h), h), dtype=x.dtype)
    rh[np.arange(len(idx_h)), idx_h] = 1.0
    rw = np.zeros((len(idx_w), w), dtype=x.dtype)
    rw[np.arange(len(idx_w)), idx_w] = 1.0
    out = rh @ x.data @ rw.T
    vjp = None
    if _will_record(x):

        def vjp(gs):
            return (rh.T @ gs[0] @ rw,)

    return _apply("pad_reflect", out, (x,), vjp)


def crop2d(x, top: int, height: int, left: int, width: int):
    """Take a spatial crop of an NCHW tensor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"crop2d expects NCHW input, got ndim {x.ndim}")
    _, _, h, w = x.shape
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ValueError(f"crop [{top}:{top + height}, {left}:{left + width}] out of range for ({h},{w})")
    out = x.data[:, :, top : top + height, left : left + width].copy()
    vjp = None
    if _will_record(x):
        full = x.shape

        def vjp(gs):
            gx = np.zeros(full, dtype=gs[0].dtype)
            gx[:, :, top : top + height, left : left + width] = gs[0]
            return (gx,)

    return _apply("crop2d", out, (x,), vjp)


# ---------------------------------------------------------------------------
# Fourier transform


def dft2(x):
    """Unnormalized forward 2D DFT over the two trailing axes.

    Returns (real, imag) as separate tensors. Linear, hence the backward is
    the (conjugate) transform of the output gradients scaled by H*W.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ValueError(f"dft2 needs at least 2 dims, got {x.ndim}")
    spec = np.fft.fft2(x.data, axes=(-2, -1))
    re = np.ascontiguousarray(spec.real)
    im = np.ascontiguousarray(spec.imag)
    vjp = None
    if _will_record(x):
        h, w = x.shape[-2], x.shape[-1]
        dt = x.dtype

        def vjp(gs):
            gre, gim = gs
            gc = gre + 1j * gim
            gx = np.fft.ifft2(gc, axes=(-2, -1)).real * (h * w)
            return (gx.astype(dt, copy=False),)

    return _apply("dft2", (re, im), (x,), vjp)


# ---------------------------------------------------------------------------
# Operator sugar on Tensor


def _scalar_div(a, b):
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / b)
    return NotImplemented


Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
Tensor.__truediv__ = _scalar_div
Tensor.sum = sum
Tensor.mean = mean
Tensor.reshape = reshape
Tensor.transpose = transpose
