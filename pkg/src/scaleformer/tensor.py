"""Dense float tensors with a reverse-mode autodiff tape.

All data lives in contiguous numpy buffers, float32 by default (float64 is
available for gradient verification). Operations record themselves on the
active tape whenever an input participates in differentiation; `backward`
replays the tape in reverse and accumulates gradients on the leaves. The
operation set is deliberately small: exactly what the fusion network needs.
"""

import math

import numpy as np
from einops import rearrange as _einops_rearrange
from einops import EinopsError

# tanh-approximation GELU coefficient, sqrt(2/pi) truncated
GELU_COEF = 0.7978845608
GELU_CUBIC = 0.044715

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class Tensor:
    """N-d float array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        _track_alloc(self.data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def astype(self, dtype):
        t = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)
        return t

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


# ---------------------------------------------------------------------------
# tape

class Tape:
    """Ordered record of executed differentiable ops.

    Single-owner: one tape per training step, cleared by dropping it. Entering
    the tape as a context manager makes it the active recording target.
    """

    def __init__(self):
        self.nodes = []  # (out, inputs, backward_fn)
        self._tracked = set()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self.nodes)


_TAPE_STACK = []


class no_tape:
    """Disable op recording inside the block (inference / numeric probing)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _tracked(tape, t):
    return t.requires_grad or id(t) in tape._tracked


def _record(out, inputs, backward_fn):
    tape = _active_tape()
    if tape is None:
        return
    if any(_tracked(tape, t) for t in inputs):
        tape.nodes.append((out, inputs, backward_fn))
        tape._tracked.add(id(out))


def backward(loss, tape):
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not tape.nodes:
        raise ValueError("backward on an empty tape")
    out_ids = {id(out) for out, _, _ in tape.nodes}
    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gt in zip(inputs, backward_fn(g)):
            if gt is None:
                continue
            if t.requires_grad and id(t) not in out_ids:
                t.grad += gt
            elif id(t) in out_ids:
                # out-of-place: returned arrays may alias each other
                prev = grads.get(id(t))
                grads[id(t)] = gt if prev is None else prev + gt


# ---------------------------------------------------------------------------
# allocation tracking (used by the memory-estimate validation)

_ALLOC = {"enabled": False, "live": 0, "peak": 0}


class allocation_tracker:
    """Counts live Tensor buffer elements; `peak` is the high-water mark."""

    def __enter__(self):
        _ALLOC["enabled"] = True
        _ALLOC["live"] = 0
        _ALLOC["peak"] = 0
        return self

    def __exit__(self, exc_type, exc, tb):
        _ALLOC["enabled"] = False
        return False

    @property
    def peak(self):
        return _ALLOC["peak"]


def _track_alloc(arr):
    if not _ALLOC["enabled"]:
        return
    import weakref

    n = int(arr.size)
    _ALLOC["live"] += n
    _ALLOC["peak"] = max(_ALLOC["peak"], _ALLOC["live"])

    def _release(n=n):
        _ALLOC["live"] -= n

    weakref.finalize(arr, _release)


# ---------------------------------------------------------------------------
# helpers

def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, fwd, bwd_a, bwd_b):
    scalar_b = not isinstance(b, Tensor)
    bdata = np.asarray(b, dtype=a.data.dtype) if scalar_b else b.data
    try:
        np.broadcast_shapes(a.data.shape, bdata.shape)
    except ValueError:
        raise ShapeError(
            f"shapes {a.shape} and {tuple(bdata.shape)} are not broadcast-compatible"
        ) from None
    out = Tensor(fwd(a.data, bdata))

    if scalar_b:
        def back(g):
            return (_unbroadcast(bwd_a(g, a.data, bdata), a.data.shape),)

        _record(out, (a,), back)
    else:
        def back(g):
            return (
                _unbroadcast(bwd_a(g, a.data, bdata), a.data.shape),
                _unbroadcast(bwd_b(g, a.data, bdata), b.data.shape),
            )

        _record(out, (a, b), back)
    return out


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def scale(a, s):
    s = float(s)
    out = Tensor(a.data * np.asarray(s, dtype=a.data.dtype))
    _record(out, (a,), lambda g: (g * np.asarray(s, dtype=g.dtype),))
    return out


def gelu(x):
    """GELU, tanh approximation (closed-form gradient)."""
    d = x.data
    inner = GELU_COEF * (d + GELU_CUBIC * d * d * d)
    t = np.tanh(inner)
    out = Tensor(0.5 * d * (1.0 + t))

    def back(g):
        sech2 = 1.0 - t * t
        dinner = GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * sech2 * dinner),)

    _record(out, (x,), back)
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0))
    _record(out, (x,), lambda g: (g * (x.data > 0),))
    return out


def absval(x):
    """|x|; subgradient at 0 is 0."""
    out = Tensor(np.abs(x.data))
    _record(out, (x,), lambda g: (g * np.sign(x.data),))
    return out


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "gelu": gelu,
    "relu": relu,
}


def elementwise(kind, a, b=None):
    """Dispatch by name; binary kinds take b (Tensor or scalar)."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    if kind in ("gelu", "relu"):
        if b is not None:
            raise ValueError(f"{kind} is unary")
        return fn(a)
    return fn(a, b)


# ---------------------------------------------------------------------------
# reductions

def tsum(x, axis=None, keepdims=False):
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).astype(g.dtype, copy=True),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.data.shape).astype(g.dtype, copy=True),)

    _record(out, (x,), back)
    return out


def tmean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# matmul / softmax / layer norm

def matmul(a, b):
    """Batched matrix product; leading dimensions broadcast."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}"
        )
    out = Tensor(np.matmul(a.data, b.data))

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    _record(out, (a, b), back)
    return out


def softmax(x, axis=-1):
    """Max-subtracted softmax along `axis`."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    _record(out, (x,), back)
    return out


def layer_norm(x, axis, gamma, beta, eps=1e-5):
    """Normalize one axis to zero mean / unit variance, then affine."""
    n = x.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match axis length {n}"
        )
    ax = axis % x.ndim
    bshape = [1] * x.ndim
    bshape[ax] = n
    gm = gamma.data.reshape(bshape)
    bt = beta.data.reshape(bshape)

    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out = Tensor(gm * xhat + bt)

    def back(g):
        dgamma = (g * xhat).sum(axis=tuple(i for i in range(x.ndim) if i != ax))
        dbeta = g.sum(axis=tuple(i for i in range(x.ndim) if i != ax))
        dxhat = g * gm
        m1 = dxhat.mean(axis=ax, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=ax, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    _record(out, (x, gamma, beta), back)
    return out


# ---------------------------------------------------------------------------
# conv2d

def conv2d(x, w, bias=None, stride=1, padding="same"):
    """Cross-correlation with odd kernels and zero 'same' padding, stride 1."""
    if stride != 1:
        raise ValueError("conv2d supports stride 1 only")
    if padding != "same":
        raise ValueError("conv2d supports 'same' padding only")
    b, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, kernel expects {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernels must be odd-sized, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2

    def _windows(a):
        ap = np.pad(a, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        return np.lib.stride_tricks.sliding_window_view(ap, (kh, kw), axis=(2, 3))

    win = _windows(x.data)
    y = np.einsum("bchwij,ocij->bohw", win, w.data, optimize=True)
    y = np.ascontiguousarray(y, dtype=x.data.dtype)
    if bias is not None:
        y += bias.data.reshape(1, cout, 1, 1)
    out = Tensor(y)

    def back(g):
        win_b = _windows(x.data)
        dw = np.einsum("bchwij,bohw->ocij", win_b, g, optimize=True).astype(w.data.dtype)
        dxp = np.zeros((b, cin, h + 2 * ph, wdt + 2 * pw), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + h, j : j + wdt] += np.einsum(
                    "bohw,oc->bchw", g, w.data[:, :, i, j], optimize=True
                )
        dx = dxp[:, :, ph : ph + h, pw : pw + wdt]
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3)).astype(bias.data.dtype)

    _record(out, (x, w) if bias is None else (x, w, bias), back)
    return out


# ---------------------------------------------------------------------------
# data movement

def rearrange(x, pattern, **axes):
    """einops-style reshape/permute; bijective, gradient is the inverse move.

    Callers must pass enough named axis sizes that both the pattern and its
    reversal are fully determined.
    """
    try:
        y = _einops_rearrange(x.data, pattern, **axes)
    except EinopsError as e:
        raise ShapeError(f"rearrange {pattern!r} failed for shape {x.shape}: {e}") from None
    out = Tensor(np.ascontiguousarray(y))
    lhs, rhs = [s.strip() for s in pattern.split("->")]
    inverse = f"{rhs} -> {lhs}"

    def back(g):
        return (np.ascontiguousarray(_einops_rearrange(g, inverse, **axes)),)

    _record(out, (x,), back)
    return out


def pad_reflect(x, bottom, right):
    """Reflect-pad the last two axes on the bottom/right edges."""
    if bottom == 0 and right == 0:
        out = Tensor(x.data.copy())
        _record(out, (x,), lambda g: (g,))
        return out
    h, w = x.shape[-2], x.shape[-1]
    if (bottom > 0 and h < 2) or (right > 0 and w < 2):
        raise ValueError(
            f"reflect padding undefined for extent < 2 (image {h}x{w}, pads {bottom},{right})"
        )
    ridx = np.pad(np.arange(h), (0, bottom), mode="reflect")
    cidx = np.pad(np.arange(w), (0, right), mode="reflect")
    out = Tensor(np.ascontiguousarray(x.data[..., ridx[:, None], cidx[None, :]]))

    def back(g):
        lead = int(np.prod(x.shape[:-2], dtype=np.int64))
        dx = np.zeros((lead, h * w), dtype=g.dtype)
        flat_map = (ridx[:, None] * w + cidx[None, :]).ravel()
        np.add.at(dx, (np.arange(lead)[:, None], flat_map[None, :]), g.reshape(lead, -1))
        return (dx.reshape(x.shape),)

    _record(out, (x,), back)
    return out


def crop2d(x, h, w):
    """Keep the top-left h x w region of the last two axes."""
    if h > x.shape[-2] or w > x.shape[-1]:
        raise ShapeError(f"crop {h}x{w} exceeds extents {x.shape[-2]}x{x.shape[-1]}")
    out = Tensor(np.ascontiguousarray(x.data[..., :h, :w]))

    def back(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        dx[..., :h, :w] = g
        return (dx,)

    _record(out, (x,), back)
    return out


# ---------------------------------------------------------------------------
# attention primitives

def rope_rotate(x, positions, base=10000.0):
    """Rotate coordinate pairs (2i, 2i+1) of the last axis by pos * base^(-2i/d).

    `positions` has length x.shape[-2]; rotation is norm-preserving per vector
    and makes dot products depend only on position differences.
    """
    d = x.shape[-1]
    if d % 2 != 0:
        raise ValueError(f"rope requires an even feature dimension, got {d}")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (x.shape[-2],):
        raise ShapeError(f"positions length {pos.shape} does not match axis {x.shape[-2]}")
    theta = float(base) ** (-np.arange(0, d, 2, dtype=np.float64) * 2.0 / d)
    ang = pos[:, None] * theta[None, :]
    cos = np.cos(ang).astype(x.data.dtype)
    sin = np.sin(ang).astype(x.data.dtype)

    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    y = np.empty_like(x.data)
    y[..., 0::2] = xe * cos - xo * sin
    y[..., 1::2] = xe * sin + xo * cos
    out = Tensor(y)

    def back(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        dx = np.empty_like(g)
        dx[..., 0::2] = ge * cos + go * sin
        dx[..., 1::2] = -ge * sin + go * cos
        return (dx,)

    _record(out, (x,), back)
    return out


def linear(x, w, bias=None):
    """x @ w (+ bias) over the last axis; leading axes collapse into one GEMM."""
    cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"linear feature mismatch: x{x.shape} @ w{w.shape}")
    x2 = x.data.reshape(-1, cin)
    y = x2 @ w.data
    if bias is not None:
        y += bias.data
    out = Tensor(y.reshape(x.shape[:-1] + (cout,)))

    def back(g):
        g2 = g.reshape(-1, cout)
        dx = (g2 @ w.data.T).reshape(x.shape)
        dw = x2.T @ g2
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    _record(out, (x, w) if bias is None else (x, w, bias), back)
    return out


def scaled_dot_attention(q, k, v, capture=None):
    """softmax(q kT / sqrt(d)) v over the last two axes.

    Leading axes of q, k, v must agree. The probability matrix is kept for the
    backward pass; it is the dominant transient at scale, so it is visible to
    the allocation tracker. If `capture` is a dict, a copy lands in it.
    """
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention layout mismatch: q{q.shape} k{k.shape} v{v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention head dims differ: q{q.shape} k{k.shape}")
    inv_sqrt_d = np.asarray(1.0 / math.sqrt(q.shape[-1]), dtype=q.data.dtype)

    p = np.matmul(q.data, np.swapaxes(k.data, -1, -2))
    _track_alloc(p)
    p *= inv_sqrt_d
    p -= p.max(axis=-1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=-1, keepdims=True)
    if capture is not None:
        capture["probs"] = p.copy()
    out = Tensor(np.matmul(p, v.data))

    def back(g):
        dv = np.matmul(np.swapaxes(p, -1, -2), g)
        dp = np.matmul(g, np.swapaxes(v.data, -1, -2))
        dp -= (dp * p).sum(axis=-1, keepdims=True)
        dp *= p
        dq = np.matmul(dp, k.data) * inv_sqrt_d
        dk = np.matmul(np.swapaxes(dp, -1, -2), q.data) * inv_sqrt_d
        return dq, dk, dv

    _record(out, (q, k, v), back)
    return out


# ---------------------------------------------------------------------------
# gradient checking

class GradCheckReport:
    def __init__(self, max_rel_error, worst_index, n_checked, tol):
        self.max_rel_error = max_rel_error
        self.worst_index = worst_index
        self.n_checked = n_checked
        self.tol = tol

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def __repr__(self):
        return (
            f"GradCheckReport(max_rel_error={self.max_rel_error:.3e}, "
            f"n_checked={self.n_checked}, passed={self.passed})"
        )


def grad_check(f, x, h=1e-3, tol=1e-3, sample=None, seed=0, zero_tol=1e-10, atol=0.0):
    """Compare analytic gradients of scalar f(x) against central differences.

    Checks every element of x, or `sample` seeded random elements. float64
    inputs are strongly recommended; float32 round-off is comparable to the
    difference quotient at h=1e-3. Deviations at or below `atol` count as
    zero relative error: near-zero gradients make a pure ratio ill-posed.
    """
    if not x.requires_grad:
        raise ValueError("grad_check input must have requires_grad=True")
    x.zero_grad()
    with Tape() as tape:
        y = f(x)
    if y.data.size != 1:
        raise ValueError("grad_check target function must be scalar-valued")
    backward(y, tape)
    analytic = x.grad.copy()

    n = x.data.size
    if sample is None or sample >= n:
        idxs = np.arange(n)
    else:
        idxs = np.random.default_rng(seed).choice(n, size=sample, replace=False)

    flat = x.data.reshape(-1)
    worst = 0.0
    worst_i = -1
    with no_tape():
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            if abs(a) < zero_tol and abs(numeric) < zero_tol:
                rel = 0.0
            elif abs(a - numeric) <= atol:
                rel = 0.0
            else:
                rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-12)
            if rel > worst:
                worst = rel
                worst_i = int(i)
    return GradCheckReport(worst, worst_i, len(idxs), tol)
