"""Dense tensor ops, reverse-mode differentiation and optimizer steps.

Values are numpy arrays wrapped in :class:`Var` nodes that record the tape
needed by :func:`reverse_gradient`.  The op set is exactly what the decoder
stack needs (conv2d, the four activations, matmul, elementwise arithmetic,
concat/reshape/indexing and a fused softmax cross-entropy); it is not a
general autodiff system.

All ops are pure functions over immutable inputs.  The only mutation in this
module is the parameter update inside :func:`adam_step`, which returns fresh
arrays anyway so callers can treat it as functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigurationError

__all__ = [
    "Var", "ParamSet", "AdamState", "no_grad",
    "as_var", "add", "mul", "matmul", "conv2d", "activation",
    "relu", "logistic", "tanh", "softmax",
    "concat", "reshape", "index_axis1", "mean_all",
    "softmax_cross_entropy", "reverse_gradient",
    "clip_global_norm", "adam_step", "global_norm",
    "conv2d_raw", "conv2d_backprop_input", "conv_output_extent",
]

_GRAD_ENABLED = True


class no_grad:
    """Context manager that skips tape recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Var:
    """One node of the computation tape.

    `value` is the forward result, `grad` is filled during the backward
    sweep.  Leaf nodes carry `requires_grad=True` when they are trainable
    parameters; interior nodes inherit the flag from their parents so the
    backward sweep can prune dead branches.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _make(value, parents, backward, recorded=True):
    if not (_GRAD_ENABLED and recorded):
        return Var(value)
    return Var(value, parents=tuple(parents), backward=backward)


def _unbroadcast(grad, shape):
    """Collapse a broadcast gradient back onto `shape`."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(var, grad):
    if not var.requires_grad:
        return
    if var.grad is None:
        var.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
    else:
        var.grad += grad


# ---------------------------------------------------------------------------
# elementwise / linear ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    out = a.value + b.value

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return _make(out, (a, b), backward)


def mul(a, b):
    a, b = as_var(a), as_var(b)
    out = a.value * b.value

    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(out, (a, b), backward)


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    out = a.value @ b.value

    def backward(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return _make(out, (a, b), backward)


def relu(z):
    z = as_var(z)
    out = np.maximum(z.value, 0.0)

    def backward(g):
        _accum(z, g * (z.value > 0))

    return _make(out, (z,), backward)


def logistic(z):
    z = as_var(z)
    out = 1.0 / (1.0 + np.exp(-z.value))

    def backward(g):
        _accum(z, g * out * (1.0 - out))

    return _make(out, (z,), backward)


def tanh(z):
    z = as_var(z)
    out = np.tanh(z.value)

    def backward(g):
        _accum(z, g * (1.0 - out * out))

    return _make(out, (z,), backward)


def _softmax_values(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(z):
    """Softmax over the last axis."""
    z = as_var(z)
    p = _softmax_values(z.value)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(z, p * (g - dot))

    return _make(p, (z,), backward)


_ACTIVATIONS = {"relu": relu, "logistic": logistic, "tanh": tanh, "softmax": softmax}


def activation(kind, z):
    """Apply one of the supported activations by name."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation kind {kind!r}") from None
    return fn(z)


def concat(parts, axis=-1):
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, gp)

    return _make(out, tuple(parts), backward)


def reshape(x, shape):
    x = as_var(x)
    out = x.value.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(x.value.shape))

    return _make(out, (x,), backward)


def index_axis1(x, s):
    """Select x[:, s, ...], keeping batch axis 0."""
    x = as_var(x)
    out = x.value[:, s]

    def backward(g):
        gx = np.zeros_like(x.value)
        gx[:, s] = g
        _accum(x, gx)

    return _make(np.ascontiguousarray(out), (x,), backward)


def mean_all(x):
    x = as_var(x)
    out = np.asarray(x.value.mean())
    n = x.value.size

    def backward(g):
        _accum(x, np.full_like(x.value, g / n))

    return _make(out, (x,), backward)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer `labels` under softmax(logits).

    Fused so the backward pass is the numerically stable (p - y)/B.
    """
    logits = as_var(logits)
    labels = np.asarray(labels)
    p = _softmax_values(logits.value)
    n = labels.shape[0]
    picked = p[np.arange(n), labels]
    out = np.asarray(-np.log(np.maximum(picked, 1e-300)).mean())

    def backward(g):
        gz = p.copy()
        gz[np.arange(n), labels] -= 1.0
        _accum(logits, gz * (g / n))

    return _make(out, (logits,), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_extent(n, stride):
    """Output extent of a same-padded convolution: ceil(n / stride)."""
    return -(-n // stride)


def _same_pad(n, k, stride):
    out = conv_output_extent(n, stride)
    total = max((out - 1) * stride + k - n, 0)
    lo = total // 2
    return out, lo, total - lo


def _im2col(x, kh, kw, stride):
    b, h, w, c = x.shape
    ho, plo, phi = _same_pad(h, kh, stride)
    wo, qlo, qhi = _same_pad(w, kw, stride)
    xp = np.pad(x, ((0, 0), (plo, phi), (qlo, qhi), (0, 0)))
    sb, sh, sw, sc = xp.strides
    windows = as_strided(
        xp,
        shape=(b, ho, wo, kh, kw, c),
        strides=(sb, stride * sh, stride * sw, sh, sw, sc),
    )
    patches = windows.reshape(b * ho * wo, kh * kw * c)
    return np.ascontiguousarray(patches), (ho, wo, plo, qlo, xp.shape)


def _col2im(gpatches, input_shape, kh, kw, stride, pad_shape, plo, qlo):
    b, h, w, c = input_shape
    _, hp, wp, _ = pad_shape
    ho = conv_output_extent(h, stride)
    wo = conv_output_extent(w, stride)
    gxp = np.zeros((b, hp, wp, c), dtype=gpatches.dtype)
    gp = gpatches.reshape(b, ho, wo, kh, kw, c)
    for di in range(kh):
        for dj in range(kw):
            gxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :] += gp[:, :, :, di, dj, :]
    return gxp[:, plo:plo + h, qlo:qlo + w, :]


def _check_conv_shapes(x, k, stride):
    if x.ndim != 4 or k.ndim != 4:
        raise ConfigurationError(
            f"conv2d expects 4-d input/kernels, got {x.shape} and {k.shape}")
    kh, kw, cin, _ = k.shape
    if kh != kw or kh % 2 == 0:
        raise ConfigurationError(f"conv2d kernels must be square with odd extent, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ConfigurationError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.shape[3] != cin:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {x.shape[3]}, kernels expect {cin}")


def conv2d_raw(x, k, stride):
    """Bias-free same-padded convolution on plain arrays (no tape)."""
    _check_conv_shapes(x, k, stride)
    kh, kw, cin, cout = k.shape
    patches, (ho, wo, _, _, _) = _im2col(x, kh, kw, stride)
    out = patches @ k.reshape(kh * kw * cin, cout)
    return out.reshape(x.shape[0], ho, wo, cout)


def conv2d_backprop_input(gout, k, stride, input_shape):
    """Propagate an output-space array back through the linear conv map."""
    kh, kw, cin, cout = k.shape
    b, h, w, _ = input_shape
    ho, plo, phi = _same_pad(h, kh, stride)
    wo, qlo, qhi = _same_pad(w, kw, stride)
    pad_shape = (b, plo + h + phi, qlo + w + qhi, cin)
    gpatches = gout.reshape(b * ho * wo, cout) @ k.reshape(kh * kw * cin, cout).T
    return _col2im(gpatches, input_shape, kh, kw, stride, pad_shape, plo, qlo)


def conv2d(x, kernels, bias, stride=1):
    """Same-padded 2-d convolution with bias, output extent ceil(n/stride).

    `x` is (B, H, W, Cin) or a single (H, W, Cin) image; `kernels` is
    (k, k, Cin, Cout) with odd k and `bias` is (Cout,).
    """
    x, kernels, bias = as_var(x), as_var(kernels), as_var(bias)
    squeeze = x.value.ndim == 3
    xv = x.value[None] if squeeze else x.value
    _check_conv_shapes(xv, kernels.value, stride)
    kh, kw, cin, cout = kernels.value.shape
    if bias.value.shape != (cout,):
        raise ConfigurationError(
            f"conv2d bias shape {bias.value.shape} does not match {cout} output channels")
    patches, (ho, wo, plo, qlo, pad_shape) = _im2col(xv, kh, kw, stride)
    kmat = kernels.value.reshape(kh * kw * cin, cout)
    out = (patches @ kmat + bias.value).reshape(xv.shape[0], ho, wo, cout)
    if squeeze:
        out = out[0]
    input_shape = xv.shape

    def backward(g):
        gflat = (g[None] if squeeze else g).reshape(-1, cout)
        if kernels.requires_grad:
            _accum(kernels, (patches.T @ gflat).reshape(kernels.value.shape))
        if bias.requires_grad:
            _accum(bias, gflat.sum(axis=0))
        if x.requires_grad:
            gpatches = gflat @ kmat.T
            gx = _col2im(gpatches, input_shape, kh, kw, stride, pad_shape, plo, qlo)
            _accum(x, gx[0] if squeeze else gx)

    return _make(out, (x, kernels, bias), backward)


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    """Run the reverse sweep from a scalar `loss` Var."""
    if loss.value.ndim != 0:
        raise ConfigurationError(
            f"backward requires a scalar loss, got shape {loss.value.shape}")
    loss.grad = np.ones_like(loss.value)
    for node in reversed(_topo_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def reverse_gradient(loss, params):
    """Gradient of scalar `loss` with respect to a dict of leaf Vars."""
    backward(loss)
    return {name: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for name, v in params.items()}


# ---------------------------------------------------------------------------
# parameters, clipping, Adam
# ---------------------------------------------------------------------------

class ParamSet(dict):
    """Named parameter tensors; insertion order is the serialization order."""

    def copy(self):
        return ParamSet((k, v.copy()) for k, v in self.items())

    def astype(self, dtype):
        return ParamSet((k, np.asarray(v, dtype=dtype)) for k, v in self.items())

    def leaves(self):
        """Wrap every tensor in a trainable leaf Var."""
        return {k: Var(v, requires_grad=True) for k, v in self.items()}


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_global_norm(grads, threshold):
    """Scale all gradients by threshold/||g||2 when the global norm exceeds it."""
    if threshold <= 0:
        raise ConfigurationError(f"clip threshold must be positive, got {threshold}")
    norm = global_norm(grads)
    if norm <= threshold:
        return {k: g.copy() for k, g in grads.items()}
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initial(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(state, params, grads):
    """One Adam update with bias correction; returns (new params, new state)."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params = ParamSet()
    new_m, new_v = {}, {}
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        new_params[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v, step=t, lr=state.lr,
                                 beta1=b1, beta2=b2, eps=state.eps)
