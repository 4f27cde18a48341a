"""Dense float64 tensors with reverse-mode autodiff, plus Adam and a
finite-difference gradient checker.

Design notes:
  * storage is always a contiguous float64 ndarray; float32 appears only at
    the checkpoint boundary (see model.save_checkpoint);
  * the graph is taped implicitly: every non-leaf Tensor records its parents
    and a vector-Jacobian closure, and `backward` walks a topological order;
  * elementwise ops broadcast numpy-style, with gradients reduced back onto
    each parent's shape; matmul is strictly 2-D, which is all the model needs;
  * everything is deterministic: no global RNG, no threading inside ops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "AdamState",
    "backward",
    "grad_check",
    "adam_step",
    "concat",
    "narrow",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "dropout",
]

_GELU_C = math.sqrt(2.0 / math.pi)


def _as_array(value):
    a = np.asarray(value, dtype=np.float64)
    return np.ascontiguousarray(a)


class Tensor:
    """A node in the autodiff graph. Leaves are created directly; interior
    nodes are produced by the ops below and carry a backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, _op="leaf"):
        self.data = _as_array(data)
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"non-finite values in tensor (op={_op})")
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self.grad = None
        self._parents = tuple(_parents)
        self._vjp = _vjp
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not a graph op; divide by a python scalar")
        return div_scalar(self, float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Reduce `grad` back onto `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ops ---------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, _parents=(a, b), _vjp=vjp, _op="add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, _parents=(a, b), _vjp=vjp, _op="sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, _parents=(a, b), _vjp=vjp, _op="mul")


def div_scalar(t, scalar):
    """True elementwise division by a python scalar (not reciprocal
    multiplication: the two differ in the last ulp)."""
    t = _wrap(t)
    s = float(scalar)

    def vjp(g):
        return (g / s,)

    return Tensor(t.data / s, _parents=(t,), _vjp=vjp, _op="div")


def gelu(t):
    """GELU, tanh approximation. The approximation (rather than erf) keeps the
    derivative cheap and smooth for gradient checking."""
    t = _wrap(t)
    x = t.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * (x2 * x))
    th = np.tanh(inner)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        dgelu = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
        return (g * dgelu,)

    return Tensor(0.5 * x * (1.0 + th), _parents=(t,), _vjp=vjp, _op="gelu")


def dropout(t, p, rng):
    """Train-time dropout with an inverted mask drawn from the caller's seeded
    generator. p == 0 is the identity (no mask node added)."""
    if p == 0.0:
        return t
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    t = _wrap(t)
    mask = (rng.random(t.shape) >= p) / (1.0 - p)

    def vjp(g):
        return (g * mask,)

    return Tensor(t.data * mask, _parents=(t,), _vjp=vjp, _op="dropout")


# -- structural ops ----------------------------------------------------------


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(a.data @ b.data, _parents=(a, b), _vjp=vjp, _op="matmul")


def affine(x, w, b):
    """Fused x @ w + b (b broadcast over rows); one graph node instead of two
    on the training hot path."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.shape[1] != w.shape[0] or w.shape[1] != b.data.reshape(-1).shape[0]:
        raise ValueError(f"affine shape mismatch: {x.shape} @ {w.shape} + {b.shape}")

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0).reshape(b.shape)

    return Tensor(x.data @ w.data + b.data.reshape(1, -1), _parents=(x, w, b), _vjp=vjp, _op="affine")


def transpose(t):
    t = _wrap(t)
    if t.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")

    def vjp(g):
        return (g.T.copy(),)

    return Tensor(t.data.T.copy(), _parents=(t,), _vjp=vjp, _op="transpose")


def reshape(t, shape):
    t = _wrap(t)
    old = t.shape

    def vjp(g):
        return (g.reshape(old),)

    return Tensor(t.data.reshape(shape), _parents=(t,), _vjp=vjp, _op="reshape")


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _vjp=vjp,
        _op="concat",
    )


def narrow(t, axis, start, length):
    """Contiguous slice along one axis (gradient zero-pads back)."""
    t = _wrap(t)
    index = [slice(None)] * t.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(t.data)
        full[index] = g
        return (full,)

    return Tensor(t.data[index].copy(), _parents=(t,), _vjp=vjp, _op="narrow")


def tensor_sum(t, axis=None, keepdims=False):
    t = _wrap(t)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, t.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, t.shape).copy(),)

    return Tensor(
        t.data.sum(axis=axis, keepdims=keepdims), _parents=(t,), _vjp=vjp, _op="sum"
    )


def tensor_mean(t, axis=None, keepdims=False):
    t = _wrap(t)
    n = t.size if axis is None else t.shape[axis]
    return mul(tensor_sum(t, axis=axis, keepdims=keepdims), 1.0 / n)


# -- normalization / attention primitives -------------------------------------


def softmax_rows(t):
    """Row-wise softmax of a 2-D tensor with max subtraction for stability.
    Each output row is nonnegative and sums to 1."""
    t = _wrap(t)
    if t.data.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    if np.isnan(t.data).any():
        raise ValueError("NaN input to softmax_rows")
    shifted = t.data - t.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, _parents=(t,), _vjp=vjp, _op="softmax_rows")


def layer_norm(t, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale and
    shift. Variance is the biased estimator; eps guards the zero-variance
    case."""
    t, gain, bias = _wrap(t), _wrap(gain), _wrap(bias)
    d = t.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("layer_norm gain/bias must have the feature dim shape")
    mu = t.data.mean(axis=-1, keepdims=True)
    centered = t.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def vjp(g):
        g_gain = (g * xhat).reshape(-1, d).sum(axis=0)
        g_bias = g.reshape(-1, d).sum(axis=0)
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        g_t = inv * (gx - m1 - xhat * m2)
        return g_t, g_gain, g_bias

    return Tensor(xhat * gain.data + bias.data, _parents=(t, gain, bias), _vjp=vjp, _op="layer_norm")


# -- graph / backward ---------------------------------------------------------


@dataclass
class Graph:
    """Topologically ordered view of the op records reachable from `output`
    (leaves first; every node's parents precede it)."""

    nodes: list
    output: "Tensor"

    @classmethod
    def trace(cls, output):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(nodes=order, output=output)


def backward(output, seed_grad=None):
    """Reverse-mode sweep from `output`. Returns {tensor: gradient ndarray}
    for every requires_grad node and mirrors leaf gradients into `.grad`.

    `output` may be a Tensor or a pre-traced Graph. A scalar output defaults
    to seed 1; otherwise seed_grad must match the output shape.
    """
    graph = output if isinstance(output, Graph) else Graph.trace(output)
    out = graph.output
    if seed_grad is None:
        if out.size != 1:
            raise ValueError("non-scalar output requires an explicit seed_grad")
        seed = np.ones_like(out.data)
    else:
        seed = _as_array(seed_grad)
        if seed.shape != out.data.shape:
            raise ValueError("seed_grad shape does not match output shape")

    grads = {id(out): seed}
    grad_map = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        grad_map[node] = g
        if node._vjp is None:
            node.grad = g  # leaf
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grad_map


# -- gradient checking ---------------------------------------------------------


def grad_check(f, point, eps=1e-5, max_coords=None, seed=0):
    """Compare reverse-mode gradients of a scalar function against central
    differences.

    `point` is a Tensor or a dict of named Tensors; `f` is re-evaluated with
    perturbed copies coordinate by coordinate. Returns
    max_i |g_ad[i] - g_fd[i]| / max(max_i |g_fd[i]|, 1e-8) over all checked
    coordinates. `max_coords` caps the number of coordinates probed per tensor
    (seeded subsample) to bound runtime on large parameter sets.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    params = {"x": point} if isinstance(point, Tensor) else dict(point)
    for name, p in params.items():
        if not p.requires_grad:
            raise ValueError(f"grad_check point '{name}' must require gradients")

    out = f(point if isinstance(point, Tensor) else params)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise ValueError("non-finite function value at the check point")
    grad_map = backward(out)
    rng = np.random.default_rng(seed)

    max_abs_diff = 0.0
    max_abs_fd = 0.0
    for name, p in params.items():
        g_ad = grad_map.get(p)
        if g_ad is None:
            g_ad = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_hi = f(point if isinstance(point, Tensor) else params).item()
            flat[i] = orig - eps
            f_lo = f(point if isinstance(point, Tensor) else params).item()
            flat[i] = orig
            if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
                raise ValueError(f"non-finite value while perturbing '{name}'[{i}]")
            g_fd = (f_hi - f_lo) / (2.0 * eps)
            max_abs_diff = max(max_abs_diff, abs(g_ad.reshape(-1)[i] - g_fd))
            max_abs_fd = max(max_abs_fd, abs(g_fd))
    return max_abs_diff / max(max_abs_fd, 1e-8)


# -- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = None
    v: dict = None

    def __post_init__(self):
        if self.m is None:
            self.m = {}
        if self.v is None:
            self.v = {}


def adam_step(params, grads, state):
    """One Adam update with bias correction, applied in place to the
    optimizer-owned parameter tensors. Missing gradients are treated as zero
    (the moments still decay). Returns (params, state)."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter '{name}'")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
