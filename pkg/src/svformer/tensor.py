"""Dense tensors with reverse-mode automatic differentiation.

A small numpy-backed engine: each op records its parents and a closure
that maps the output gradient to parent gradients.  `backward` walks the
graph once in reverse topological order and accumulates leaf gradients.

Parameters are float32 by default; scalar reductions (sum, mean, the
losses) accumulate in float64 and cast back, so batch means stay stable
without forcing the whole graph to double precision.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (teacher passes, eval)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Array plus optional autodiff bookkeeping.

    `grad` accumulates across backward calls until explicitly zeroed;
    interior nodes get fresh closures per forward pass, so graphs are
    one-shot by construction.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- graph construction ------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- elementwise arithmetic --------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        out_data = a.data + b.data

        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(out_data, (a, b), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        out_data = a.data - b.data

        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(out_data, (a, b), bwd)

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        out_data = a.data * b.data

        def bwd(g):
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(out_data, (a, b), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        out_data = a.data / b.data

        def bwd(g):
            ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            return ga, gb

        return Tensor._make(out_data, (a, b), bwd)

    # -- matmul -------------------------------------------------------

    def __matmul__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul expects tensors of rank >= 2")
        out_data = a.data @ b.data

        def bwd(g):
            ga = gb = None
            if a.requires_grad:
                ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
            if b.requires_grad:
                if b.data.ndim == 2 and g.ndim > 2:
                    # batched activations times a shared weight: fold the
                    # batch into rows instead of reducing a stacked product
                    k = a.data.shape[-1]
                    gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
            return ga, gb

        return Tensor._make(out_data, (a, b), bwd)

    # -- shape ops ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self
        out_data = src.data.reshape(shape)

        def bwd(g):
            return (g.reshape(src.shape),)

        return Tensor._make(out_data, (src,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        src = self
        inv = np.argsort(axes)
        out_data = src.data.transpose(axes)

        def bwd(g):
            return (g.transpose(inv),)

        return Tensor._make(out_data, (src,), bwd)

    def broadcast_to(self, shape):
        src = self
        out_data = np.broadcast_to(src.data, shape)

        def bwd(g):
            return (_unbroadcast(g, src.shape),)

        return Tensor._make(out_data, (src,), bwd)

    def __getitem__(self, key):
        src = self
        out_data = src.data[key]
        advanced = _has_advanced_index(key)

        def bwd(g):
            buf = np.zeros_like(src.data)
            if advanced:
                np.add.at(buf, key, g)
            else:
                buf[key] += g
            return (buf,)

        return Tensor._make(out_data, (src,), bwd)

    # -- reductions (float64 accumulation) ---------------------------

    def sum(self, axis=None, keepdims: bool = False):
        src = self
        dt = src.dtype
        out_data = src.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
        out_data = out_data.astype(dt)

        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, src.shape).astype(dt, copy=False),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src.shape).astype(dt, copy=False),)

        return Tensor._make(out_data, (src,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for ax in axes:
                n *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(np.asarray(x))


def _has_advanced_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along `axis`; backward splits the gradient."""
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out_data, tuple(tensors), bwd)


# -- nonlinearities and normalization --------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtracted)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)

    return Tensor._make(p, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    c = math.sqrt(2.0 / math.pi)
    xd = x.data
    x2 = xd * xd
    th = np.tanh(c * (xd + 0.044715 * (x2 * xd)))
    out = 0.5 * xd * (1.0 + th)

    def bwd(g):
        sech2 = 1.0 - th * th
        d_inner = c * (1.0 + 0.134145 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * sech2 * d_inner),)

    return Tensor._make(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return Tensor._make(x.data * mask, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = xd.shape[-1]

    def bwd(g):
        gx = gg = gb = None
        if gain.requires_grad:
            gg = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
        if x.requires_grad:
            gy = g * gain.data
            # d/dx of (x - mu) * inv with mu, inv both functions of x
            gsum = gy.sum(axis=-1, keepdims=True)
            gdot = (gy * xhat).sum(axis=-1, keepdims=True)
            gx = (inv / n) * (n * gy - gsum - xhat * gdot)
            gx = gx.astype(xd.dtype, copy=False)
        return gx, gg, gb

    return Tensor._make(out.astype(xd.dtype, copy=False), (x, gain, bias), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep

    def bwd(g):
        return (g * mask,)

    return Tensor._make(x.data * mask, (x,), bwd)


# -- losses ----------------------------------------------------------


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bwd(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), bwd)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean cross-entropy over the batch.

    `targets` is either an int vector of class ids or a (B, K) array of
    soft label distributions.  `weights` (optional, length B) scales each
    sample's term; the mean still divides by the full batch size, so a
    zero weight removes a sample without shrinking the denominator.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise ValueError(f"cross_entropy expects (B, K) logits, got {ld.shape}")
    b, k = ld.shape
    shifted = ld.astype(np.float64) - ld.astype(np.float64).max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    p = np.exp(logp)

    targets = np.asarray(targets)
    hard = targets.ndim == 1
    if hard:
        if targets.shape[0] != b:
            raise ValueError("target length does not match batch size")
        ti = targets.astype(np.int64)
        if ti.size and (ti.min() < 0 or ti.max() >= k):
            raise ValueError(f"class indices must lie in [0, {k}), got {ti.min()}..{ti.max()}")
        per = -logp[np.arange(b), ti]
    else:
        if targets.shape != (b, k):
            raise ValueError(f"soft targets must have shape {(b, k)}, got {targets.shape}")
        per = -(targets.astype(np.float64) * logp).sum(axis=1)

    if weights is None:
        w = None
        loss = per.mean()
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (b,):
            raise ValueError("weights must be a length-B vector")
        loss = (w * per).sum() / b

    def bwd(g):
        if hard:
            grad = p.copy()
            grad[np.arange(b), targets.astype(np.int64)] -= 1.0
        else:
            grad = p * targets.astype(np.float64).sum(axis=1, keepdims=True)
            grad = grad - targets.astype(np.float64)
        if w is not None:
            grad *= w[:, None]
        grad *= float(g) / b
        return (grad.astype(ld.dtype, copy=False),)

    return Tensor._make(np.asarray(loss, dtype=ld.dtype), (logits,), bwd)


def mean_squared_l2(a: Tensor, b) -> Tensor:
    """Mean over rows of the squared L2 distance between (B, K) arrays."""
    b_t = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b_t.shape or a.data.ndim != 2:
        raise ValueError("mean_squared_l2 expects matching (B, K) tensors")
    diff = a.data.astype(np.float64) - b_t.data.astype(np.float64)
    n = a.shape[0]
    loss = (diff * diff).sum() / n

    def bwd(g):
        base = (2.0 * float(g) / n) * diff
        ga = base.astype(a.dtype, copy=False) if a.requires_grad else None
        gb = (-base).astype(b_t.dtype, copy=False) if b_t.requires_grad else None
        return ga, gb

    return Tensor._make(np.asarray(loss, dtype=a.dtype), (a, b_t), bwd)


# -- backward pass ---------------------------------------------------


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
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
            if p._backward is not None or p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None):
    """Run reverse-mode autodiff from a scalar `loss`.

    Leaf gradients accumulate into `.grad` (+= across calls).  If a
    `ParamSet` is given, parameters the loss never touched get explicit
    zero gradients so the optimizer step sees a complete set.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to differentiate")

    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not (p.requires_grad or p._backward is not None):
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    if params is not None:
        for _, t in params.items():
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


Tensor.backward = lambda self, params=None: backward(self, params)


# -- parameters and SGD ----------------------------------------------


class ParamSet:
    """Ordered name -> Tensor map with per-parameter momentum buffers.

    Insertion order is the canonical order for iteration, checkpoints,
    and gradient flattening, so it must be deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._momentum: dict[str, np.ndarray] = {}

    def add(self, name: str, data, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(np.asarray(data))
        t.requires_grad = requires_grad
        self._params[name] = t
        self._momentum[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def momentum_buffer(self, name: str) -> np.ndarray:
        return self._momentum[name]

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def copy(self) -> "ParamSet":
        """Deep copy of values and momentum buffers (grads not copied)."""
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, t.data.copy(), requires_grad=t.requires_grad)
            out._momentum[name] = self._momentum[name].copy()
        return out

    def n_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())


def sgd_step(params: ParamSet, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0):
    """One SGD update with classical momentum and decoupled-style L2.

    v <- momentum * v + grad + weight_decay * p;  p <- p - lr * v.
    Gradients are zeroed afterwards.  Parameters without a grad are
    skipped (treated as frozen for this step).
    """
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, t in params._params.items():
        if not t.requires_grad or t.grad is None:
            continue
        g = t.grad
        if weight_decay:
            g = g + weight_decay * t.data
        v = params._momentum[name]
        v *= momentum
        v += g
        t.data -= (lr * v).astype(t.data.dtype, copy=False)
        t.grad = None
