"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Graph` is a tape. Every op called on it is executed eagerly (when
its inputs have values) and appended to ``graph.nodes``, so creation order is
a valid topological order. ``backward`` walks the tape in reverse.

Leaves are plain :class:`Tensor` objects. Trainable leaves (parameters) have
``requires_grad=True`` and outlive any single graph; their ``grad`` is
accumulated by ``Graph.backward`` and cleared by the optimizer.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64

# NaN/Inf checks on every node output. Disable with MORPHTAG_DEBUG=0.
DEBUG = os.environ.get("MORPHTAG_DEBUG", "1") != "0"


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class GraphError(RuntimeError):
    pass


class Tensor:
    """Dense value with an optional lazily allocated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_inputs",
                 "_forward", "_backward", "_graph")

    def __init__(self, value=None, requires_grad=False, name=None, dtype=DTYPE):
        self.value = None if value is None else np.asarray(value, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._inputs = ()
        self._forward = None
        self._backward = None
        self._graph = None

    @property
    def shape(self):
        return None if self.value is None else self.value.shape

    @property
    def is_leaf(self):
        return self._forward is None

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = self.name or ("leaf" if self.is_leaf else "node")
        return f"Tensor({label}, shape={self.shape})"


def parameter(value, name=None):
    return Tensor(value, requires_grad=True, name=name)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _sigmoid(x):
    # tanh form cannot overflow
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _log_softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


class Graph:
    """Tape of operations over tensors.

    Parameters
    ----------
    check_finite : bool, optional
        Raise :class:`NumericError` when a node produces NaN or Inf.
        Defaults to the module-level ``DEBUG`` flag.
    """

    def __init__(self, check_finite=None):
        self.nodes = []
        self.parameters = []
        self._param_ids = set()
        self.check_finite = DEBUG if check_finite is None else check_finite
        self._counter = 0

    # -- leaves -----------------------------------------------------------

    def constant(self, value, name=None):
        return Tensor(value, name=name)

    def input(self, value=None, name=None):
        """A leaf that can be (re)bound through :meth:`evaluate`."""
        return Tensor(value, name=name)

    def _as_tensor(self, x):
        if isinstance(x, Tensor):
            if x.requires_grad and x.is_leaf and id(x) not in self._param_ids:
                self._param_ids.add(id(x))
                self.parameters.append(x)
            return x
        return Tensor(x)

    # -- recording ----------------------------------------------------------

    def _record(self, op, inputs, forward, backward, name=None):
        inputs = tuple([self._as_tensor(x) for x in inputs])
        self._counter += 1
        out = Tensor(name=name or f"{op}#{self._counter}")
        ready = True
        for x in inputs:
            if x.requires_grad:
                out.requires_grad = True
            if x.value is None:
                ready = False
        out._inputs = inputs
        out._forward = forward
        out._backward = backward
        out._graph = self
        self.nodes.append(out)
        if ready:
            self._run(out)
        return out

    def _run(self, node):
        try:
            value = node._forward(*(x.value for x in node._inputs))
        except ShapeError as exc:
            raise ShapeError(f"node {node.name}: {exc}") from None
        except ValueError as exc:
            shapes = [x.shape for x in node._inputs]
            raise ShapeError(f"node {node.name}: {exc} (input shapes {shapes})") from None
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericError(f"node {node.name} produced a non-finite value")
        node.value = value

    def evaluate(self, bindings=None):
        """Recompute every node, optionally rebinding leaf values first.

        ``bindings`` maps leaf tensors to new arrays. Returns a mapping from
        node to its value.
        """
        for leaf, value in (bindings or {}).items():
            if not leaf.is_leaf:
                raise GraphError(f"cannot bind non-leaf {leaf.name}")
            value = np.asarray(value, dtype=DTYPE)
            if leaf.value is not None and value.shape != leaf.value.shape:
                raise ShapeError(f"binding for {leaf.name}: shape {value.shape} "
                                 f"!= {leaf.value.shape}")
            leaf.value = value
        for node in self.nodes:
            missing = [x.name for x in node._inputs if x.value is None]
            if missing:
                raise GraphError(f"node {node.name}: unbound inputs {missing}")
            self._run(node)
        return {node: node.value for node in self.nodes}

    def backward(self, loss, params=None):
        """Accumulate d(loss)/d(param) into ``param.grad`` for every parameter.

        If ``params`` is given, each of them gets a gradient array (zeros
        when the loss does not depend on it) and the list of gradients is
        returned.
        """
        if loss.value is None:
            raise GraphError("backward called before forward")
        if loss.value.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.value.shape}")
        grads = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or not node.requires_grad:
                continue
            inputs = node._inputs
            needs = tuple(x.requires_grad for x in inputs)
            in_grads = node._backward(g, node.value, *(x.value for x in inputs), needs=needs)
            for x, need, gx in zip(inputs, needs, in_grads):
                if not need or gx is None:
                    continue
                if x._forward is None:
                    x.grad = gx.copy() if x.grad is None else x.grad + gx
                else:
                    prev = grads.get(id(x))
                    grads[id(x)] = gx if prev is None else prev + gx
        if params is not None:
            return [p.grad if p.grad is not None else np.zeros_like(p.value)
                    for p in params]
        return None

    # -- elementwise ----------------------------------------------------------

    def add(self, a, b, name=None):
        def fwd(x, y):
            return x + y

        def bwd(g, out, x, y, needs):
            return (_unbroadcast(g, x.shape) if needs[0] else None,
                    _unbroadcast(g, y.shape) if needs[1] else None)
        return self._record("add", (a, b), fwd, bwd, name)

    def sub(self, a, b, name=None):
        def fwd(x, y):
            return x - y

        def bwd(g, out, x, y, needs):
            return (_unbroadcast(g, x.shape) if needs[0] else None,
                    _unbroadcast(-g, y.shape) if needs[1] else None)
        return self._record("sub", (a, b), fwd, bwd, name)

    def mul(self, a, b, name=None):
        def fwd(x, y):
            return x * y

        def bwd(g, out, x, y, needs):
            return (_unbroadcast(g * y, x.shape) if needs[0] else None,
                    _unbroadcast(g * x, y.shape) if needs[1] else None)
        return self._record("mul", (a, b), fwd, bwd, name)

    def scale(self, a, c, name=None):
        c = float(c)

        def fwd(x):
            return x * c

        def bwd(g, out, x, needs):
            return (g * c,)
        return self._record("scale", (a,), fwd, bwd, name)

    def tanh(self, a, name=None):
        def bwd(g, out, x, needs):
            return (g * (1.0 - out * out),)
        return self._record("tanh", (a,), np.tanh, bwd, name)

    def sigmoid(self, a, name=None):
        def bwd(g, out, x, needs):
            return (g * out * (1.0 - out),)
        return self._record("sigmoid", (a,), _sigmoid, bwd, name)

    def square(self, a, name=None):
        def bwd(g, out, x, needs):
            return (2.0 * g * x,)
        return self._record("square", (a,), np.square, bwd, name)

    # -- linear algebra and shape ----------------------------------------------

    def matmul(self, a, b, name=None):
        """``a @ b`` for ``a`` of shape (..., K) and ``b`` of shape (K, N)."""
        def fwd(x, y):
            if y.ndim != 2 or x.shape[-1] != y.shape[0]:
                raise ShapeError(f"matmul {x.shape} @ {y.shape}")
            return x @ y

        def bwd(g, out, x, y, needs):
            gx = g @ y.T if needs[0] else None
            gy = None
            if needs[1]:
                gy = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return gx, gy
        return self._record("matmul", (a, b), fwd, bwd, name)

    def concat(self, xs, axis=-1, name=None):
        def fwd(*vals):
            return np.concatenate(vals, axis=axis)

        def bwd(g, out, *vals, needs):
            bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
            return tuple(np.split(g, bounds, axis=axis))
        return self._record("concat", tuple(xs), fwd, bwd, name)

    def slice(self, a, start, stop, axis=-1, name=None):
        def index(ndim):
            idx = [slice(None)] * ndim
            idx[axis] = slice(start, stop)
            return tuple(idx)

        def fwd(x):
            return x[index(x.ndim)]

        def bwd(g, out, x, needs):
            gx = np.zeros_like(x)
            gx[index(x.ndim)] = g
            return (gx,)
        return self._record("slice", (a,), fwd, bwd, name)

    def take(self, a, i, axis, name=None):
        """Select index ``i`` along ``axis`` (dropping the axis)."""
        def fwd(x):
            return np.take(x, i, axis=axis)

        def bwd(g, out, x, needs):
            gx = np.zeros_like(x)
            idx = [slice(None)] * x.ndim
            idx[axis] = i
            gx[tuple(idx)] = g
            return (gx,)
        return self._record("take", (a,), fwd, bwd, name)

    def stack(self, xs, axis, name=None):
        def fwd(*vals):
            return np.stack(vals, axis=axis)

        def bwd(g, out, *vals, needs):
            return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))
        return self._record("stack", tuple(xs), fwd, bwd, name)

    def reshape(self, a, shape, name=None):
        def fwd(x):
            return x.reshape(shape)

        def bwd(g, out, x, needs):
            return (g.reshape(x.shape),)
        return self._record("reshape", (a,), fwd, bwd, name)

    def sum(self, a, axis=None, keepdims=False, name=None):
        def fwd(x):
            return np.sum(x, axis=axis, keepdims=keepdims)

        def bwd(g, out, x, needs):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)
        return self._record("sum", (a,), fwd, bwd, name)

    def take_along(self, a, index, axis, name=None):
        """``np.take_along_axis`` with a constant integer index array.

        ``index`` has the shape of ``a`` without its trailing feature axis,
        e.g. per-row time permutations for a (B, T, D) tensor with axis=1.
        """
        index = np.asarray(index)

        def expand(x):
            return index.reshape(index.shape + (1,) * (x.ndim - index.ndim))

        def fwd(x):
            return np.take_along_axis(x, expand(x), axis=axis)

        def bwd(g, out, x, needs):
            gx = np.zeros_like(x)
            idx = np.broadcast_to(expand(x), g.shape)
            # put_along_axis would drop repeated indices; accumulate instead
            grid = list(np.indices(g.shape, sparse=True))
            grid[axis] = idx
            np.add.at(gx, tuple(grid), g)
            return (gx,)
        return self._record("take_along", (a,), fwd, bwd, name)

    # -- nn ops -----------------------------------------------------------------

    def gather(self, table, ids, frozen_id=None, name=None):
        """Row lookup ``table[ids]``; rows equal to ``frozen_id`` get no gradient."""
        ids = np.asarray(ids, dtype=np.int64)

        def fwd(t):
            if ids.size and (ids.min() < 0 or ids.max() >= t.shape[0]):
                raise ShapeError(f"index out of range for table of {t.shape[0]} rows")
            return t[ids]

        def bwd(g, out, t, needs):
            gt = np.zeros_like(t)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, t.shape[1]))
            if frozen_id is not None:
                gt[frozen_id] = 0.0
            return (gt,)
        return self._record("gather", (table,), fwd, bwd, name)

    def softmax(self, a, axis=-1, name=None):
        def fwd(x):
            return np.exp(_log_softmax(x, axis))

        def bwd(g, out, x, needs):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
        return self._record("softmax", (a,), fwd, bwd, name)

    def cross_entropy(self, logits, targets, weights=None, name=None):
        """Weighted mean of -log softmax(logits)[target] over leading axes.

        ``weights`` (same shape as ``targets``) masks out padding; the mean
        is taken over the total weight.
        """
        targets = np.asarray(targets, dtype=np.int64)
        w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=DTYPE)
        total = w.sum()
        if total <= 0:
            raise GraphError("cross_entropy with zero total weight")

        def fwd(x):
            if x.shape[:-1] != targets.shape:
                raise ShapeError(f"logits {x.shape} vs targets {targets.shape}")
            logp = _log_softmax(x)
            picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
            return np.array(-(w * picked).sum() / total)

        def bwd(g, out, x, needs):
            p = np.exp(_log_softmax(x))
            np.put_along_axis(p, targets[..., None],
                              np.take_along_axis(p, targets[..., None], axis=-1) - 1.0,
                              axis=-1)
            return (p * (w / total)[..., None] * g,)
        return self._record("cross_entropy", (logits,), fwd, bwd, name)

    def dropout(self, a, mask, name=None):
        """Multiply by a precomputed inverted-dropout mask (see :func:`dropout_mask`)."""
        mask = np.asarray(mask, dtype=DTYPE)

        def fwd(x):
            return x * mask

        def bwd(g, out, x, needs):
            return (g * mask,)
        return self._record("dropout", (a,), fwd, bwd, name)

    def lstm_scan(self, x_proj, U, p_i, p_f, p_o, name=None):
        """Peephole LSTM over a whole sequence as one node.

        ``x_proj`` is the ``(B, T, 4H)`` input projection (gate blocks i, f,
        g, o, bias included); returns ``(B, T, H)`` hidden states from a zero
        initial state. Backward is hand-written BPTT; it must agree with
        chaining :meth:`sigmoid`/:meth:`tanh`/:meth:`mul` per step.
        """
        cache = {}

        def fwd(xp, u, pi, pf, po):
            B, T, H4 = xp.shape
            H = H4 // 4
            if u.shape != (H, H4):
                raise ShapeError(f"recurrent matrix {u.shape} != {(H, H4)}")
            h = np.zeros((B, H))
            c = np.zeros((B, H))
            hs = np.empty((B, T, H))
            gates = np.empty((T, 4, B, H))
            cs = np.empty((T + 1, B, H))
            cs[0] = c
            for t in range(T):
                z = xp[:, t] + h @ u
                i = _sigmoid(z[:, :H] + c * pi)
                f = _sigmoid(z[:, H:2 * H] + c * pf)
                g = np.tanh(z[:, 2 * H:3 * H])
                c = f * c + i * g
                o = _sigmoid(z[:, 3 * H:] + c * po)
                h = o * np.tanh(c)
                hs[:, t] = h
                gates[t] = (i, f, g, o)
                cs[t + 1] = c
            cache["gates"], cache["cs"] = gates, cs
            return hs

        def bwd(gh, hs, xp, u, pi, pf, po, needs):
            B, T, H = hs.shape
            gates, cs = cache["gates"], cache["cs"]
            dxp = np.zeros_like(xp)
            du = np.zeros_like(u)
            dpi, dpf, dpo = np.zeros_like(pi), np.zeros_like(pf), np.zeros_like(po)
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            for t in range(T - 1, -1, -1):
                i, f, g, o = gates[t]
                c, c_prev = cs[t + 1], cs[t]
                tc = np.tanh(c)
                dh = gh[:, t] + dh_next
                dzo = dh * tc * o * (1.0 - o)
                dc = dc_next + dh * o * (1.0 - tc * tc) + dzo * po
                dzi = dc * g * i * (1.0 - i)
                dzf = dc * c_prev * f * (1.0 - f)
                dzg = dc * i * (1.0 - g * g)
                dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
                dxp[:, t] = dz
                dpo += (dzo * c).sum(axis=0)
                dpi += (dzi * c_prev).sum(axis=0)
                dpf += (dzf * c_prev).sum(axis=0)
                if t > 0:
                    du += hs[:, t - 1].T @ dz
                dh_next = dz @ u.T
                dc_next = dc * f + dzi * pi + dzf * pf
            return dxp, du, dpi, dpf, dpo
        return self._record("lstm_scan", (x_proj, U, p_i, p_f, p_o), fwd, bwd, name)

    def grl(self, a, lam=1.0, name=None):
        """Gradient reversal: identity forward, ``-lam * upstream`` backward."""
        lam = float(lam)
        if lam < 0:
            raise ValueError(f"GRL lambda must be non-negative, got {lam}")

        def fwd(x):
            return x.copy()

        def bwd(g, out, x, needs):
            return (-lam * g,)
        return self._record("grl", (a,), fwd, bwd, name)


def dropout_mask(shape, keep_prob, rng=None, train=True):
    """Inverted-dropout mask: entries are 0 or ``1/keep_prob``.

    ``rng`` is a seed or a ``np.random.Generator``. With ``train=False`` the
    mask is all ones.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not train or keep_prob == 1.0:
        return np.ones(shape, dtype=DTYPE)
    rng = np.random.default_rng(rng)
    return (rng.random(shape) < keep_prob).astype(DTYPE) / keep_prob


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state):
    """One in-place Adam update with bias correction.

    ``params`` and ``grads`` are parallel lists of arrays; a ``None`` gradient
    leaves that parameter (and its moments) untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and Adam moments differ in length")
    for p, g, m in zip(params, grads, state.m):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"Adam shape mismatch: param {p.shape}, grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to Adam")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # eps scaled so the update equals the textbook m_hat / (sqrt(v_hat) + eps)
        p -= lr_t * m / (np.sqrt(v) + state.eps * np.sqrt(1.0 - b2 ** t))
    return params, state


class Adam:
    """Adam over a fixed list of parameter tensors, reading ``param.grad``."""

    def __init__(self, params, lr=0.0005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params([p.value for p in self.params],
                                          lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step([p.value for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def numeric_gradient(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def gradient_check(graph, loss, params, h=1e-5):
    """Compare analytic gradients with central differences via ``graph.evaluate``.

    Returns ``{param.name or index: relative error}``.
    """
    for p in params:
        p.grad = None
    analytic = graph.backward(loss, params)

    def f():
        graph.evaluate()
        return float(loss.value)

    errors = {}
    for k, (p, a) in enumerate(zip(params, analytic)):
        numeric = numeric_gradient(f, p.value, h)
        errors[p.name or k] = relative_error(a, numeric)
    graph.evaluate()
    return errors
