"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Graphs are built eagerly: every op returns a new :class:`Tensor` holding its
value and, when any input is tracked, a closure mapping the output gradient
to input gradients. ``backward`` walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from collections.abc import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value.item())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)

    def __getitem__(self, idx) -> Tensor:
        return slice_(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the graph edge only when needed."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(value, True, tuple(parents), backward_fn)
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape("div", a, b)
    av, bv = a.value, b.value
    out = av / bv

    def bw(g):
        ga = g / bv
        return _unbroadcast(ga, av.shape), _unbroadcast(-ga * out, bv.shape)

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a non-differentiable constant."""
    a = as_tensor(a)
    return _make(a.value * c, (a,), lambda g: (g * c,))


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` with a constant floor."""
    a = as_tensor(a)
    keep = a.value >= floor
    return _make(np.where(keep, a.value, floor), (a,), lambda g: (g * keep,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(np.atleast_1d(a.value)).reshape(a.shape)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """``log(1 + exp(a))``, computed stably."""
    a = as_tensor(a)
    v = a.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    sig = _sigmoid(np.atleast_1d(v)).reshape(v.shape)
    return _make(out, (a,), lambda g: (g * sig,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sign,))


# ------------------------------------------------------------------- linear


def matvec(m, v) -> Tensor:
    """Matrix (r, c) times vector (c,) -> (r,)."""
    m, v = as_tensor(m), as_tensor(v)
    if m.value.ndim != 2 or v.value.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError("matvec", m.shape, v.shape)
    mv, vv = m.value, v.value
    return _make(mv @ vv, (m, v), lambda g: (np.outer(g, vv), g @ mv))


def matmul(a, b) -> Tensor:
    """General 2-D/1-D matrix product following numpy ``@`` semantics."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.shape[-1] != bv.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    if av.ndim == 2 and bv.ndim == 1:
        return matvec(a, b)

    def bw(g):
        if av.ndim == 1:  # (k,) @ (k, m) -> (m,)
            return bv @ g, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), bw)


def linear(w, x, b=None) -> Tensor:
    """``w @ x + b`` as a single node (the common dense-layer pattern)."""
    w, x = as_tensor(w), as_tensor(x)
    if w.value.ndim != 2 or x.value.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError("linear", w.shape, x.shape)
    wv, xv = w.value, x.value
    out = wv @ xv
    if b is None:
        return _make(out, (w, x), lambda g: (np.outer(g, xv), g @ wv))
    b = as_tensor(b)
    if b.shape != out.shape:
        raise ShapeError("linear", w.shape, x.shape, b.shape, detail="bias")
    return _make(out + b.value, (w, x, b), lambda g: (np.outer(g, xv), g @ wv, g))


# --------------------------------------------------------------- structural


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(p.shape for p in parts)) from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, parts, bw)


def stack(parts: Sequence) -> Tensor:
    """Stack equal-shaped tensors along a new leading axis."""
    parts = [as_tensor(p) for p in parts]
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ShapeError("stack", *(p.shape for p in parts))
    out = np.stack([p.value for p in parts])
    return _make(out, parts, lambda g: tuple(g))


def slice_(a, idx) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value[idx]
    except IndexError:
        raise ShapeError("slice", a.shape, detail=f"index {idx!r}") from None
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        if _is_fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _make(out, (a,), bw)


def _is_fancy(idx) -> bool:
    if isinstance(idx, tuple):
        return any(_is_fancy(i) for i in idx)
    return isinstance(idx, (list, np.ndarray))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.T, (a,), lambda g: (g.T,))


def shift_right(a) -> Tensor:
    """``[0, a_1, ..., a_{N-1}]`` for a vector ``a`` of length N."""
    a = as_tensor(a)
    if a.value.ndim != 1:
        raise ShapeError("shift_right", a.shape)
    out = np.empty_like(a.value)
    out[0] = 0.0
    out[1:] = a.value[:-1]

    def bw(g):
        ga = np.zeros_like(g)
        ga[:-1] = g[1:]
        return (ga,)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------- reductions


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.value.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


# ------------------------------------------------------------------ softmax


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax of a vector (or each row of a matrix).

    ``mask`` (boolean, same shape) restricts the support: masked-out entries
    get exactly zero weight and zero gradient.
    """
    a = as_tensor(a)
    x = a.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError("softmax", x.shape, mask.shape, detail="mask")
        if not mask.any(axis=-1).all():
            raise ShapeError("softmax", x.shape, detail="mask leaves an empty row")
        x = np.where(mask, x, -np.inf)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), bw)


# -------------------------------------------------------------- convolution


def conv1d_same(a, kernels) -> Tensor:
    """Zero-padded "same" 1-D cross-correlation of a vector with a kernel bank.

    ``a`` has shape (N,), ``kernels`` shape (k, l) with odd l. Returns (N, k)
    where ``out[n, j] = sum_i kernels[j, i] * a[n + i - (l - 1) // 2]``.
    """
    a, kernels = as_tensor(a), as_tensor(kernels)
    if a.value.ndim != 1 or kernels.value.ndim != 2:
        raise ShapeError("conv1d", a.shape, kernels.shape)
    l = kernels.shape[1]
    if l % 2 == 0:
        raise ShapeError("conv1d", a.shape, kernels.shape, detail="kernel length must be odd")
    half = (l - 1) // 2
    n = a.shape[0]
    padded = np.zeros(n + 2 * half, dtype=DTYPE)
    padded[half:half + n] = a.value
    windows = np.lib.stride_tricks.sliding_window_view(padded, l)  # (N, l)
    kv = kernels.value

    def bw(g):
        gw = g @ kv  # (N, l)
        gp = np.zeros_like(padded)
        for i in range(l):
            gp[i:i + n] += gw[:, i]
        return gp[half:half + n], g.T @ windows

    return _make(windows @ kv.T, (a, kernels), bw)


# ------------------------------------------------------------------ backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every tracked node."""
    if loss.size != 1 or loss.value.ndim > 1:
        raise ShapeError("backward", loss.shape, detail="loss must be scalar")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf: accumulate
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ----------------------------------------------------------- parameter store


class ParameterStore:
    """Named trainable tensors, iterated in name order."""

    def __init__(self, entries: dict[str, np.ndarray] | None = None):
        self._entries: dict[str, Tensor] = {}
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._entries[name]

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self._entries.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._entries) - set(values)
        extra = set(values) - set(self._entries)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, v in values.items():
            t = self._entries[name]
            v = np.asarray(v, dtype=DTYPE)
            if v.shape != t.shape:
                raise ShapeError("load", t.shape, v.shape, detail=name)
            t.value = v.copy()


# ---------------------------------------------------------------------- Adam


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParameterStore) -> None:
        """Apply one bias-corrected Adam update. Gradients are left in place."""
        items = list(params.items())
        for name, t in items:
            if t.grad is None:
                raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, t in items:
            g = t.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(t.value)
                self.v[name] = np.zeros_like(t.value)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            t.value = t.value - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_grad_norm(params: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for _, t in params.items() if t.grad is not None))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for _, t in params.items():
            if t.grad is not None:
                t.grad = t.grad * factor
    return total


# ---------------------------------------------------------- finite differences


class NonFiniteError(ArithmeticError):
    pass


def _perturbed(fn, t: Tensor, base: np.ndarray, i: int, delta: float, name: str) -> float:
    pert = base.copy()
    pert.reshape(-1)[i] += delta
    t.value = pert
    try:
        with no_grad():
            f = fn().item()
    finally:
        t.value = base
    if not math.isfinite(f):
        raise NonFiniteError(f"non-finite value perturbing {name}[{i}] by {delta:+g}")
    return f


def finite_diff_check(fn: Callable[[], Tensor], params: ParameterStore,
                      step: float = 1e-5, order: int = 2) -> dict[str, float]:
    """Compare backprop gradients with central differences.

    ``fn`` must rebuild its graph from the current parameter values on every
    call. ``order=2`` is the plain ``(f(x+h) - f(x-h)) / 2h`` stencil; ``order=4``
    uses the five-point stencil, whose tiny truncation error allows a larger
    ``step`` and hence less roundoff on small gradient entries.

    Returns, per parameter, the max over coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    # (offset, weight) pairs applied as weight * (f(x + off h) - f(x - off h)),
    # so an unaffected coordinate gives exactly zero
    pairs = ((1.0, 0.5),) if order == 2 else ((1.0, 8 / 12), (2.0, -1 / 12))
    params.zero_grad()
    loss = fn()
    if loss.size != 1:
        raise ShapeError("finite_diff_check", loss.shape, detail="fn must return a scalar")
    if not np.isfinite(loss.value).all():
        raise NonFiniteError("fn returned a non-finite value at the unperturbed point")
    backward(loss)
    report: dict[str, float] = {}
    for name, t in params.items():
        analytic = np.zeros_like(t.value) if t.grad is None else t.grad.copy()
        base = t.value.copy()
        numeric = np.empty_like(base)
        flat = numeric.reshape(-1)
        for i in range(base.size):
            acc = 0.0
            for off, wgt in pairs:
                f_plus, f_minus = (_perturbed(fn, t, base, i, sgn * off * step, name) for sgn in (1.0, -1.0))
                acc += wgt * (f_plus - f_minus)
            flat[i] = acc / step
        t.value = base
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        report[name] = float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
    params.zero_grad()
    return report


# ---------------------------------------------------------------- checkpoint

CKPT_HEADER = "monoattn-ckpt v1"


def save_checkpoint(params: ParameterStore | dict[str, np.ndarray], path) -> None:
    values = params.snapshot() if isinstance(params, ParameterStore) else params
    lines = [CKPT_HEADER]
    for name in sorted(values):
        v = np.asarray(values[name], dtype=DTYPE)
        dims = " ".join(str(d) for d in v.shape)
        nums = " ".join(format(float(x), ".17g") for x in v.reshape(-1))
        lines.append(f"{name}\t{dims}\t{nums}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CKPT_HEADER:
        raise ValueError(f"{path}: not a {CKPT_HEADER!r} file")
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            name, dims, nums = line.split("\t")
            shape = tuple(int(d) for d in dims.split())
            flat = np.array([float(x) for x in nums.split()], dtype=DTYPE)
            out[name] = flat.reshape(shape)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed checkpoint line ({exc})") from None
    return out
