"""Content-based attention, its stabilizers, and forward attention.

All functions take and return :class:`~monoattn.autodiff.Tensor` objects (plain
arrays are accepted and treated as constants), so every path is
differentiable. Encoder positions are 1-based in the public vocabulary
(window centres, paths) and 0-based in arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MECHANISMS = ("baseline", "fa", "fa-ta")
STABILIZERS = ("none", "window", "conv")

# keeps the renormalizing division finite if the mass underflows after many steps
NORM_FLOOR = 1e-30


class DegenerateAlignmentError(ArithmeticError):
    """The forward update annihilated all probability mass."""


@dataclass
class AttentionParams:
    v: Tensor
    W: Tensor
    V: Tensor
    b: Tensor
    U: Tensor | None = None
    F: Tensor | None = None

    def __post_init__(self):
        if (self.U is None) != (self.F is None):
            raise ValueError("U and F must be given together (convolutional features on or off)")
        width = self.v.shape[0]
        for name in ("W", "V", "U"):
            m = getattr(self, name)
            if m is not None and m.shape[0] != width:
                raise ad.ShapeError("attention params", self.v.shape, m.shape, detail=f"{name} rows")
        if self.b.shape != (width,):
            raise ad.ShapeError("attention params", self.v.shape, self.b.shape, detail="bias")
        if self.U is not None and self.U.shape[1] != self.F.shape[0]:
            raise ad.ShapeError("attention params", self.U.shape, self.F.shape, detail="U columns vs filters")

    @property
    def has_conv(self) -> bool:
        return self.U is not None


@dataclass(frozen=True)
class WindowConfig:
    w: int
    p: int  # 1-based centre

    def bounds(self, n: int) -> tuple[int, int]:
        """0-based half-open [lo, hi) of the effective window over n positions."""
        if self.w < 0:
            raise ValueError(f"window half-width must be nonnegative, got {self.w}")
        lo = max(self.p - self.w, 1)
        hi = min(self.p + self.w, n)
        if lo > hi:
            raise ValueError(f"window p={self.p}, w={self.w} does not intersect positions 1..{n}")
        return lo - 1, hi

    def mask(self, n: int) -> np.ndarray:
        lo, hi = self.bounds(n)
        m = np.zeros(n, dtype=bool)
        m[lo:hi] = True
        return m


@dataclass
class ForwardState:
    alpha_hat_prev: Tensor
    u_prev: Tensor | float = 0.5
    t: int = 0

    @classmethod
    def initial(cls, n: int) -> ForwardState:
        return cls(Tensor(initial_alignment(n)), 0.5, 0)


def initial_alignment(n: int) -> np.ndarray:
    a = np.zeros(n)
    a[0] = 1.0
    return a


def window_center(prev_alignment) -> int:
    """Mode of the previous alignment, ties going to the larger index (1-based)."""
    a = ad.as_tensor(prev_alignment).value
    return int(len(a) - np.argmax(a[::-1]))


def memory_keys(x, params: AttentionParams) -> Tensor:
    """Per-position memory projections ``V x_n`` as an (N, A) matrix."""
    x = ad.as_tensor(x)
    if x.value.ndim != 2 or x.shape[1] != params.V.shape[1]:
        raise ad.ShapeError("energies", x.shape, params.V.shape, detail="memory width")
    return ad.matmul(x, ad.transpose(params.V))


def energies(q, x, params: AttentionParams, f=None, keys: Tensor | None = None) -> Tensor:
    """``e_n = v . tanh(W q + V x_n + U f_n + b)`` for every encoder position.

    ``keys`` may carry a precomputed ``memory_keys(x, params)`` so the memory
    projection is done once per sequence.
    """
    q = ad.as_tensor(q)
    if params.W.shape[1] != q.shape[0]:
        raise ad.ShapeError("energies", params.W.shape, q.shape, detail="query width")
    if (f is None) == params.has_conv:
        raise ValueError("conv features must be given exactly when params carry U and F")
    if keys is None:
        keys = memory_keys(x, params)
    pre = ad.add(keys, ad.linear(params.W, q, params.b))
    if f is not None:
        f = ad.as_tensor(f)
        if f.value.ndim != 2 or f.shape != (keys.shape[0], params.U.shape[1]):
            raise ad.ShapeError("energies", f.shape, params.U.shape, detail="conv features")
        pre = ad.add(pre, ad.matmul(f, ad.transpose(params.U)))
    return ad.matvec(ad.tanh(pre), params.v)


def normalize(e, window: WindowConfig | None = None) -> Tensor:
    """Softmax over the (optionally windowed) positions."""
    e = ad.as_tensor(e)
    if not np.isfinite(e.value).all():
        raise ValueError("energies must be finite")
    mask = None if window is None else window.mask(e.shape[0])
    return ad.softmax(e, mask)


def conv_features(a_prev, F) -> Tensor:
    """Convolve the previous alignment with each kernel: (N,) x (k, l) -> (N, k)."""
    return ad.conv1d_same(a_prev, F)


def context(weights, x) -> Tensor:
    """Weighted sum of encoder outputs."""
    weights, x = ad.as_tensor(weights), ad.as_tensor(x)
    if x.value.ndim != 2 or weights.shape != (x.shape[0],):
        raise ad.ShapeError("context", weights.shape, x.shape)
    return ad.matmul(weights, x)


def _renormalize(alpha_prime: Tensor) -> Tensor:
    total = ad.sum_(alpha_prime)
    if total.item() == 0.0:
        raise DegenerateAlignmentError(
            "forward update left no probability mass; the attention window is disjoint "
            "from the reachable positions, widen the window")
    return ad.div(alpha_prime, ad.maximum(total, NORM_FLOOR))


def forward_step(state: ForwardState, y) -> tuple[Tensor, ForwardState]:
    """One step of forward attention: both experts (stay, advance) weigh equally."""
    y = ad.as_tensor(y)
    prev = state.alpha_hat_prev
    if prev.shape != y.shape:
        raise ad.ShapeError("forward_step", prev.shape, y.shape)
    alpha_prime = ad.mul(ad.add(prev, ad.shift_right(prev)), y)
    alpha_hat = _renormalize(alpha_prime)
    return alpha_hat, ForwardState(alpha_hat, state.u_prev, state.t + 1)


def forward_ta_step(state: ForwardState, y, u_prev=None) -> tuple[Tensor, ForwardState]:
    """Forward attention step where ``u_prev`` is the probability of advancing.

    ``u_prev`` defaults to ``state.u_prev``. The returned state still carries the
    ``u`` that was consumed; the decoder overwrites it with the agent's output
    once the new context is known.
    """
    y = ad.as_tensor(y)
    u = ad.as_tensor(state.u_prev if u_prev is None else u_prev)
    prev = state.alpha_hat_prev
    if prev.shape != y.shape:
        raise ad.ShapeError("forward_ta_step", prev.shape, y.shape)
    if u.size != 1:
        raise ad.ShapeError("forward_ta_step", u.shape, detail="u must be scalar")
    u = ad.reshape(u, ())
    stay = ad.mul(ad.sub(1.0, u), prev)
    move = ad.mul(u, ad.shift_right(prev))
    alpha_prime = ad.mul(ad.add(stay, move), y)
    alpha_hat = _renormalize(alpha_prime)
    return alpha_hat, ForwardState(alpha_hat, u, state.t + 1)


@dataclass
class AgentParams:
    W1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def transition_prob(c, o_prev, q, agent: AgentParams, bias: float = 0.0) -> Tensor:
    """Probability of moving to the next encoder position at the next step.

    One tanh hidden layer over ``[c; o_prev; q]`` and a sigmoid output; ``bias``
    is added to the logit (zero in training, nonzero for speed control).
    """
    inp = ad.concat([ad.as_tensor(c), ad.as_tensor(o_prev), ad.as_tensor(q)])
    if agent.W1.shape[1] != inp.shape[0]:
        raise ad.ShapeError("transition_prob", agent.W1.shape, inp.shape)
    h = ad.tanh(ad.linear(agent.W1, inp, agent.b1))
    logit = ad.add(ad.matvec(ad.reshape(agent.w2, (1, -1)), h), agent.b2)
    if bias:
        logit = ad.add(logit, bias)
    return ad.reshape(ad.sigmoid(logit), ())
