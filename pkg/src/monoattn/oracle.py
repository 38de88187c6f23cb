"""Brute-force sums over monotonic alignment paths.

Deliberately naive: plain products over explicitly enumerated paths. It exists
only to check the forward recursions on small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MAX_STEPS_EXP = 20


class OracleTooLarge(ValueError):
    pass


@dataclass
class AttentionTrace:
    Y: np.ndarray  # (T, N), row t is the attention at step t + 1
    U: np.ndarray | None = None  # (T,), U[t] weighs the move into step t + 1

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2:
            raise ValueError(f"Y must be (T, N), got shape {self.Y.shape}")
        if self.U is not None:
            self.U = np.asarray(self.U, dtype=np.float64)
            if self.U.shape != (self.Y.shape[0],):
                raise ValueError(f"U must have length T={self.Y.shape[0]}, got {self.U.shape}")

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]


def enumerate_paths(N: int, T: int) -> list[tuple[int, ...]]:
    """All paths (pi_0=1, ..., pi_T) moving right by 0 or 1 and staying within 1..N."""
    if N < 1 or T < 0:
        raise ValueError(f"need N >= 1 and T >= 0, got N={N}, T={T}")
    if T > MAX_STEPS_EXP:
        raise OracleTooLarge(f"2^{T} step patterns exceeds the 2^{MAX_STEPS_EXP} guard; use a smaller T")
    paths = []
    for steps in itertools.product((0, 1), repeat=T):
        path = [1]
        for s in steps:
            path.append(path[-1] + s)
        if path[-1] <= N:
            paths.append(tuple(path))
    return paths


def path_probability(path, trace: AttentionTrace) -> float:
    if len(path) != trace.T + 1:
        raise ValueError(f"path has {len(path)} entries, trace needs {trace.T + 1}")
    p = 1.0
    for t in range(1, len(path)):
        p *= trace.Y[t - 1, path[t] - 1]
        if trace.U is not None:
            u = trace.U[t - 1]
            p *= u if path[t] == path[t - 1] + 1 else 1.0 - u
    return p


def brute_force_alpha(trace: AttentionTrace, normalize: bool = True) -> np.ndarray:
    """Row t holds the total probability of length-(t+1) prefixes ending at each n."""
    T, N = trace.T, trace.N
    out = np.zeros((T, N))
    for t in range(1, T + 1):
        prefix = AttentionTrace(trace.Y[:t], None if trace.U is None else trace.U[:t])
        for path in enumerate_paths(N, t):
            out[t - 1, path[-1] - 1] += path_probability(path, prefix)
    if normalize:
        out /= out.sum(axis=1, keepdims=True)
    return out


def count_paths_dp(N: int, T: int) -> int:
    """Number of monotonic paths via R(n, t) = R(n, t-1) + R(n-1, t-1)."""
    R = [0] * (N + 1)
    R[1] = 1
    for _ in range(T):
        R = [0] + [R[n] + R[n - 1] for n in range(1, N + 1)]
    return sum(R)


def random_trace(rng: np.random.Generator, N: int, T: int, with_u: bool = False,
                 sparsity: float = 0.0) -> AttentionTrace:
    """Random simplex rows; ``sparsity`` zeroes entries at random (keeping rows nonzero)."""
    Y = rng.random((T, N)) + 1e-3
    if sparsity > 0:
        Y = Y * (rng.random((T, N)) >= sparsity)
        for row in Y:
            if not row.any():
                row[rng.integers(N)] = 1.0
    Y /= Y.sum(axis=1, keepdims=True)
    U = rng.random(T) if with_u else None
    return AttentionTrace(Y, U)


def recursion_alpha(trace: AttentionTrace) -> np.ndarray:
    """Iterate the forward recursion over a trace (transition variant when U is set)."""
    from .attention import ForwardState, forward_step, forward_ta_step

    state = ForwardState.initial(trace.N)
    rows = []
    for t in range(trace.T):
        if trace.U is None:
            alpha, state = forward_step(state, trace.Y[t])
        else:
            alpha, state = forward_ta_step(state, trace.Y[t], float(trace.U[t]))
        rows.append(alpha.value)
    return np.array(rows).reshape(trace.T, trace.N)


def oracle_check(trials: int = 100, max_n: int = 6, max_t: int = 8, seed: int = 0) -> dict[str, float]:
    """Max absolute deviation between recursion and enumeration over random traces."""
    rng = np.random.default_rng(seed)
    worst = {"fa": 0.0, "fa-ta": 0.0}
    for _ in range(trials):
        N = int(rng.integers(1, max_n + 1))
        T = int(rng.integers(1, max_t + 1))
        for key, with_u in (("fa", False), ("fa-ta", True)):
            trace = random_trace(rng, N, T, with_u=with_u)
            dev = np.max(np.abs(recursion_alpha(trace) - brute_force_alpha(trace)))
            worst[key] = max(worst[key], float(dev))
    return worst
