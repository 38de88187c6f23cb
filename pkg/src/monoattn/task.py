"""Synthetic monotonic expansion task: tokens -> runs of pattern frames.

Each token owns a fixed random pattern vector; a token with duration d emits
d frames, each the pattern plus a progress channel ``j / d``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

DATA_HEADER = "monoattn-data v1"


@dataclass
class TaskConfig:
    vocab_size: int = 8
    min_duration: int = 2
    max_duration: int = 5
    min_length: int = 5
    max_length: int = 12
    frame_width: int = 9
    pattern_seed: int = 1234
    train_size: int = 2000
    test_size: int = 200
    data_seed: int = 7

    def __post_init__(self):
        if self.min_duration < 1:
            raise ValueError("min_duration must be >= 1")
        if self.min_duration > self.max_duration:
            raise ValueError("duration range is empty")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("token-length range is empty or starts below 1")
        if self.frame_width < 2:
            raise ValueError("frame_width must leave room for a pattern and the progress channel")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TaskSample:
    tokens: np.ndarray  # (L,) int
    durations: np.ndarray  # (L,) int
    frames: np.ndarray  # (sum durations, frame_width)

    @property
    def gold_alignment(self) -> np.ndarray:
        """0-based token index for every frame."""
        return np.repeat(np.arange(len(self.tokens)), self.durations)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaskSample):
            return NotImplemented
        return (np.array_equal(self.tokens, other.tokens)
                and np.array_equal(self.durations, other.durations)
                and np.array_equal(self.frames, other.frames))


def make_patterns(vocab_size: int, frame_width: int, pattern_seed: int) -> np.ndarray:
    rng = np.random.default_rng(pattern_seed)
    return rng.standard_normal((vocab_size, frame_width - 1))


def render_frames(tokens, durations, patterns: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=int)
    durations = np.asarray(durations, dtype=int)
    if tokens.shape != durations.shape:
        raise ValueError("tokens and durations differ in length")
    if (durations < 1).any():
        raise ValueError(f"durations must be positive, got {durations.tolist()}")
    rows = []
    for tok, d in zip(tokens, durations):
        progress = np.arange(d) / d
        rows.append(np.column_stack([np.tile(patterns[tok], (d, 1)), progress]))
    return np.vstack(rows)


def gen_sample(rng: np.random.Generator, config: TaskConfig, patterns: np.ndarray) -> TaskSample:
    length = int(rng.integers(config.min_length, config.max_length + 1))
    tokens = rng.integers(0, config.vocab_size, size=length)
    durations = rng.integers(config.min_duration, config.max_duration + 1, size=length)
    return TaskSample(tokens, durations, render_frames(tokens, durations, patterns))


def generate(config: TaskConfig) -> tuple[list[TaskSample], list[TaskSample]]:
    """Deterministic (train, test) split for a task config."""
    patterns = make_patterns(config.vocab_size, config.frame_width, config.pattern_seed)
    rng = np.random.default_rng(config.data_seed)
    train = [gen_sample(rng, config, patterns) for _ in range(config.train_size)]
    test = [gen_sample(rng, config, patterns) for _ in range(config.test_size)]
    return train, test


def write_dataset(samples, path, pattern_seed: int, frame_width: int) -> None:
    lines = [f"{DATA_HEADER} pattern_seed={pattern_seed} frame_width={frame_width}"]
    for s in samples:
        toks = " ".join(str(int(t)) for t in s.tokens)
        durs = " ".join(str(int(d)) for d in s.durations)
        lines.append(f"{toks} | {durs}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str, path) -> dict[str, int]:
    if not line.startswith(DATA_HEADER):
        raise ValueError(f"{path}:1: missing {DATA_HEADER!r} header")
    fields_ = {}
    for item in line[len(DATA_HEADER):].split():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"{path}:1: malformed header field {item!r}")
        fields_[key] = int(value)
    for key in ("pattern_seed", "frame_width"):
        if key not in fields_:
            raise ValueError(f"{path}:1: header lacks {key}")
    return fields_


def read_dataset(path, vocab_size: int, pattern_seed: int | None = None) -> list[TaskSample]:
    """Read samples, re-rendering frames from the header's pattern seed.

    ``pattern_seed`` overrides the header (used to confirm frames really depend on it).
    """
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = _parse_header(lines[0], path)
    seed = header["pattern_seed"] if pattern_seed is None else pattern_seed
    patterns = make_patterns(vocab_size, header["frame_width"], seed)
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            left, sep, right = line.partition("|")
            if not sep:
                raise ValueError("no '|' separator")
            tokens = np.array([int(t) for t in left.split()], dtype=int)
            durations = np.array([int(d) for d in right.split()], dtype=int)
            if len(tokens) == 0 or len(tokens) != len(durations):
                raise ValueError("token and duration counts differ or are empty")
            if (tokens < 0).any() or (tokens >= vocab_size).any():
                raise ValueError(f"token id outside 0..{vocab_size - 1}")
            frames = render_frames(tokens, durations, patterns)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed sample line ({exc})") from None
        samples.append(TaskSample(tokens, durations, frames))
    return samples
