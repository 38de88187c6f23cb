import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoattn import task as tk
from monoattn.task import TaskConfig


@pytest.fixture
def patterns():
    return tk.make_patterns(8, 9, 1234)


def test_render_frames_progress_channel(patterns):
    frames = tk.render_frames([2, 5], [3, 2], patterns)
    assert frames.shape == (5, 9)
    np.testing.assert_allclose(frames[:, -1], [0, 1 / 3, 2 / 3, 0, 1 / 2])
    np.testing.assert_array_equal(frames[:3, :-1], np.tile(patterns[2], (3, 1)))
    np.testing.assert_array_equal(frames[3:, :-1], np.tile(patterns[5], (2, 1)))


def test_render_single_frame(patterns):
    frames = tk.render_frames([4], [1], patterns)
    assert frames.shape == (1, 9)
    assert frames[0, -1] == 0.0


def test_render_rejects_zero_duration(patterns):
    with pytest.raises(ValueError, match="positive"):
        tk.render_frames([1, 2], [2, 0], patterns)


def test_gen_sample_deterministic_and_in_range(patterns):
    cfg = TaskConfig()
    a = tk.gen_sample(np.random.default_rng(5), cfg, patterns)
    b = tk.gen_sample(np.random.default_rng(5), cfg, patterns)
    assert a == b
    assert cfg.min_length <= len(a.tokens) <= cfg.max_length
    assert ((a.durations >= cfg.min_duration) & (a.durations <= cfg.max_duration)).all()
    assert len(a.frames) == a.durations.sum()


def test_shared_token_shares_pattern():
    train, _ = tk.generate(TaskConfig(train_size=20, test_size=0))
    rows = {}
    for s in train:
        for tok, (start, d) in zip(s.tokens, zip(np.cumsum(s.durations) - s.durations, s.durations)):
            rows.setdefault(int(tok), []).append(s.frames[start, :-1])
    for vecs in rows.values():
        for v in vecs[1:]:
            np.testing.assert_array_equal(v, vecs[0])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_gold_alignment_is_staircase(seed):
    cfg = TaskConfig()
    s = tk.gen_sample(np.random.default_rng(seed), cfg, tk.make_patterns(cfg.vocab_size, cfg.frame_width, 1))
    gold = s.gold_alignment
    assert len(gold) == len(s.frames)
    assert (np.diff(gold) >= 0).all()
    assert set(gold.tolist()) == set(range(len(s.tokens)))


def test_dataset_round_trip(tmp_path):
    cfg = TaskConfig(train_size=15, test_size=0)
    train, _ = tk.generate(cfg)
    path = tmp_path / "d.txt"
    tk.write_dataset(train, path, cfg.pattern_seed, cfg.frame_width)
    assert path.read_text().splitlines()[0] == "monoattn-data v1 pattern_seed=1234 frame_width=9"
    assert tk.read_dataset(path, cfg.vocab_size) == train


def test_dataset_line_format(tmp_path, patterns):
    s = tk.TaskSample(np.array([2, 5, 7]), np.array([3, 2, 4]), tk.render_frames([2, 5, 7], [3, 2, 4], patterns))
    path = tmp_path / "d.txt"
    tk.write_dataset([s], path, 1234, 9)
    assert path.read_text().splitlines()[1] == "2 5 7 | 3 2 4"


def test_tampered_seed_changes_frames(tmp_path):
    cfg = TaskConfig(train_size=3, test_size=0)
    train, _ = tk.generate(cfg)
    path = tmp_path / "d.txt"
    tk.write_dataset(train, path, cfg.pattern_seed, cfg.frame_width)
    other = tk.read_dataset(path, cfg.vocab_size, pattern_seed=cfg.pattern_seed + 1)
    assert not np.array_equal(other[0].frames, train[0].frames)
    np.testing.assert_array_equal(other[0].tokens, train[0].tokens)


def test_empty_body(tmp_path):
    path = tmp_path / "d.txt"
    tk.write_dataset([], path, 3, 9)
    assert tk.read_dataset(path, 8) == []


@pytest.mark.parametrize("line", ["1 2 3", "1 2 | 3", "1 x | 2", "9 | 2", "1 | 0", " | "])
def test_malformed_line_reports_line_number(tmp_path, line):
    path = tmp_path / "d.txt"
    path.write_text(f"monoattn-data v1 pattern_seed=1 frame_width=9\n0 | 2\n{line}\n")
    with pytest.raises(ValueError, match=":3:"):
        tk.read_dataset(path, 8)


def test_bad_header(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text("monoattn-data v1 pattern_seed=1\n")
    with pytest.raises(ValueError, match="frame_width"):
        tk.read_dataset(path, 8)


def test_generation_reproducible(tmp_path):
    cfg = TaskConfig(train_size=30, test_size=5)
    for name in ("a", "b"):
        train, test = tk.generate(cfg)
        tk.write_dataset(train + test, tmp_path / name, cfg.pattern_seed, cfg.frame_width)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_config_validation():
    with pytest.raises(ValueError):
        TaskConfig(min_duration=0)
    with pytest.raises(ValueError):
        TaskConfig(min_duration=4, max_duration=3)
    with pytest.raises(ValueError):
        TaskConfig(min_length=6, max_length=5)
