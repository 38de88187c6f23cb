import numpy as np
import pytest

from monoattn import oracle
from monoattn.oracle import AttentionTrace


def test_enumerate_small_cases():
    assert oracle.enumerate_paths(2, 2) == [(1, 1, 1), (1, 1, 2), (1, 2, 2)]
    assert len(oracle.enumerate_paths(3, 3)) == 7
    assert oracle.enumerate_paths(1, 5) == [(1,) * 6]
    assert oracle.enumerate_paths(4, 0) == [(1,)]


def test_enumerated_paths_satisfy_invariants():
    for path in oracle.enumerate_paths(4, 6):
        assert path[0] == 1
        assert all(b - a in (0, 1) for a, b in zip(path, path[1:]))
        assert max(path) <= 4


@pytest.mark.parametrize("N", range(1, 7))
@pytest.mark.parametrize("T", range(0, 9))
def test_path_count_matches_dp(N, T):
    assert len(oracle.enumerate_paths(N, T)) == oracle.count_paths_dp(N, T)


def test_enumeration_guard():
    with pytest.raises(oracle.OracleTooLarge, match="smaller"):
        oracle.enumerate_paths(3, 21)


def test_path_probability_examples():
    trace = AttentionTrace([[0.6, 0.4], [0.7, 0.3]])
    assert oracle.path_probability((1, 1, 2), trace) == pytest.approx(0.18, abs=1e-15)
    with_u = AttentionTrace(trace.Y, [0.5, 0.5])
    assert oracle.path_probability((1, 1, 2), with_u) == pytest.approx(0.045, abs=1e-15)
    zeroed = AttentionTrace([[0.0, 1.0], [0.5, 0.5]])
    assert oracle.path_probability((1, 1, 1), zeroed) == 0.0


def test_path_probability_length_mismatch():
    with pytest.raises(ValueError):
        oracle.path_probability((1, 1), AttentionTrace([[0.5, 0.5], [0.5, 0.5]]))


def test_brute_force_two_by_two():
    raw = oracle.brute_force_alpha(AttentionTrace([[0.6, 0.4], [0.7, 0.3]]), normalize=False)
    np.testing.assert_allclose(raw[1], [0.42, 0.30], atol=1e-15)
    norm = oracle.brute_force_alpha(AttentionTrace([[0.6, 0.4], [0.7, 0.3]]))
    np.testing.assert_allclose(norm[1], [0.58333333333333333, 0.41666666666666667], atol=1e-15)


def test_brute_force_single_step_support():
    y = np.array([0.1, 0.2, 0.3, 0.4])
    row = oracle.brute_force_alpha(AttentionTrace([y]))[0]
    np.testing.assert_allclose(row, [0.1 / 0.3, 0.2 / 0.3, 0, 0], atol=1e-15)


def test_brute_force_single_position():
    np.testing.assert_array_equal(oracle.brute_force_alpha(AttentionTrace(np.ones((4, 1)))), np.ones((4, 1)))


def test_trace_validation():
    with pytest.raises(ValueError):
        AttentionTrace(np.ones(3))
    with pytest.raises(ValueError):
        AttentionTrace(np.ones((2, 3)) / 3, U=[0.5])


@pytest.mark.parametrize("seed", range(100))
def test_recursions_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    N, T = int(rng.integers(1, 7)), int(rng.integers(1, 9))
    for with_u in (False, True):
        trace = oracle.random_trace(rng, N, T, with_u=with_u)
        dev = np.abs(oracle.recursion_alpha(trace) - oracle.brute_force_alpha(trace)).max()
        assert dev < 1e-9


def test_recursion_with_boundary_u_values():
    rng = np.random.default_rng(9)
    trace = oracle.random_trace(rng, 5, 6, with_u=True)
    trace.U[:] = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0]
    np.testing.assert_allclose(oracle.recursion_alpha(trace), oracle.brute_force_alpha(trace), atol=1e-12)


def test_oracle_check_summary():
    worst = oracle.oracle_check(trials=20, seed=3)
    assert set(worst) == {"fa", "fa-ta"}
    assert max(worst.values()) < 1e-9
