import numpy as np
import pytest

from monoattn import autodiff as ad
from monoattn.model import ModelConfig, Seq2Seq, gradient_check, miniature_config, pad_frames

CONFIGS = [(m, s) for m in ("baseline", "fa", "fa-ta") for s in ("none", "window", "conv")]


def small(mech="fa", stab="none", **kw):
    return Seq2Seq(miniature_config(mech, stab, seed=kw.pop("seed", 1)), **kw)


@pytest.fixture
def sample():
    rng = np.random.default_rng(0)
    return np.array([0, 2, 1, 3, 2]), rng.uniform(-1, 1, (7, 3))


def test_parameter_groups():
    names = set(small("baseline").params.names())
    assert not any(n.startswith(("agent.", "att.F", "att.U")) for n in names)
    conv_ta = set(small("fa-ta", "conv").params.names())
    assert conv_ta - names == {"att.F", "att.U", "agent.W1", "agent.b1", "agent.w2", "agent.b2"}


def test_encode_shape_and_determinism():
    m = small()
    a, b = m.encode([0, 1, 2, 3, 1]), m.encode([0, 1, 2, 3, 1])
    assert a.shape == (5, 8)
    np.testing.assert_array_equal(a.value, b.value)


def test_encode_sees_whole_input():
    m = small()
    a, b = m.encode([0, 1, 2, 3]).value, m.encode([1, 0, 2, 3]).value
    assert not np.allclose(a, b)
    # bidirectional: the first position depends on the last token
    c = m.encode([0, 1, 2, 1]).value
    assert not np.allclose(a[0], c[0])


@pytest.mark.parametrize("tokens", [[0, 4], [-1], []])
def test_encode_rejects_bad_ids(tokens):
    with pytest.raises(ValueError):
        small().encode(tokens)


@pytest.mark.parametrize("mech,stab", CONFIGS)
def test_decode_step_contract(mech, stab):
    m = small(mech, stab)
    x = m.encode([1, 2, 3, 0])
    out, state = m.decode_step(m.initial_state(x), x)
    assert out.frames.shape == (2, 3)
    assert out.stop_logit.shape == ()
    assert out.alignment.value.sum() == pytest.approx(1.0, abs=1e-12)
    if mech != "baseline":
        assert (out.alignment.value[2:] == 0).all()
    assert (out.u is None) == (mech != "fa-ta")
    if mech == "fa-ta":
        assert 0 < out.u.item() < 1
    assert state.t == 1


def test_decode_step_rejects_bad_frame():
    m = small()
    x = m.encode([1, 2])
    with pytest.raises(ad.ShapeError, match="previous frame"):
        m.decode_step(m.initial_state(x), x, prev_frame=np.zeros(4))


def test_zeroed_agent_reduces_to_fa(sample):
    tokens, frames = sample
    ta = small("fa-ta")
    for name in ("agent.W1", "agent.b1", "agent.w2", "agent.b2"):
        ta.params[name].value[...] = 0.0
    fa_params = ad.ParameterStore()
    for name in ta.params.names():
        if not name.startswith("agent."):
            fa_params.add(name, ta.params[name].value.copy())
    fa = Seq2Seq(miniature_config("fa", "none", seed=1), fa_params)
    r_ta, r_fa = ta.run_teacher_forced(tokens, frames), fa.run_teacher_forced(tokens, frames)
    np.testing.assert_array_equal(r_ta.u, 0.5)
    np.testing.assert_allclose(r_ta.alignments, r_fa.alignments, atol=1e-12)


def test_teacher_forced_shapes(sample):
    tokens, frames = sample
    res = small("fa-ta", "conv").run_teacher_forced(tokens, frames)
    assert res.alignments.shape == (4, 5)
    assert res.frames.shape == (8, 3)
    assert res.u.shape == (4,)
    assert res.loss.item() == pytest.approx(res.frame_loss + res.stop_loss)


def test_teacher_forced_single_frame():
    res = small().run_teacher_forced([1, 2], np.ones((1, 3)))
    assert res.alignments.shape == (1, 2)
    assert np.isfinite(res.loss.item())


def test_pad_frames_repeats_last():
    f = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(pad_frames(f, 2), np.vstack([f, f[-1:]]))
    np.testing.assert_array_equal(pad_frames(f, 3), f)


def test_injected_identical_prediction_has_zero_frame_loss(sample):
    tokens, _ = sample
    m = small()
    # a single decoder step sees only the go frame, so its output is target-independent
    target = m.run_teacher_forced(tokens, np.zeros((2, 3))).frames
    assert m.run_teacher_forced(tokens, target).frame_loss == 0.0


def test_teacher_forced_determinism(sample):
    tokens, frames = sample
    losses = [small("fa-ta", "conv", seed=4).run_teacher_forced(tokens, frames).loss.item() for _ in range(2)]
    assert losses[0] == losses[1]


def test_rejects_bad_targets():
    with pytest.raises(ValueError):
        small().run_teacher_forced([1], np.zeros((0, 3)))
    with pytest.raises(ValueError):
        small().run_teacher_forced([1], np.zeros((2, 4)))


def test_frame_dropout_only_with_rng(sample):
    tokens, frames = sample
    m = Seq2Seq(ModelConfig(**{**miniature_config("fa", "none").__dict__, "frame_dropout": 0.5}))
    plain = m.run_teacher_forced(tokens, frames).loss.item()
    assert m.run_teacher_forced(tokens, frames).loss.item() == plain
    dropped = [m.run_teacher_forced(tokens, frames, dropout_rng=np.random.default_rng(s)).loss.item() for s in (0, 0, 1)]
    assert dropped[0] == dropped[1] != plain
    assert dropped[2] != dropped[0]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(reduction=0)
    with pytest.raises(ValueError):
        ModelConfig(mechanism="location")
    with pytest.raises(ValueError):
        ModelConfig(encoder_hidden=7)
    with pytest.raises(ValueError):
        ModelConfig(frame_dropout=1.0)


def _force_stop(m, logit):
    m.params["out.b"].value[-1] = logit
    m.params["out.W"].value[-1] = 0.0


def test_run_free_stops_on_flag():
    m = small()
    _force_stop(m, 5.0)
    run = m.run_free([1, 2, 3], max_steps=10)
    assert run.stop_step == 1 and not run.truncated
    assert run.frames.shape == (2, 3)


def test_run_free_truncates():
    m = small("fa-ta", "conv")
    _force_stop(m, -5.0)
    run = m.run_free([1, 2, 3], max_steps=6)
    assert run.truncated and run.stop_step is None
    assert run.alignments.shape == (6, 3)
    assert run.u.shape == (6,)


@pytest.mark.parametrize("mech", ["fa", "fa-ta"])
def test_free_run_rows_are_forward_alignments(mech):
    m = small(mech, "conv")
    _force_stop(m, -5.0)
    A = m.run_free([0, 1, 2, 3, 1, 2], max_steps=8).alignments
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
    for t, row in enumerate(A, start=1):
        assert (row[t + 1:] == 0).all()


def test_run_free_bias_ignored_without_agent():
    m = small("fa")
    _force_stop(m, -5.0)
    a, b = m.run_free([1, 2, 3], bias=0.6, max_steps=5), m.run_free([1, 2, 3], max_steps=5)
    np.testing.assert_array_equal(a.frames, b.frames)


def test_bias_raises_first_u():
    m = small("fa-ta")
    _force_stop(m, -5.0)
    base = m.run_free([1, 2, 3], bias=0.0, max_steps=3)
    again = m.run_free([1, 2, 3], bias=0.0, max_steps=3)
    pushed = m.run_free([1, 2, 3], bias=0.6, max_steps=3)
    np.testing.assert_array_equal(base.frames, again.frames)
    assert pushed.u[0] > base.u[0]


@pytest.mark.parametrize("mech,stab", CONFIGS)
def test_gradient_check_miniature(mech, stab):
    report = gradient_check(miniature_config(mech, stab, seed=3))
    assert max(report.values()) < 1e-4, report
