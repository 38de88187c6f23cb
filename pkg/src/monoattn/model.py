"""Toy encoder-decoder acoustic model with pluggable attention.

Encoder: token embedding followed by a bidirectional single-layer tanh RNN.
Decoder: a tanh RNN cell whose state is the attention query; each step emits
``reduction`` frames and a stop logit. The attention inner loop is one of
baseline / fa / fa-ta, optionally stabilised by windowing or conv features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import attention as att
from . import autodiff as ad
from .autodiff import ParameterStore, Tensor


@dataclass
class ModelConfig:
    vocab_size: int = 8
    embed_dim: int = 16
    encoder_hidden: int = 32
    decoder_hidden: int = 32
    attention_dim: int = 32
    frame_width: int = 9
    reduction: int = 2
    mechanism: str = "fa-ta"
    stabilizer: str = "none"
    window: int = 2
    conv_filters: int = 10
    conv_width: int = 5
    agent_hidden: int = 32
    alignment_feedback: str = "emitted"
    frame_dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.reduction < 1:
            raise ValueError(f"reduction must be >= 1, got {self.reduction}")
        if self.mechanism not in att.MECHANISMS:
            raise ValueError(f"mechanism must be one of {att.MECHANISMS}, got {self.mechanism!r}")
        if self.stabilizer not in att.STABILIZERS:
            raise ValueError(f"stabilizer must be one of {att.STABILIZERS}, got {self.stabilizer!r}")
        if self.alignment_feedback not in ("emitted", "raw"):
            raise ValueError("alignment_feedback must be 'emitted' or 'raw'")
        if self.encoder_hidden % 2:
            raise ValueError("encoder_hidden must be even (split across two directions)")
        if self.conv_width % 2 == 0:
            raise ValueError("conv_width must be odd")
        if self.window < 0:
            raise ValueError("window must be nonnegative")
        if not 0.0 <= self.frame_dropout < 1.0:
            raise ValueError(f"frame_dropout must be in [0, 1), got {self.frame_dropout}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @property
    def label(self) -> str:
        return f"{self.mechanism}+{self.stabilizer}"


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    o_prev: Tensor
    forward: att.ForwardState
    prev_alignment: Tensor
    t: int = 0


@dataclass
class DecoderStepOutput:
    frames: Tensor  # (r, F)
    stop_logit: Tensor  # scalar
    alignment: Tensor  # (N,) emitted weights
    y: Tensor  # (N,) content attention before any forward recursion
    u: Tensor | None = None  # agent output for the next step (fa-ta only)


@dataclass
class TeacherForcedResult:
    frames: np.ndarray  # (T' r, F)
    alignments: np.ndarray  # (T', N)
    loss: Tensor
    frame_loss: float
    stop_loss: float
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class FreeRunResult:
    frames: np.ndarray  # (steps r, F)
    alignments: np.ndarray  # (steps, N)
    stop_step: int | None  # 1-based step at which the stop flag fired
    truncated: bool
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_steps(self) -> int:
        return self.alignments.shape[0]


def pad_frames(frames: np.ndarray, r: int) -> np.ndarray:
    """Repeat the last frame so the count is a multiple of r."""
    steps = math.ceil(len(frames) / r)
    extra = steps * r - len(frames)
    if extra:
        frames = np.vstack([frames, np.repeat(frames[-1:], extra, axis=0)])
    return frames


def _init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Seq2Seq:
    def __init__(self, config: ModelConfig, params: ParameterStore | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params(config)

    # ------------------------------------------------------------ parameters

    @staticmethod
    def _init_params(cfg: ModelConfig) -> ParameterStore:
        rng = np.random.default_rng(cfg.seed)
        E, He, D, A, F = cfg.embed_dim, cfg.encoder_hidden // 2, cfg.decoder_hidden, cfg.attention_dim, cfg.frame_width
        X = cfg.encoder_hidden
        p = ParameterStore()
        p.add("enc.embed", rng.standard_normal((cfg.vocab_size, E)) * 0.5)
        for d in ("fw", "bw"):
            p.add(f"enc.{d}.W_in", _init(rng, (He, E), E))
            p.add(f"enc.{d}.W_hh", _init(rng, (He, He), He))
            p.add(f"enc.{d}.b", np.zeros(He))
        p.add("dec.go", np.zeros(F))
        p.add("dec.W", _init(rng, (D, F + X + D), F + X + D))
        p.add("dec.b", np.zeros(D))
        p.add("att.v", _init(rng, (A,), A))
        p.add("att.W", _init(rng, (A, D), D))
        p.add("att.V", _init(rng, (A, X), X))
        p.add("att.b", np.zeros(A))
        if cfg.stabilizer == "conv":
            k, l = cfg.conv_filters, cfg.conv_width
            p.add("att.F", _init(rng, (k, l), l))
            p.add("att.U", _init(rng, (A, k), k))
        p.add("out.W", _init(rng, (cfg.reduction * F + 1, D + X), D + X))
        p.add("out.b", np.zeros(cfg.reduction * F + 1))
        if cfg.mechanism == "fa-ta":
            G = cfg.agent_hidden
            p.add("agent.W1", _init(rng, (G, X + F + D), X + F + D))
            p.add("agent.b1", np.zeros(G))
            p.add("agent.w2", _init(rng, (1, G), G))
            p.add("agent.b2", np.zeros(1))
        return p

    @property
    def attention_params(self) -> att.AttentionParams:
        p = self.params
        conv = self.config.stabilizer == "conv"
        return att.AttentionParams(
            v=p["att.v"], W=p["att.W"], V=p["att.V"], b=p["att.b"],
            U=p["att.U"] if conv else None, F=p["att.F"] if conv else None)

    @property
    def agent_params(self) -> att.AgentParams:
        p = self.params
        return att.AgentParams(p["agent.W1"], p["agent.b1"], p["agent.w2"], p["agent.b2"])

    # --------------------------------------------------------------- encoder

    def encode(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=int)
        if tokens.ndim != 1 or len(tokens) == 0:
            raise ValueError("tokens must be a nonempty 1-D id sequence")
        if (tokens < 0).any() or (tokens >= self.config.vocab_size).any():
            bad = tokens[(tokens < 0) | (tokens >= self.config.vocab_size)]
            raise ValueError(f"token ids {bad.tolist()} outside 0..{self.config.vocab_size - 1}")
        p = self.params
        emb = ad.slice_(p["enc.embed"], tokens)
        n = len(tokens)
        outputs = {}
        for d, order in (("fw", range(n)), ("bw", range(n - 1, -1, -1))):
            proj = ad.matmul(emb, ad.transpose(p[f"enc.{d}.W_in"]))
            W_hh, b = p[f"enc.{d}.W_hh"], p[f"enc.{d}.b"]
            h = Tensor(np.zeros(W_hh.shape[0]))
            states = [None] * n
            for i in order:
                h = ad.tanh(ad.add(ad.slice_(proj, i), ad.linear(W_hh, h, b)))
                states[i] = h
            outputs[d] = ad.stack(states)
        return ad.concat([outputs["fw"], outputs["bw"]], axis=1)

    # --------------------------------------------------------------- decoder

    def initial_state(self, x: Tensor) -> DecoderState:
        n = x.shape[0]
        return DecoderState(
            h=Tensor(np.zeros(self.config.decoder_hidden)),
            c=Tensor(np.zeros(self.config.encoder_hidden)),
            o_prev=self.params["dec.go"],
            forward=att.ForwardState.initial(n),
            prev_alignment=Tensor(att.initial_alignment(n)),
        )

    def _precompute(self, x: Tensor) -> dict:
        ap = self.attention_params
        pre = {"keys": att.memory_keys(x, ap), "ap": ap}
        if ap.has_conv:
            pre["U_T"] = ad.transpose(ap.U)
        return pre

    def decode_step(self, state: DecoderState, x: Tensor, prev_frame=None, bias: float = 0.0,
                    pre: dict | None = None) -> tuple[DecoderStepOutput, DecoderState]:
        """Advance the decoder one step (``reduction`` frames).

        ``prev_frame`` overrides the state's previous output frame (teacher forcing).
        """
        cfg, p = self.config, self.params
        pre = pre if pre is not None else self._precompute(x)
        ap = pre["ap"]
        o_prev = state.o_prev if prev_frame is None else ad.as_tensor(prev_frame)
        if o_prev.shape != (cfg.frame_width,):
            raise ad.ShapeError("decode_step", o_prev.shape, (cfg.frame_width,), detail="previous frame")

        h = ad.tanh(ad.linear(p["dec.W"], ad.concat([o_prev, state.c, state.h]), p["dec.b"]))

        # content attention
        pre_act = ad.add(pre["keys"], ad.linear(ap.W, h, ap.b))
        if ap.has_conv:
            f = att.conv_features(state.prev_alignment, ap.F)
            pre_act = ad.add(pre_act, ad.matmul(f, pre["U_T"]))
        e = ad.matvec(ad.tanh(pre_act), ap.v)
        window = None
        if cfg.stabilizer == "window":
            window = att.WindowConfig(cfg.window, att.window_center(state.prev_alignment))
        y = att.normalize(e, window)

        fstate = state.forward
        if cfg.mechanism == "baseline":
            alignment = y
        elif cfg.mechanism == "fa":
            alignment, fstate = att.forward_step(fstate, y)
        else:
            alignment, fstate = att.forward_ta_step(fstate, y)

        c = att.context(alignment, x)
        proj = ad.linear(p["out.W"], ad.concat([h, c]), p["out.b"])
        rf = cfg.reduction * cfg.frame_width
        frames = ad.reshape(ad.slice_(proj, slice(0, rf)), (cfg.reduction, cfg.frame_width))
        stop_logit = ad.slice_(proj, rf)

        u = None
        if cfg.mechanism == "fa-ta":
            u = att.transition_prob(c, o_prev, h, self.agent_params, bias)
            fstate = att.ForwardState(fstate.alpha_hat_prev, u, fstate.t)

        feedback = alignment if cfg.alignment_feedback == "emitted" else y
        new_state = DecoderState(h=h, c=c, o_prev=ad.slice_(frames, -1), forward=fstate,
                                 prev_alignment=feedback, t=state.t + 1)
        return DecoderStepOutput(frames, stop_logit, alignment, y, u), new_state

    # ---------------------------------------------------------------- drivers

    def run_teacher_forced(self, tokens, target_frames, dropout_rng=None) -> TeacherForcedResult:
        """Teacher-forced pass; loss = frame MAE + stop-flag BCE (mean over steps).

        With ``dropout_rng`` the fed-back ground-truth frames get inverted
        dropout at rate ``frame_dropout``, so the decoder cannot lean on them
        alone to know which token it is on.
        """
        cfg = self.config
        target = np.asarray(target_frames, dtype=np.float64)
        if target.ndim != 2 or len(target) < 1 or target.shape[1] != cfg.frame_width:
            raise ValueError(f"target frames must be (T >= 1, {cfg.frame_width}), got {target.shape}")
        r = cfg.reduction
        padded = pad_frames(target, r)
        steps = len(padded) // r
        x = self.encode(tokens)
        pre = self._precompute(x)
        state = self.initial_state(x)
        frames, stops, aligns, us = [], [], [], []
        for t in range(steps):
            prev = None if t == 0 else padded[t * r - 1]
            if prev is not None and dropout_rng is not None and cfg.frame_dropout > 0:
                keep = dropout_rng.random(prev.shape) >= cfg.frame_dropout
                prev = prev * keep / (1.0 - cfg.frame_dropout)
            out, state = self.decode_step(state, x, prev_frame=prev, pre=pre)
            frames.append(out.frames)
            stops.append(out.stop_logit)
            aligns.append(out.alignment.value)
            if out.u is not None:
                us.append(out.u.item())
        pred = ad.reshape(ad.stack(frames), (steps * r, cfg.frame_width))
        frame_loss = ad.mean(ad.abs_(ad.sub(pred, padded)))
        logits = ad.stack(stops)
        stop_target = np.zeros(steps)
        stop_target[-1] = 1.0
        # BCE with logits: softplus(z) - y z
        stop_loss = ad.mean(ad.sub(ad.softplus(logits), ad.mul(logits, stop_target)))
        loss = ad.add(frame_loss, stop_loss)
        return TeacherForcedResult(pred.value, np.array(aligns), loss,
                                   frame_loss.item(), stop_loss.item(), np.array(us))

    def run_free(self, tokens, bias: float = 0.0, max_steps: int = 100) -> FreeRunResult:
        """Autoregressive synthesis until the stop flag fires or ``max_steps``."""
        cfg = self.config
        if cfg.mechanism != "fa-ta":
            bias = 0.0
        frames, aligns, us = [], [], []
        stop_step = None
        with ad.no_grad():
            x = self.encode(tokens)
            pre = self._precompute(x)
            state = self.initial_state(x)
            for t in range(1, max_steps + 1):
                out, state = self.decode_step(state, x, bias=bias, pre=pre)
                frames.append(out.frames.value)
                aligns.append(out.alignment.value)
                if out.u is not None:
                    us.append(out.u.item())
                if out.stop_logit.item() > 0.0:  # sigmoid(z) > 0.5
                    stop_step = t
                    break
        return FreeRunResult(
            frames=np.vstack(frames) if frames else np.zeros((0, cfg.frame_width)),
            alignments=np.array(aligns).reshape(len(aligns), -1),
            stop_step=stop_step,
            truncated=stop_step is None,
            u=np.array(us),
        )


# ------------------------------------------------------------ gradient check


def miniature_config(mechanism: str, stabilizer: str, seed: int = 0) -> ModelConfig:
    """Vocab 4, all widths 8: small enough to finite-difference every parameter."""
    return ModelConfig(vocab_size=4, embed_dim=8, encoder_hidden=8, decoder_hidden=8,
                       attention_dim=8, frame_width=3, agent_hidden=8, mechanism=mechanism,
                       stabilizer=stabilizer, frame_dropout=0.0, seed=seed)


def gradient_check(config: ModelConfig, n_tokens: int = 3, n_frames: int = 4, step: float = 1e-3,
                   order: int = 4, seed: int = 0) -> dict[str, float]:
    """Max relative backprop-vs-finite-difference error per parameter of a
    teacher-forced loss on a random (tokens, frames) pair."""
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, config.vocab_size, n_tokens)
    frames = rng.uniform(-1.0, 1.0, (n_frames, config.frame_width))
    model = Seq2Seq(config)
    return ad.finite_diff_check(lambda: model.run_teacher_forced(tokens, frames).loss,
                                model.params, step=step, order=order)
