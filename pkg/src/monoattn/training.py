"""Training loop, alignment diagnostics and per-epoch metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .model import FreeRunResult, ModelConfig, Seq2Seq
from .task import TaskConfig, TaskSample

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    val_size: int = 200
    stable_fail_rate: float = 0.05
    diffuse_weight: float = 0.1
    diffuse_fraction: float = 0.2
    stuck_multiplier: int = 4
    max_steps_factor: int = 4

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class TrainingDiverged(ArithmeticError):
    pass


# ----------------------------------------------------------------- diagnostics


@dataclass
class AlignmentDiagnostics:
    covered: bool
    regressed: bool
    stuck: bool
    diffuse: bool
    truncated: bool = False

    @property
    def failed(self) -> bool:
        return (not self.covered) or self.regressed or self.stuck or self.diffuse or self.truncated

    def flags(self) -> list[str]:
        out = [name for name in ("regressed", "stuck", "diffuse", "truncated") if getattr(self, name)]
        if not self.covered:
            out.insert(0, "uncovered")
        return out


def argmax_last(A: np.ndarray) -> np.ndarray:
    """Row-wise argmax with ties going to the larger index."""
    A = np.asarray(A)
    return A.shape[1] - 1 - np.argmax(A[:, ::-1], axis=1)


def diagnose_alignment(A, n: int, max_duration: int = 5, reduction: int = 2, truncated: bool = False,
                       diffuse_weight: float = 0.1, diffuse_fraction: float = 0.2,
                       stuck_multiplier: int = 4) -> AlignmentDiagnostics:
    """Flag missing, repeated, stuck or blurred attention in a (T', N) alignment."""
    A = np.asarray(A, dtype=np.float64).reshape(-1, n)
    if len(A) == 0:
        return AlignmentDiagnostics(covered=False, regressed=False, stuck=False, diffuse=False,
                                    truncated=truncated)
    peaks = argmax_last(A)
    covered = len(set(peaks.tolist())) == n
    regressed = bool(np.any(np.diff(peaks) < 0))
    s_max = stuck_multiplier * math.ceil(max_duration / reduction)
    run, longest = 1, 1
    for a, b in zip(peaks[:-1], peaks[1:]):
        run = run + 1 if a == b else 1
        longest = max(longest, run)
    stuck = longest > s_max
    diffuse = float(np.mean(A.max(axis=1) < diffuse_weight)) > diffuse_fraction
    return AlignmentDiagnostics(covered, regressed, stuck, diffuse, truncated)


def gold_step_alignment(sample: TaskSample, reduction: int) -> np.ndarray:
    """(T', N) alignment giving each step the share of its frames owned by each token."""
    gold = sample.gold_alignment
    steps = math.ceil(len(gold) / reduction)
    padded = np.concatenate([gold, np.repeat(gold[-1:], steps * reduction - len(gold))])
    A = np.zeros((steps, len(sample.tokens)))
    for t in range(steps):
        for tok in padded[t * reduction:(t + 1) * reduction]:
            A[t, tok] += 1.0 / reduction
    return A


def gold_steps(sample: TaskSample, reduction: int) -> int:
    return math.ceil(len(sample.frames) / reduction)


def _diagnose_run(run: FreeRunResult, sample: TaskSample, mcfg: ModelConfig, task: TaskConfig,
                  tcfg: TrainConfig) -> AlignmentDiagnostics:
    return diagnose_alignment(run.alignments, len(sample.tokens), task.max_duration, mcfg.reduction,
                              truncated=run.truncated, diffuse_weight=tcfg.diffuse_weight,
                              diffuse_fraction=tcfg.diffuse_fraction,
                              stuck_multiplier=tcfg.stuck_multiplier)


# -------------------------------------------------------------------- outputs


def write_alignment_csv(A: np.ndarray, path) -> None:
    with open(path, "w") as f:
        for row in np.atleast_2d(A):
            f.write(",".join(format(float(v), ".9g") for v in row) + "\n")


def write_pgm(A: np.ndarray, path) -> None:
    """Plain graymap, one pixel row per decoder step."""
    A = np.atleast_2d(A)
    h, w = A.shape
    pix = np.clip(np.round(255 * A), 0, 255).astype(int)
    lines = ["P2", f"{w} {h}", "255"] + [" ".join(str(v) for v in row) for row in pix]
    Path(path).write_text("\n".join(lines) + "\n")


def write_frames_csv(frames: np.ndarray, path) -> None:
    write_alignment_csv(frames, path)


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return format(float(v), ".9g")


# ------------------------------------------------------------------- training


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_fail_rate: float
    sharpness: float
    mean_u: float | None = None


@dataclass
class RunMetrics:
    rows: list[EpochMetrics]
    stable_threshold: float = 0.05

    @property
    def epochs_to_stable(self) -> float:
        for row in self.rows:
            if row.val_fail_rate <= self.stable_threshold:
                return float(row.epoch)
        return math.inf

    def write_csv(self, path, with_u: bool) -> None:
        header = ["epoch", "train_loss", "val_loss", "val_fail_rate", "sharpness"]
        if with_u:
            header.append("mean_u")
        lines = [",".join(header)]
        for r in self.rows:
            vals = [str(r.epoch), _fmt(r.train_loss), _fmt(r.val_loss), _fmt(r.val_fail_rate), _fmt(r.sharpness)]
            if with_u:
                vals.append(_fmt(r.mean_u if r.mean_u is not None else float("nan")))
            lines.append(",".join(vals))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path, stable_threshold: float = 0.05) -> RunMetrics:
        rows = []
        with open(path) as f:
            for rec in csv.DictReader(f):
                rows.append(EpochMetrics(
                    epoch=int(rec["epoch"]), train_loss=float(rec["train_loss"]),
                    val_loss=float(rec["val_loss"]), val_fail_rate=float(rec["val_fail_rate"]),
                    sharpness=float(rec["sharpness"]),
                    mean_u=float(rec["mean_u"]) if rec.get("mean_u") else None))
        return cls(rows, stable_threshold)


@dataclass
class ValidationResult:
    loss: float
    fail_rate: float
    sharpness: float
    mean_u: float | None


def validate(model: Seq2Seq, samples: list[TaskSample], task: TaskConfig, tcfg: TrainConfig) -> ValidationResult:
    losses, fails, sharp, us = [], 0, [], []
    for s in samples:
        with ad.no_grad():
            losses.append(model.run_teacher_forced(s.tokens, s.frames).loss.item())
        run = model.run_free(s.tokens, 0.0, tcfg.max_steps_factor * gold_steps(s, model.config.reduction))
        diag = _diagnose_run(run, s, model.config, task, tcfg)
        fails += diag.failed
        if run.n_steps:
            sharp.append(float(run.alignments.max(axis=1).mean()))
        us.extend(run.u.tolist())
    return ValidationResult(
        loss=float(np.mean(losses)),
        fail_rate=fails / len(samples),
        sharpness=float(np.mean(sharp)) if sharp else 0.0,
        mean_u=float(np.mean(us)) if us else None,
    )


def train(mcfg: ModelConfig, task: TaskConfig, tcfg: TrainConfig, train_set: list[TaskSample],
          val_set: list[TaskSample], run_dir=None, max_iterations: int | None = None,
          iteration_losses: list[float] | None = None) -> tuple[Seq2Seq, RunMetrics]:
    """Adam, batch size 1, teacher forcing; validates and snapshots every epoch.

    ``run_dir`` receives ``config.txt``, ``metrics.csv``, per-epoch checkpoints and
    alignment snapshots of the first validation sample. ``max_iterations`` stops
    early (after that many updates) for quick sanity runs.
    """
    from .config import dump_config

    model = Seq2Seq(mcfg)
    opt = ad.Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    rng = np.random.default_rng(mcfg.seed)
    drop_rng = np.random.default_rng([mcfg.seed, 1])
    val = val_set[:tcfg.val_size]
    metrics = RunMetrics([], tcfg.stable_fail_rate)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        (run_dir / "ckpt").mkdir(parents=True, exist_ok=True)
        (run_dir / "align").mkdir(exist_ok=True)
        dump_config(run_dir / "config.txt", mcfg, task, tcfg)
    iteration = 0
    for epoch in range(1, tcfg.epochs + 1):
        total = 0.0
        order = rng.permutation(len(train_set))
        for i in order:
            s = train_set[i]
            model.params.zero_grad()
            res = model.run_teacher_forced(s.tokens, s.frames, dropout_rng=drop_rng)
            loss = res.loss.item()
            if not math.isfinite(loss):
                _dump_divergence(run_dir, epoch, int(i), s, loss)
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, sample {i}")
            res.loss.backward()
            ad.clip_grad_norm(model.params, tcfg.clip_norm)
            opt.step(model.params)
            total += loss
            iteration += 1
            if iteration_losses is not None:
                iteration_losses.append(loss)
            if max_iterations is not None and iteration >= max_iterations:
                break
        v = validate(model, val, task, tcfg)
        n_done = len(order) if max_iterations is None else min(len(order), iteration - (epoch - 1) * len(order))
        row = EpochMetrics(epoch, total / max(n_done, 1), v.loss, v.fail_rate, v.sharpness,
                           v.mean_u if mcfg.mechanism == "fa-ta" else None)
        metrics.rows.append(row)
        log.info("%s seed=%d epoch %d: train %.4f val %.4f fail %.3f sharp %.3f", mcfg.label, mcfg.seed,
                 epoch, row.train_loss, row.val_loss, row.val_fail_rate, row.sharpness)
        if run_dir is not None:
            ad.save_checkpoint(model.params, run_dir / "ckpt" / f"epoch_{epoch:03d}.ckpt")
            if val:
                with ad.no_grad():
                    snap = model.run_teacher_forced(val[0].tokens, val[0].frames)
                write_alignment_csv(snap.alignments, run_dir / "align" / f"epoch_{epoch:03d}.csv")
                write_pgm(snap.alignments, run_dir / "align" / f"epoch_{epoch:03d}.pgm")
                if len(snap.u):
                    write_alignment_csv(snap.u[None, :], run_dir / "align" / f"epoch_{epoch:03d}_u.csv")
            metrics.write_csv(run_dir / "metrics.csv", mcfg.mechanism == "fa-ta")
        if max_iterations is not None and iteration >= max_iterations:
            break
    return model, metrics


def _dump_divergence(run_dir, epoch: int, index: int, sample: TaskSample, loss: float) -> None:
    if run_dir is None:
        return
    lines = [f"epoch={epoch}", f"sample_index={index}", f"loss={loss}",
             "tokens=" + " ".join(map(str, sample.tokens)),
             "durations=" + " ".join(map(str, sample.durations))]
    (Path(run_dir) / "diverged_sample.txt").write_text("\n".join(lines) + "\n")
