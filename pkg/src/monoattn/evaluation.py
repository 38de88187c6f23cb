"""Free-running evaluation of trained models: failure counts and speed control."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Seq2Seq
from .task import TaskConfig, TaskSample
from .training import AlignmentDiagnostics, TrainConfig, _diagnose_run, _fmt, gold_steps


# ------------------------------------------------------------------ stability


@dataclass
class StabilityResult:
    failed: int
    total: int
    diagnostics: list[AlignmentDiagnostics]

    @property
    def fail_rate(self) -> float:
        return self.failed / self.total if self.total else 0.0


def stability_eval(model: Seq2Seq, samples: list[TaskSample], task: TaskConfig,
                   tcfg: TrainConfig | None = None) -> StabilityResult:
    """Free-run every sample at bias 0 and count alignment failures."""
    tcfg = tcfg or TrainConfig()
    diags = []
    for s in samples:
        run = model.run_free(s.tokens, 0.0, tcfg.max_steps_factor * gold_steps(s, model.config.reduction))
        diags.append(_diagnose_run(run, s, model.config, task, tcfg))
    return StabilityResult(sum(d.failed for d in diags), len(diags), diags)


def write_stability_table(counts: dict[tuple[str, str], int], path) -> None:
    """Rows baseline/fa/fa-ta, columns plain/window/conv; blank where not run."""
    cols = (("none", "plain"), ("window", "window"), ("conv", "conv"))
    lines = ["model," + ",".join(name for _, name in cols)]
    for mech in ("baseline", "fa", "fa-ta"):
        cells = [str(counts[(mech, s)]) if (mech, s) in counts else "" for s, _ in cols]
        lines.append(f"{mech}," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- speed sweep


@dataclass
class SweepRow:
    bias: float
    mean_ratio: float
    stddev_ratio: float
    n_failed: int


def default_biases(limit: float = 0.6, step: float = 0.2) -> list[float]:
    n = int(round(limit / step))
    return [round(i * step, 10) for i in range(-n, n + 1)]


def speed_sweep(model: Seq2Seq, samples: list[TaskSample], task: TaskConfig, biases=None,
                tcfg: TrainConfig | None = None) -> tuple[list[SweepRow], int]:
    """Duration ratio vs the unbiased synthesis, sweeping outward from bias 0.

    Only samples synthesised without failure at bias 0 take part (the sweep
    measures speed change, not recovery). Each direction stops at the first
    bias where any sample fails; that bias is still reported with its
    failure count. Returns the rows sorted by bias and the sample count used.
    """
    if model.config.mechanism != "fa-ta":
        raise ValueError(f"speed sweep needs a fa-ta model, got {model.config.mechanism}")
    tcfg = tcfg or TrainConfig()
    biases = sorted(set(default_biases() if biases is None else [float(b) for b in biases]) | {0.0})

    def synth(bias: float, subset) -> tuple[np.ndarray, np.ndarray]:
        lengths, failed = [], []
        for s in subset:
            run = model.run_free(s.tokens, bias, tcfg.max_steps_factor * gold_steps(s, model.config.reduction))
            failed.append(_diagnose_run(run, s, model.config, task, tcfg).failed)
            lengths.append(len(run.frames))
        return np.array(lengths, dtype=float), np.array(failed, dtype=bool)

    lengths0, failed0 = synth(0.0, samples)
    ok = [s for s, bad in zip(samples, failed0) if not bad]
    base = lengths0[~failed0]
    rows = {0.0: SweepRow(0.0, 1.0, 0.0, 0)}
    if not ok:
        return [rows[0.0]], 0
    for direction in (1, -1):
        for b in sorted((x for x in biases if x * direction > 0), key=abs):
            lengths, failed = synth(b, ok)
            ratios = lengths / base
            rows[b] = SweepRow(b, float(ratios.mean()), float(ratios.std()), int(failed.sum()))
            if failed.any():
                break
    return [rows[b] for b in sorted(rows)], len(ok)


def surviving(rows: list[SweepRow]) -> list[SweepRow]:
    """Contiguous run of failure-free biases around 0."""
    by_bias = sorted(rows, key=lambda r: r.bias)
    zero = next(i for i, r in enumerate(by_bias) if r.bias == 0.0)
    lo = zero
    while lo > 0 and by_bias[lo - 1].n_failed == 0:
        lo -= 1
    hi = zero
    while hi < len(by_bias) - 1 and by_bias[hi + 1].n_failed == 0:
        hi += 1
    return by_bias[lo:hi + 1]


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    lines = ["bias,mean_ratio,stddev_ratio,n_failed"]
    for r in rows:
        lines.append(f"{_fmt(r.bias)},{_fmt(r.mean_ratio)},{_fmt(r.stddev_ratio)},{r.n_failed}")
    Path(path).write_text("\n".join(lines) + "\n")
