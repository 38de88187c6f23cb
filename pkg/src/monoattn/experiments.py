"""Multi-seed experiment drivers: convergence, stability and speed control.

Every training run lives in ``<out>/<mechanism>_<stabilizer>/seed<k>``. A run
whose final checkpoint already exists is loaded instead of retrained, after
checking that its recorded config matches; a mismatch is an error rather than
a silent overwrite.
"""

from __future__ import annotations

import hashlib
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path

from . import autodiff as ad
from .config import RunConfig, config_text
from .model import Seq2Seq
from .task import TaskSample, generate
from .evaluation import SweepRow, speed_sweep, stability_eval, surviving, write_stability_table, write_sweep_csv
from .training import RunMetrics, _fmt, train

log = logging.getLogger(__name__)


# modules whose code determines trained weights and metrics
_NUMERIC_MODULES = ("autodiff.py", "attention.py", "model.py", "task.py", "training.py")

ACCEPTANCE_CONFIGS = (("baseline", "none"), ("fa", "none"), ("fa-ta", "none"), ("fa", "conv"))


def source_digest() -> str:
    """Hash of the numeric sources; keys result caches to the code that made them."""
    h = hashlib.sha256()
    for name in _NUMERIC_MODULES:
        path = Path(__file__).parent / name
        h.update(name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


def run_dir_for(out, mechanism: str, stabilizer: str, seed: int) -> Path:
    return Path(out) / f"{mechanism}_{stabilizer}" / f"seed{seed}"


def train_or_load(rc: RunConfig, mechanism: str, stabilizer: str, seed: int, out,
                  data: tuple[list[TaskSample], list[TaskSample]] | None = None) -> tuple[Seq2Seq, RunMetrics]:
    mcfg = rc.model_for(mechanism, stabilizer, seed)
    run_dir = run_dir_for(out, mechanism, stabilizer, seed)
    final = run_dir / "ckpt" / f"epoch_{rc.train.epochs:03d}.ckpt"
    expected = config_text(mcfg, rc.task, rc.train)
    if final.exists():
        recorded = (run_dir / "config.txt").read_text()
        if recorded != expected:
            raise RuntimeError(f"{run_dir} holds a run with a different config; choose another --out")
        model = Seq2Seq(mcfg, ad.load_checkpoint(final))
        return model, RunMetrics.read_csv(run_dir / "metrics.csv", rc.train.stable_fail_rate)
    train_set, test_set = data if data is not None else generate(rc.task)
    return train(mcfg, rc.task, rc.train, train_set, test_set, run_dir=run_dir)


def median(values) -> float:
    return float(statistics.median(values))


# ---------------------------------------------------------------- convergence


@dataclass
class ConvergenceRow:
    mechanism: str
    stabilizer: str
    seed: int
    epochs_to_stable: float
    final_fail_rate: float
    epoch1_sharpness: float
    epoch1_fail_rate: float


def convergence_compare(rc: RunConfig, out, configs=None, seeds=None) -> list[ConvergenceRow]:
    """Train every (config, seed); write ``convergence.csv`` (one row per pair).

    Epochs-to-stable is the first epoch with validation failure rate at or
    below ``stable_fail_rate``; ``inf`` if never reached.
    """
    configs = configs or rc.experiment.compare_list()
    seeds = seeds or rc.experiment.seed_list()
    data = generate(rc.task)
    rows = []
    for mech, stab in configs:
        for seed in seeds:
            _, metrics = train_or_load(rc, mech, stab, seed, out, data)
            first = metrics.rows[0]
            rows.append(ConvergenceRow(mech, stab, seed, metrics.epochs_to_stable,
                                       metrics.rows[-1].val_fail_rate, first.sharpness, first.val_fail_rate))
    lines = ["mechanism,stabilizer,seed,epochs_to_stable,final_val_fail_rate,epoch1_sharpness,epoch1_val_fail_rate"]
    for r in rows:
        lines.append(f"{r.mechanism},{r.stabilizer},{r.seed},{_fmt(r.epochs_to_stable)},"
                     f"{_fmt(r.final_fail_rate)},{_fmt(r.epoch1_sharpness)},{_fmt(r.epoch1_fail_rate)}")
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "convergence.csv").write_text("\n".join(lines) + "\n")
    return rows


def median_epochs_to_stable(rows: list[ConvergenceRow], mechanism: str, stabilizer: str = "none") -> float:
    vals = [r.epochs_to_stable for r in rows if (r.mechanism, r.stabilizer) == (mechanism, stabilizer)]
    if not vals:
        raise KeyError(f"no runs for {mechanism}+{stabilizer}")
    return median(vals)


# ------------------------------------------------------------------ stability


@dataclass
class StabilityRow:
    mechanism: str
    stabilizer: str
    seed: int
    failed: int
    total: int


def stability_compare(rc: RunConfig, out, configs=None, seeds=None, report_dir=None) -> list[StabilityRow]:
    """Free-run the test set with each final checkpoint.

    Writes ``stability_runs.csv`` (per seed) and ``stability.csv``, the
    model-by-stabilizer grid of median failure counts, to ``report_dir``
    (default ``out``).
    """
    report_dir = Path(report_dir if report_dir is not None else out)
    configs = configs or rc.experiment.compare_list()
    seeds = seeds or rc.experiment.seed_list()
    data = generate(rc.task)
    rows = []
    for mech, stab in configs:
        for seed in seeds:
            model, _ = train_or_load(rc, mech, stab, seed, out, data)
            res = stability_eval(model, data[1], rc.task, rc.train)
            log.info("stability %s+%s seed=%d: %d/%d failed", mech, stab, seed, res.failed, res.total)
            rows.append(StabilityRow(mech, stab, seed, res.failed, res.total))
    report_dir.mkdir(parents=True, exist_ok=True)
    lines = ["mechanism,stabilizer,seed,failed,total"]
    lines += [f"{r.mechanism},{r.stabilizer},{r.seed},{r.failed},{r.total}" for r in rows]
    (report_dir / "stability_runs.csv").write_text("\n".join(lines) + "\n")
    grid = {}
    for mech, stab in configs:
        counts = [r.failed for r in rows if (r.mechanism, r.stabilizer) == (mech, stab)]
        m = median(counts)
        grid[(mech, stab)] = int(m) if m == int(m) else m
    write_stability_table(grid, report_dir / "stability.csv")
    return rows


def median_failures(rows: list[StabilityRow], mechanism: str, stabilizer: str) -> float:
    vals = [r.failed for r in rows if (r.mechanism, r.stabilizer) == (mechanism, stabilizer)]
    if not vals:
        raise KeyError(f"no runs for {mechanism}+{stabilizer}")
    return median(vals)


# ---------------------------------------------------------------- speed sweep


@dataclass
class SweepSummary:
    rows: list[SweepRow]
    n_used: int
    surviving: list[SweepRow]

    @property
    def spread(self) -> float:
        """Mean-ratio gap between the extreme surviving biases."""
        if not self.surviving:
            return 0.0
        return self.surviving[0].mean_ratio - self.surviving[-1].mean_ratio

    @property
    def non_increasing(self) -> bool:
        ratios = [r.mean_ratio for r in self.surviving]
        return all(b <= a for a, b in zip(ratios, ratios[1:]))


def sweep_model(rc: RunConfig, model: Seq2Seq, out, samples=None) -> SweepSummary:
    samples = samples if samples is not None else generate(rc.task)[1]
    rows, used = speed_sweep(model, samples, rc.task, rc.experiment.bias_list(), rc.train)
    Path(out).mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, Path(out) / "speed_sweep.csv")
    return SweepSummary(rows, used, surviving(rows))


def speed_compare(rc: RunConfig, out, seed: int | None = None) -> SweepSummary:
    """Sweep the fa-ta (plain) model of ``seed`` (default: the first experiment seed)."""
    seed = rc.experiment.seed_list()[0] if seed is None else seed
    data = generate(rc.task)
    model, _ = train_or_load(rc, "fa-ta", "none", seed, out, data)
    return sweep_model(rc, model, run_dir_for(out, "fa-ta", "none", seed), data[1])


# ----------------------------------------------------------------- acceptance


def acceptance_dir(root="results") -> Path:
    return Path(root) / f"acceptance-{source_digest()}"


@dataclass
class AcceptanceResults:
    convergence: list[ConvergenceRow]
    stability: list[StabilityRow]
    sweep: SweepSummary


def run_acceptance(out=None, rc: RunConfig | None = None) -> AcceptanceResults:
    """Default-config runs behind the statistical acceptance checks.

    Trains (or reuses) every config in ``ACCEPTANCE_CONFIGS`` for every seed;
    the union covers the convergence, stability and speed comparisons.
    """
    from .config import build_config

    rc = rc or build_config({})
    out = Path(out) if out is not None else acceptance_dir()
    conv = convergence_compare(rc, out, list(ACCEPTANCE_CONFIGS))
    stab = stability_compare(rc, out, list(ACCEPTANCE_CONFIGS))
    sweep = speed_compare(rc, out)
    return AcceptanceResults(conv, stab, sweep)
