"""``monoattn`` command-line entry point.

Exit status: 0 success, 1 operational error, 2 verification failure
(oracle or gradient check above tolerance), 64 unknown command.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import experiments as ex
from . import oracle
from .config import ConfigError, RunConfig, all_defaults, config_for_checkpoint, parse_config
from .model import Seq2Seq, gradient_check, miniature_config
from .task import TaskSample, generate, make_patterns, render_frames, write_dataset
from .evaluation import stability_eval
from .training import diagnose_alignment, gold_step_alignment, write_alignment_csv, write_frames_csv, write_pgm

COMMANDS = {
    "gen-data": "write train.txt and test.txt for the synthetic task",
    "train": "train one model (mechanism/stabilizer/seed from the config)",
    "synth": "free-run synthesis of --tokens with a checkpoint",
    "align": "teacher-forced alignment of --tokens/--durations with a checkpoint",
    "oracle-check": "compare the forward recursions with path enumeration",
    "grad-check": "finite-difference check of the miniature model, all nine configs",
    "stability-eval": "failure counts on the test set (one --ckpt, or every compared config and seed)",
    "convergence-compare": "epochs-to-stable for every compared config and seed",
    "speed-sweep": "duration ratio vs transition-agent bias (fa-ta checkpoint)",
}

EXIT_OK, EXIT_ERROR, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("monoattn")


class VerificationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _epilog() -> str:
    lines = ["commands:"]
    lines += [f"  {name:<20} {desc}" for name, desc in COMMANDS.items()]
    lines.append("")
    lines.append("config keys (set in --config files or with --set key=value):")
    for section, keys in all_defaults().items():
        lines.append(f"  [{section}]")
        lines += [f"    {k} = {v}" for k, v in keys.items()]
    lines.append("")
    lines.append("MONOATTN_SEED supplies the seed when neither the config nor --set does.")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="monoattn", epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter,
                description="Forward attention experiments on a synthetic monotonic task.")
    p.add_argument("command", help="one of the commands listed below")
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", type=Path, help="run directory (default: runs/<command>-<timestamp>)")
    p.add_argument("--ckpt", type=Path, help="checkpoint file")
    p.add_argument("--tokens", help='space-separated token ids, e.g. "2 5 7"')
    p.add_argument("--durations", help="space-separated durations for align")
    p.add_argument("--bias", type=float, default=0.0, help="transition-agent bias for synth")
    p.add_argument("--max-steps", type=int, help="synth step limit (default: 4 steps per frame budget)")
    p.add_argument("--trials", type=int, help="oracle-check trial count")
    p.add_argument("--max-n", type=int, help="oracle-check largest input length")
    p.add_argument("--max-t", type=int, help="oracle-check largest step count")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    return p


def _fresh_dir(command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path("runs") / f"{command}-{stamp}"
    out, k = base, 1
    while out.exists():
        k += 1
        out = base.with_name(f"{base.name}-{k}")
    return out


def _ids(text: str | None, flag: str) -> np.ndarray:
    if not text:
        raise ConfigError(f"{flag} is required")
    try:
        return np.array([int(t) for t in text.replace(",", " ").split()], dtype=int)
    except ValueError:
        raise ConfigError(f"{flag} expects space-separated integers, got {text!r}") from None


def _load(ckpt: Path | None) -> tuple[Seq2Seq, RunConfig]:
    if ckpt is None:
        raise ConfigError("--ckpt is required")
    rc = config_for_checkpoint(ckpt)
    return Seq2Seq(rc.model, ad.load_checkpoint(ckpt)), rc


# ------------------------------------------------------------------ commands


def cmd_gen_data(rc: RunConfig, args, out: Path) -> None:
    train, test = generate(rc.task)
    write_dataset(train, out / "train.txt", rc.task.pattern_seed, rc.task.frame_width)
    write_dataset(test, out / "test.txt", rc.task.pattern_seed, rc.task.frame_width)
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")


def cmd_train(rc: RunConfig, args, out: Path) -> None:
    from .training import train

    train_set, test_set = generate(rc.task)
    _, metrics = train(rc.model, rc.task, rc.train, train_set, test_set, run_dir=out)
    last = metrics.rows[-1]
    print(f"{rc.model.label} seed={rc.seed}: final val fail rate {last.val_fail_rate:.3f}, "
          f"epochs-to-stable {metrics.epochs_to_stable:g}")


def cmd_synth(rc: RunConfig, args, out: Path) -> None:
    model, crc = _load(args.ckpt)
    tokens = _ids(args.tokens, "--tokens")
    # no gold length at synthesis time: budget for every token at max duration
    max_steps = args.max_steps or crc.train.max_steps_factor * math.ceil(
        len(tokens) * crc.task.max_duration / model.config.reduction)
    run = model.run_free(tokens, args.bias, max_steps)
    write_frames_csv(run.frames, out / "frames.csv")
    write_alignment_csv(run.alignments, out / "alignment.csv")
    write_pgm(run.alignments, out / "alignment.pgm")
    if len(run.u):
        write_alignment_csv(run.u[:, None], out / "u.csv")
    stop = f"stopped at step {run.stop_step}" if run.stop_step else f"truncated at {max_steps} steps"
    print(f"{len(run.frames)} frames, {stop}; outputs in {out}")


def cmd_align(rc: RunConfig, args, out: Path) -> None:
    model, crc = _load(args.ckpt)
    tokens, durations = _ids(args.tokens, "--tokens"), _ids(args.durations, "--durations")
    if len(tokens) != len(durations):
        raise ConfigError("--tokens and --durations must have the same length")
    patterns = make_patterns(crc.task.vocab_size, crc.task.frame_width, crc.task.pattern_seed)
    sample = TaskSample(tokens, durations, render_frames(tokens, durations, patterns))
    with ad.no_grad():
        res = model.run_teacher_forced(tokens, sample.frames)
    write_alignment_csv(res.alignments, out / "alignment.csv")
    write_pgm(res.alignments, out / "alignment.pgm")
    write_alignment_csv(gold_step_alignment(sample, model.config.reduction), out / "gold_alignment.csv")
    diag = diagnose_alignment(res.alignments, len(tokens), crc.task.max_duration, model.config.reduction)
    print(f"loss {res.loss.item():.6f}; flags: {', '.join(diag.flags()) or 'none'}; outputs in {out}")


def cmd_oracle_check(rc: RunConfig, args, out: Path) -> None:
    e = rc.experiment
    worst = oracle.oracle_check(trials=args.trials or e.oracle_trials, max_n=args.max_n or e.oracle_max_n,
                                max_t=args.max_t or e.oracle_max_t, seed=rc.seed)
    lines = ["mechanism,max_abs_dev"] + [f"{k},{v:.3e}" for k, v in worst.items()]
    (out / "oracle_check.csv").write_text("\n".join(lines) + "\n")
    for k, v in worst.items():
        print(f"{k}: max |recursion - enumeration| = {v:.3e} (tol {e.oracle_tol:g})")
    if max(worst.values()) > e.oracle_tol:
        raise VerificationFailed("oracle deviation above tolerance")


def cmd_grad_check(rc: RunConfig, args, out: Path) -> None:
    e = rc.experiment
    lines = ["mechanism,stabilizer,parameter,max_rel_error"]
    bad = []
    for mech in ("baseline", "fa", "fa-ta"):
        for stab in ("none", "window", "conv"):
            report = gradient_check(miniature_config(mech, stab, seed=rc.seed), step=e.grad_step,
                                    order=e.grad_order, seed=rc.seed)
            lines += [f"{mech},{stab},{name},{err:.3e}" for name, err in report.items()]
            worst = max(report, key=report.get)
            ok = report[worst] <= e.grad_tol
            print(f"{mech}+{stab}: worst {worst} {report[worst]:.2e} {'ok' if ok else 'FAIL'}")
            if not ok:
                bad.append(f"{mech}+{stab}:{worst}")
    (out / "grad_check.csv").write_text("\n".join(lines) + "\n")
    if bad:
        raise VerificationFailed("gradient check above tolerance: " + ", ".join(bad))


def cmd_stability_eval(rc: RunConfig, args, out: Path) -> None:
    if args.ckpt is not None:
        model, crc = _load(args.ckpt)
        samples = generate(crc.task)[1]
        res = stability_eval(model, samples, crc.task, crc.train)
        lines = ["index,failed,flags"]
        lines += [f"{i},{int(d.failed)},{' '.join(d.flags())}" for i, d in enumerate(res.diagnostics)]
        (out / "stability_samples.csv").write_text("\n".join(lines) + "\n")
        print(f"{model.config.label}: {res.failed}/{res.total} failed")
        return
    rows = ex.stability_compare(rc, out)
    for r in rows:
        print(f"{r.mechanism}+{r.stabilizer} seed={r.seed}: {r.failed}/{r.total} failed")
    print(f"table: {out / 'stability.csv'}")


def cmd_convergence_compare(rc: RunConfig, args, out: Path) -> None:
    rows = ex.convergence_compare(rc, out)
    for mech, stab in rc.experiment.compare_list():
        print(f"{mech}+{stab}: median epochs-to-stable {ex.median_epochs_to_stable(rows, mech, stab):g}")
    print(f"table: {out / 'convergence.csv'}")


def cmd_speed_sweep(rc: RunConfig, args, out: Path) -> None:
    if args.ckpt is not None:
        model, crc = _load(args.ckpt)
        crc.experiment = rc.experiment
        summary = ex.sweep_model(crc, model, out)
    else:
        summary = ex.speed_compare(rc, out)
    for r in summary.rows:
        print(f"bias {r.bias:+.1f}: ratio {r.mean_ratio:.4f} +- {r.stddev_ratio:.4f}, {r.n_failed} failed")
    print(f"{summary.n_used} samples; surviving spread {summary.spread:.3f}")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "synth": cmd_synth,
    "align": cmd_align,
    "oracle-check": cmd_oracle_check,
    "grad-check": cmd_grad_check,
    "stability-eval": cmd_stability_eval,
    "convergence-compare": cmd_convergence_compare,
    "speed-sweep": cmd_speed_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command not in COMMANDS:
        parser.print_usage(sys.stderr)
        print(f"monoattn: unknown command {args.command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        rc = parse_config(args.config, overrides)
        out = args.out or _fresh_dir(args.command)
        out.mkdir(parents=True, exist_ok=True)
        rc.write(out / "resolved_config.txt")
        HANDLERS[args.command](rc, args, out)
    except VerificationFailed as exc:
        print(f"monoattn: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ConfigError, ValueError, OSError, KeyError, RuntimeError, ArithmeticError) as exc:
        print(f"monoattn: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
