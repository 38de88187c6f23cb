"""``key = value`` run configuration shared by the CLI and the experiments."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .task import TaskConfig
from .training import TrainConfig


@dataclass
class ExperimentConfig:
    seeds: str = "1 2 3 4 5"
    compare: str = "baseline:none fa:none fa-ta:none"
    biases: str = "-0.6 -0.4 -0.2 0 0.2 0.4 0.6"
    oracle_trials: int = 100
    oracle_max_n: int = 6
    oracle_max_t: int = 8
    oracle_tol: float = 1e-9
    grad_tol: float = 1e-4
    grad_step: float = 1e-3
    grad_order: int = 4

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def seed_list(self) -> list[int]:
        return [int(s) for s in self.seeds.replace(",", " ").split()]

    def bias_list(self) -> list[float]:
        return [float(b) for b in self.biases.replace(",", " ").split()]

    def compare_list(self) -> list[tuple[str, str]]:
        out = []
        for item in self.compare.replace(",", " ").split():
            mech, _, stab = item.partition(":")
            out.append((mech, stab or "none"))
        return out


# Every key belongs to exactly one section. ModelConfig's vocab_size,
# frame_width and seed are filled from the task section and the run seed.
_MODEL_DERIVED = {"vocab_size", "frame_width", "seed"}
SECTIONS: dict[str, type] = {
    "task": TaskConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "experiment": ExperimentConfig,
}


def _section_keys() -> dict[str, list[str]]:
    out = {}
    for name, cls in SECTIONS.items():
        keys = cls.keys()
        if cls is ModelConfig:
            keys = [k for k in keys if k not in _MODEL_DERIVED]
        out[name] = keys
    return out


def all_defaults() -> dict[str, dict[str, object]]:
    """Section -> key -> default value (plus the top-level ``seed``)."""
    out: dict[str, dict[str, object]] = {"run": {"seed": 0}}
    for name, keys in _section_keys().items():
        inst = SECTIONS[name]()
        out[name] = {k: getattr(inst, k) for k in keys}
    return out


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: TaskConfig
    model: ModelConfig
    train: TrainConfig
    experiment: ExperimentConfig
    seed: int
    values: dict[str, str] = field(default_factory=dict)

    def model_for(self, mechanism: str | None = None, stabilizer: str | None = None,
                  seed: int | None = None) -> ModelConfig:
        kw = {f.name: getattr(self.model, f.name) for f in fields(ModelConfig)}
        if mechanism is not None:
            kw["mechanism"] = mechanism
        if stabilizer is not None:
            kw["stabilizer"] = stabilizer
        if seed is not None:
            kw["seed"] = seed
        return ModelConfig(**kw)

    def lines(self) -> list[str]:
        out = [f"seed = {self.seed}"]
        for name, keys in _section_keys().items():
            obj = getattr(self, name)
            out.append(f"# {name}")
            out.extend(f"{k} = {getattr(obj, k)}" for k in keys)
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None


def read_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_config(values: dict[str, str]) -> RunConfig:
    defaults = all_defaults()
    owner = {k: sec for sec, keys in defaults.items() for k in keys}
    unknown = sorted(k for k in values if k not in owner)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    resolved = {sec: dict(keys) for sec, keys in defaults.items()}
    for key, raw in values.items():
        sec = owner[key]
        resolved[sec][key] = _coerce(key, raw, defaults[sec][key])
    seed = int(resolved["run"]["seed"])
    try:
        task = TaskConfig(**resolved["task"])
        model = ModelConfig(**resolved["model"], vocab_size=task.vocab_size,
                            frame_width=task.frame_width, seed=seed)
        train = TrainConfig(**resolved["train"])
        experiment = ExperimentConfig(**resolved["experiment"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(task, model, train, experiment, seed, dict(values))


def parse_config(path=None, overrides=None, env=None) -> RunConfig:
    """File values, then ``--set`` overrides; ``MONOATTN_SEED`` fills an unset seed."""
    env = os.environ if env is None else env
    values: dict[str, str] = {}
    if path is not None:
        values.update(read_kv_file(path))
    values.update(parse_overrides(overrides))
    if "seed" not in values and env.get("MONOATTN_SEED"):
        values["seed"] = env["MONOATTN_SEED"]
    return build_config(values)


def config_text(mcfg: ModelConfig, task: TaskConfig, tcfg: TrainConfig) -> str:
    lines = [f"seed = {mcfg.seed}", "# task"]
    lines += [f"{k} = {getattr(task, k)}" for k in TaskConfig.keys()]
    lines.append("# model")
    lines += [f"{k} = {getattr(mcfg, k)}" for k in _section_keys()["model"]]
    lines.append("# train")
    lines += [f"{k} = {getattr(tcfg, k)}" for k in TrainConfig.keys()]
    return "\n".join(lines) + "\n"


def dump_config(path, mcfg: ModelConfig, task: TaskConfig, tcfg: TrainConfig) -> None:
    """Sidecar config for a training run: enough to rebuild the model from a checkpoint."""
    Path(path).write_text(config_text(mcfg, task, tcfg))


def config_for_checkpoint(ckpt_path) -> RunConfig:
    """Load the ``config.txt`` sidecar of a run that produced ``ckpt_path``."""
    ckpt_path = Path(ckpt_path)
    for d in (ckpt_path.parent, ckpt_path.parent.parent):
        candidate = d / "config.txt"
        if candidate.exists():
            return parse_config(candidate, env={})
    raise FileNotFoundError(f"no config.txt next to {ckpt_path} or in its run directory")
