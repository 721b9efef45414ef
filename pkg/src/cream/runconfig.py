"""Strict JSON run configuration.

Unknown keys are rejected (every offending key is reported at once) and all
defaults are materialized into the effective config that commands persist
alongside their artifacts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .model import ModelConfig
from .synthgen import GenConfig
from .training import CurriculumPhase


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))


@dataclass(frozen=True)
class DataConfig:
    width: int = 128
    height: int = 64
    min_fields: int = 3
    max_fields: int = 4
    table_prob: float = 0.3
    object_prob: float = 0.3
    min_scale: int = 1
    max_scale: int = 1
    seed: int = 0
    count: int = 200
    train_dir: str = ""
    eval_dir: str = ""

    def gen_config(self) -> GenConfig:
        return GenConfig(
            width=self.width,
            height=self.height,
            min_fields=self.min_fields,
            max_fields=self.max_fields,
            table_prob=self.table_prob,
            object_prob=self.object_prob,
            min_scale=self.min_scale,
            max_scale=self.max_scale,
            seed=self.seed,
        )


@dataclass(frozen=True)
class PhaseConfig:
    name: str = "phase"
    steps: int = 0
    batch_size: int = 16
    lr: float = 1e-3
    schedule: str = "fixed"
    proportions: dict = field(default_factory=dict)

    def curriculum_phase(self) -> CurriculumPhase:
        return CurriculumPhase(
            name=self.name,
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            schedule=self.schedule,
            proportions=dict(self.proportions),
        )


def _default_phases() -> tuple[PhaseConfig, ...]:
    mixed = {"TR": 0.22, "MTP": 0.46, "CAPT": 0.22, "QA": 0.05, "QG": 0.05}
    return (
        PhaseConfig(name="mixed", steps=3000, batch_size=16, lr=1e-3, schedule="fixed", proportions=mixed),
        PhaseConfig(name="qa", steps=2000, batch_size=16, lr=5e-4, schedule="cosine", proportions={"QA": 1.0}),
    )


@dataclass(frozen=True)
class TrainConfig:
    phases: tuple[PhaseConfig, ...] = field(default_factory=_default_phases)
    log_interval: int = 50
    noise_drop_max: float = 0.3
    val_questions: int = 1


@dataclass(frozen=True)
class EvalConfig:
    drop_rates: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    corrupt_rate: float = 0.0
    aux_disabled: bool = False
    questions_per_doc: int = 1
    seed: int = 0


@dataclass(frozen=True)
class IntegrateConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-3
    eval_fraction: float = 0.1
    lm_path: str = ""
    lm_lr: float = 1e-3
    lm_batch_size: int = 16
    lm_max_steps: int = 4000
    lm_target_loss: float = 2.5


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    integrate: IntegrateConfig = field(default_factory=IntegrateConfig)


_LIST_FIELDS = {
    (TrainConfig, "phases"): PhaseConfig,
}
_PLAIN_DICT_FIELDS = {(PhaseConfig, "proportions")}


def _coerce(cls, data, path: str, problems: list[str]):
    if not isinstance(data, dict):
        problems.append(f"{path}: expected an object, got {type(data).__name__}")
        return cls()
    known = [f.name for f in dataclasses.fields(cls)]
    for key in data:
        if key not in known:
            problems.append(f"{path}.{key}: unknown key")
    kwargs = {}
    for name in known:
        if name not in data:
            continue
        value = data[name]
        element = _LIST_FIELDS.get((cls, name))
        if element is not None:
            if not isinstance(value, list):
                problems.append(f"{path}.{name}: expected a list")
                continue
            kwargs[name] = tuple(
                _coerce(element, item, f"{path}.{name}[{i}]", problems)
                for i, item in enumerate(value)
            )
        elif (cls, name) in _PLAIN_DICT_FIELDS:
            kwargs[name] = dict(value)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        problems.append(f"{path}: {err}")
        return cls()


_SECTIONS = {
    "model": ModelConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "integrate": IntegrateConfig,
}


def parse_run_config(doc: dict) -> RunConfig:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["top level: expected a JSON object"])
    kwargs = {}
    for key in doc:
        if key not in _SECTIONS:
            problems.append(f"{key}: unknown section")
    for name, cls in _SECTIONS.items():
        if name in doc:
            kwargs[name] = _coerce(cls, doc[name], name, problems)
    if problems:
        raise ConfigError(problems)
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError([f"{path}: {err}"]) from err
    return parse_run_config(doc)


def effective_config_dict(config: RunConfig) -> dict:
    """All fields with defaults materialized, JSON-serializable."""
    return dataclasses.asdict(config)


def save_effective_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(effective_config_dict(config), f, indent=2, sort_keys=True)
        f.write("\n")
