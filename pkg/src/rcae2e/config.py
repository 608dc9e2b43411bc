"""One JSON document configures every stage; ``--set key=value`` edits single knobs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .evaluation import EXPERIMENTS, METHODS
from .profile import ThresholdConfig
from .rca_scc import RcaParams
from .synthgen import SynthConfig, SynthConfigError
from .ticc_gtc import CapacityError, ConfigError, TiccGtcParams


@dataclass(frozen=True)
class SweepConfig:
    experiment: str = "states"
    grid: tuple = (2, 3, 4)
    seeds: tuple[int, ...] = tuple(range(10))
    methods: tuple[str, ...] = ("RCAE2E", "single-state")
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"sweep.experiment: {self.experiment!r} is not one of {EXPERIMENTS}")
        if not self.grid:
            raise ConfigError("sweep.grid: must be non-empty")
        if not self.seeds:
            raise ConfigError("sweep.seeds: must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"sweep.methods: unknown {bad}; expected {METHODS}")
        if "RCAE2E" not in self.methods or len(self.methods) < 2:
            raise ConfigError("sweep.methods: must include RCAE2E and at least one ablation")
        if self.workers < 1:
            raise ConfigError("sweep.workers: must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    k: int | None = None  # default 2 * m
    p: int | None = None  # default max(1, m - 1)


_SECTIONS = {
    "ticc": TiccGtcParams,
    "rca": RcaParams,
    "threshold": ThresholdConfig,
    "synth": SynthConfig,
    "sweep": SweepConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    data: str | None = None
    out: str = "out"
    seed: int = 0
    ticc: TiccGtcParams = field(default_factory=TiccGtcParams)
    rca: RcaParams = field(default_factory=RcaParams)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["synth"] = self.synth.to_json_dict()
        return d

    def seeded(self) -> "PipelineConfig":
        """Stage configs with their seeds taken from the top-level seed."""
        return replace(self, synth=replace(self.synth, seed=self.seed), ticc=replace(self.ticc, seed=self.seed))


def _tuples(v):
    return tuple(_tuples(x) for x in v) if isinstance(v, list) else v


def _build_section(name: str, obj) -> object:
    cls = _SECTIONS[name]
    if not isinstance(obj, dict):
        raise ConfigError(f"{name}: expected an object, got {type(obj).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    try:
        return cls(**{k: _tuples(v) for k, v in obj.items()})
    except SynthConfigError as exc:
        raise ConfigError(f"synth.{exc}") from None
    except CapacityError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(obj: dict) -> PipelineConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    kwargs = {}
    for k, v in obj.items():
        kwargs[k] = _build_section(k, v) if k in _SECTIONS else v
    if not isinstance(kwargs.get("seed", 0), int):
        raise ConfigError("seed: must be an integer")
    return PipelineConfig(**kwargs)


def parse_value(text: str):
    """JSON literal when it parses (numbers, lists, null, booleans), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(obj: dict, assignments: list[str]) -> dict:
    """Apply ``section.key=value`` (or top-level ``key=value``) edits to a config dict."""
    out = json.loads(json.dumps(obj))
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) > 2 or not all(parts):
            raise ConfigError(f"--set {key!r}: expected key or section.key")
        if len(parts) == 2:
            section, name = parts
            if section not in _SECTIONS:
                raise ConfigError(f"{section}: unknown section")
            out.setdefault(section, {})[name] = parse_value(raw)
        else:
            out[parts[0]] = parse_value(raw)
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    obj = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
    obj = apply_overrides(obj, overrides or [])
    return config_from_dict(obj)
