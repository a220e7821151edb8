"""Experiment configuration: strict YAML schema with per-kind parameter blocks."""
from __future__ import annotations

import itertools
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MarkovEvolveParams(_Strict):
    n_sites: int = Field(ge=2)
    coupling: float
    coupling_exponent: float = Field(0.5, ge=0)
    steps: int = Field(ge=0)


class FPIntegrateParams(_Strict):
    n_sites: int = Field(ge=2)
    tau_final: float = Field(gt=0)
    n_points: int = Field(1025, ge=64)
    coordinate: Literal["w", "phi"] = "w"
    dt: Optional[float] = Field(None, gt=0)
    full_coefficients: bool = False
    scheme: Literal["upwind", "exponential"] = "exponential"
    initial_weight: float = Field(1.0, gt=0)


class CircuitMCParams(_Strict):
    n_sites: int = Field(ge=2, le=10)
    coupling: float
    coupling_exponent: float = Field(0.5, ge=0)
    steps: int = Field(ge=0)
    n_realizations: int = Field(ge=2)
    convention: Literal["haar-zz", "haar-zz-haar"] = "haar-zz"


class _ChainParams(_Strict):
    n_sites: int = Field(ge=2, le=22)
    ising_j: float = 1.0
    field_x: float = 1.05
    field_z: float = 0.0
    global_g: float = 0.0
    boundary: Literal["open", "periodic"] = "open"


class OTOCParams(_ChainParams):
    t_max: float = Field(gt=0)
    dt: float = Field(gt=0)
    sites: Optional[list[int]] = None
    n_states: int = Field(1, ge=1)


class EntropyParams(_ChainParams):
    t_max: float = Field(gt=0)
    dt: float = Field(gt=0)


class LevelStatsParams(_ChainParams):
    boundary: Literal["open", "periodic"] = "periodic"
    min_dim: int = Field(50, ge=3)
    n_boot: int = Field(1000, ge=10)


class ClassicalGrowthParams(_Strict):
    n_osc: int = Field(ge=1)
    omega1: float = Field(1.0, ge=0)
    omega2: float = Field(1.0, ge=0)
    omega3: float = Field(2.0, ge=0)
    epsilon: float = Field(1e-5, gt=0)
    boundary: Literal["open", "periodic"] = "open"
    t_final: float = Field(gt=0)
    n_ensemble: int = Field(4000, ge=1)
    dt: Optional[float] = Field(None, gt=0)
    record_dt: float = Field(0.05, gt=0)


class ValidateParams(_Strict):
    profile: Literal["quick", "full"] = "quick"
    checks: Optional[list[str]] = None


PARAM_MODELS: dict[str, type[_Strict]] = {
    "markov-evolve": MarkovEvolveParams,
    "fp-integrate": FPIntegrateParams,
    "circuit-mc": CircuitMCParams,
    "otoc": OTOCParams,
    "entropy": EntropyParams,
    "level-stats": LevelStatsParams,
    "classical-growth": ClassicalGrowthParams,
    "validate": ValidateParams,
}


class ExperimentConfig(_Strict):
    kind: Literal[tuple(PARAM_MODELS)]  # type: ignore[valid-type]
    name: Optional[str] = None
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None
    checkpoint_every: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    params: dict[str, Any] = Field(default_factory=dict)
    sweep: dict[str, list[Any]] = Field(default_factory=dict)

    @field_validator("sweep")
    @classmethod
    def _nonempty_axes(cls, v):
        for key, values in v.items():
            if not values:
                raise ValueError(f"sweep axis {key!r} is empty")
        return v

    @model_validator(mode="after")
    def _check_sweep_axes(self):
        model = PARAM_MODELS[self.kind]
        unknown = set(self.sweep) - set(model.model_fields)
        if unknown:
            raise ValueError(f"sweep axes {sorted(unknown)} are not parameters of {self.kind!r}")
        return self

    def points_raw(self) -> list[dict]:
        axes = list(self.sweep)
        if not axes:
            return [dict(self.params)]
        return [{**self.params, **dict(zip(axes, combo))}
                for combo in itertools.product(*(self.sweep[a] for a in axes))]

    def points(self) -> list[_Strict]:
        """Resolved parameter block for every sweep point, in row-major axis order."""
        model = PARAM_MODELS[self.kind]
        return [model.model_validate(p) for p in self.points_raw()]


class ConfigError(ValueError):
    """Readable configuration failure naming the offending field and line."""


def _node_line(node, loc) -> Optional[int]:
    """1-based line of the YAML node addressed by a validation ``loc``, if present."""
    line = node.start_mark.line + 1 if node is not None else None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == str(part)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            nxt = node.value[part]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def _format_errors(errors, root) -> str:
    lines = []
    for e in errors:
        loc = [p for p in e["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
        where = ".".join(str(p) for p in loc) or "<root>"
        line = _node_line(root, loc)
        lines.append(f"{where} (line {line}): {e['msg']}" if line else f"{where}: {e['msg']}")
    return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc.errors(), root)) from None
    model = PARAM_MODELS[cfg.kind]
    errors, seen = [], set()
    for point in cfg.points_raw():
        try:
            model.model_validate(point)
        except ValidationError as exc:
            for e in exc.errors():
                key = e["loc"][0] if e["loc"] else None
                block = "sweep" if key in cfg.sweep else "params"
                e = {**e, "loc": (block,) + tuple(e["loc"])}
                tag = (e["loc"], e["msg"])
                if tag not in seen:
                    seen.add(tag)
                    errors.append(e)
    if errors:
        raise ConfigError(_format_errors(errors, root))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
