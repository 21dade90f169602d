"""Run configuration: an INI file with sections, plus CLI overrides.

One flat RunConfig drives every command; unknown keys in the file are
rejected so typos fail loudly instead of silently training with defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .geometry import GridSpec, ObstacleMap, empty_domain, obstacle_map_from_text
from .losses import LossWeights
from .networks import NetworkConfig
from .simulate import FlowScenario, SourceSpec


@dataclass(frozen=True)
class RunConfig:
    # grid
    height: int = 32
    width: int = 32
    dx: float = 1.0
    dt: float = 1.0
    # network
    k: int = 4
    inference_widths: tuple[int, ...] = (32, 64, 128)
    correction_widths: tuple[int, ...] = (16, 32)
    # training
    epochs: int = 100
    batch_size: int = 2
    lr: float = 1e-3
    sched_step: int = 30
    sched_gamma: float = 0.5
    train_horizon: int = 4
    test_horizon: int = 10
    seed: int = 0
    # loss
    w_data: float = 1.0
    w_phys: float = 1.0
    w_temp: float = 1.0
    # ablation
    no_physical: bool = False
    no_temporal: bool = False
    no_e1: bool = False
    no_correction: bool = False
    use_ck_latent: bool = False
    changed_operator: bool = False
    literal_e1_sign: bool = False
    mask_pde_update: bool = True
    # data
    dataset: str = "dataset.pinp"
    out_dir: str = "."
    # scenario (generate command)
    kind: str = "uniform"
    magnitude: float = 0.4
    inv_pe: float = 0.01
    count: int = 300
    frames_per_seq: int = 16
    geometry: str = "empty"
    source_rate: float = 0.0
    source_x: float = 0.0
    source_y: float = 0.0
    source_radius: float = 0.0

    def __post_init__(self):
        if self.train_horizon < 1:
            raise ValueError("train_horizon must be >= 1")
        if self.test_horizon < 1:
            raise ValueError("test_horizon must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def grid(self) -> GridSpec:
        return GridSpec(self.height, self.width, self.dx, self.dt)

    def network(self) -> NetworkConfig:
        return NetworkConfig(self.k, tuple(self.inference_widths), tuple(self.correction_widths))

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_data, self.w_phys, self.w_temp)

    def scenario(self) -> FlowScenario:
        source = None
        if self.source_rate > 0:
            source = SourceSpec((self.source_x, self.source_y), self.source_radius, self.source_rate)
        return FlowScenario(self.kind, self.magnitude, self.inv_pe, self.seed, source)

    def obstacles(self) -> ObstacleMap:
        if self.geometry == "empty":
            return empty_domain(self.height, self.width)
        with open(self.geometry) as fh:
            return obstacle_map_from_text(fh.read())


_SECTIONS = {
    "grid": ("height", "width", "dx", "dt"),
    "network": ("k", "inference_widths", "correction_widths"),
    "training": ("epochs", "batch_size", "lr", "sched_step", "sched_gamma",
                 "train_horizon", "test_horizon", "seed"),
    "loss": ("w_data", "w_phys", "w_temp"),
    "ablation": ("no_physical", "no_temporal", "no_e1", "no_correction",
                 "use_ck_latent", "changed_operator", "literal_e1_sign", "mask_pde_update"),
    "data": ("dataset", "out_dir"),
    "scenario": ("kind", "magnitude", "inv_pe", "count", "frames_per_seq", "geometry",
                 "source_rate", "source_x", "source_y", "source_radius"),
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind.startswith("tuple"):
        return tuple(int(part) for part in raw.split(","))
    return raw


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return load_config_text(fh.read())


def load_config_text(text: str) -> RunConfig:
    """Parse INI text (config files, checkpoint-embedded copies)."""
    parser = configparser.ConfigParser()
    parser.read_string(text)
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(key, raw)
    return RunConfig(**values)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Replace fields with non-None override values (CLI flags win)."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    bad = set(changes) - _FIELD_TYPES.keys()
    if bad:
        raise ValueError(f"unknown config fields: {sorted(bad)}")
    return dataclasses.replace(cfg, **changes) if changes else cfg


def config_text(cfg: RunConfig) -> str:
    """The full configuration as INI text (written next to checkpoints)."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = getattr(cfg, key)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
