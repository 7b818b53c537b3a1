"""Pipeline configuration: a sectioned TOML file with a ``version`` key.

Unknown keys are rejected so a typo cannot silently fall back to a default.
Relative data paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError

CONFIG_VERSION = 1
ALL_LEVELS = (2, 3, 4, 5, 6)


@dataclass(frozen=True)
class DataSection:
    historical: str | None = None
    evaluation: str | None = None
    meta: str | None = None
    simulation: str | None = None
    model: str | None = None


@dataclass(frozen=True)
class GenSection:
    """Synthetic coupled-process dataset written by the ``gen`` subcommand."""

    T: int = 6000
    S: int = 8
    noise_fraction: float = 0.02
    split: float = 0.75
    bound_margin: float = 0.5  # bounds sit this fraction of the range outside the noiseless signal
    valid_band: tuple[float, float] | None = None  # driver band where the reference model holds
    inject: str = "none"  # none | flatline | dropout | trend
    inject_sensor: int = 0
    inject_start: int = 500  # index within the evaluation segment
    inject_len: int = 300


@dataclass(frozen=True)
class Level3Section:
    # thresholds sit above what clean coupled-process data produces
    spike_window: int = 50
    z_threshold: float = 15.0
    stuck_min_run: int = 30
    stuck_epsilon: float = 0.0
    drift_window: int = 60
    slope_threshold: float = 0.025


@dataclass(frozen=True)
class Level4Section:
    train: bool = True
    window_len: int = 32
    latent_dim: int = 8
    hidden_dims: tuple[int, ...] = (64,)
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    input_dropout_rate: float = 0.15
    input_shift_rate: float = 0.15
    perr_threshold: float = 5.0
    min_run: int = 10


@dataclass(frozen=True)
class Level5Section:
    rel_tolerance: float = 0.05
    min_run: int = 10


@dataclass(frozen=True)
class Level6Section:
    max_lag: int = 5
    alpha: float | None = None
    conditioning: str = "all"


@dataclass(frozen=True)
class ReasoningSection:
    coincidence_window: int = 5
    neighbor_perr_ratio: float = 0.5
    min_corroborating_neighbors: int = 2


@dataclass(frozen=True)
class HeatmapSection:
    bucket_len: int = 60
    clamp_max: float = 20.0
    low_color: str = "#2c7bb6"
    high_color: str = "#d7191c"
    missing_color: str = "#bdbdbd"


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


_SECTIONS = {
    "data": DataSection,
    "gen": GenSection,
    "level3": Level3Section,
    "level4": Level4Section,
    "level5": Level5Section,
    "level6": Level6Section,
    "reasoning": ReasoningSection,
    "heatmap": HeatmapSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    version: int = CONFIG_VERSION
    seed: int | None = None
    levels: tuple[int, ...] = ALL_LEVELS
    base_dir: Path = Path(".")
    data: DataSection = field(default_factory=DataSection)
    gen: GenSection = field(default_factory=GenSection)
    level3: Level3Section = field(default_factory=Level3Section)
    level4: Level4Section = field(default_factory=Level4Section)
    level5: Level5Section = field(default_factory=Level5Section)
    level6: Level6Section = field(default_factory=Level6Section)
    reasoning: ReasoningSection = field(default_factory=ReasoningSection)
    heatmap: HeatmapSection = field(default_factory=HeatmapSection)
    output: OutputSection = field(default_factory=OutputSection)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.output.dir)

    def enabled(self, level: int) -> bool:
        return level in self.levels

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def check(self) -> None:
        """Raise ConfigurationError unless every enabled level has what it needs."""
        if self.version != CONFIG_VERSION:
            raise ConfigurationError(f"unsupported config version {self.version!r}, expected {CONFIG_VERSION}")
        bad = [lv for lv in self.levels if lv not in ALL_LEVELS]
        if bad:
            raise ConfigurationError(f"unknown levels {bad}; choose from {list(ALL_LEVELS)}")
        if not self.levels:
            return
        if self.data.evaluation is None and any(self.enabled(lv) for lv in (2, 3, 4, 5)):
            raise ConfigurationError("data.evaluation is required by levels 2-5")
        if self.data.meta is None:
            raise ConfigurationError("data.meta is required")
        if self.enabled(4):
            if self.level4.train:
                if self.data.historical is None:
                    raise ConfigurationError("level 4 training needs data.historical")
                if self.seed is None:
                    raise ConfigurationError("seed is required when level 4 training is enabled")
            else:
                model = self.path(self.data.model)
                if model is None or not model.is_file():
                    raise ConfigurationError(f"level 4 scoring needs an existing model file, got {model}")
        if self.enabled(5) and self.data.simulation is None:
            raise ConfigurationError("level 5 needs data.simulation")
        if self.enabled(6):
            if self.level6.alpha is None:
                raise ConfigurationError("level6.alpha is required when level 6 is enabled")
            if not 0 < self.level6.alpha < 1:
                raise ConfigurationError(f"level6.alpha must lie in (0, 1), got {self.level6.alpha}")
            if self.data.historical is None:
                raise ConfigurationError("level 6 needs data.historical")


def _build(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ConfigurationError(f"[{where}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for k, v in table.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


def config_from_dict(doc: dict, base_dir: str | Path = ".") -> PipelineConfig:
    if "version" not in doc:
        raise ConfigurationError("config is missing the 'version' key")
    top = {"version", "seed", "levels"}
    unknown = sorted(set(doc) - top - set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {name: _build(cls, doc[name], name) for name, cls in _SECTIONS.items() if name in doc}
    levels = doc.get("levels", list(ALL_LEVELS))
    if not isinstance(levels, list) or not all(isinstance(x, int) for x in levels):
        raise ConfigurationError("levels must be a list of integers")
    cfg = PipelineConfig(
        version=doc["version"],
        seed=doc.get("seed"),
        levels=tuple(sorted(set(levels))),
        base_dir=Path(base_dir),
        **kwargs,
    )
    if cfg.version != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config version {cfg.version!r}, expected {CONFIG_VERSION}")
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return config_from_dict(doc, path.parent)
