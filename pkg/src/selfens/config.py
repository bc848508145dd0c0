"""Run configuration: dataclasses, INI-style config files, flag overrides.

The file format is a flat key-value text format with one section per
subsystem, so experiment records diff cleanly. Every key has a CLI flag
equivalent; flags override file values. parse -> serialize -> parse is
the identity for valid configs.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import warnings
from dataclasses import dataclass, field

from .augment import AugmentPolicy
from .errors import ConfigurationError
from .schedules import ScheduleConfig

ALGORITHMS = ("supervised", "pi", "temporal")
PRECISIONS = ("float32", "float64")
RECIPES = ("two_moons", "cifar_binary", "raw_tensor", "csv")
PRESETS = ("conv_large", "cnn_small", "mlp", "custom")
PREPROCESS = ("none", "zca", "standardize")


@dataclass
class NetworkConfig:
    preset: str = "mlp"
    hidden: int = 64
    noise_sigma: float = 0.15
    dropout: float = 0.5
    layers: str = ""  # custom layer block, one layer per line (preset=custom)


@dataclass
class DataConfig:
    recipe: str = "two_moons"
    path: str = ""
    test_path: str = ""
    n: int = 1000
    test_n: int = 1000
    data_noise: float = 0.1
    labels_per_class: int = 0  # 0 keeps the dataset fully labeled
    corruption_fraction: float = 0.0
    preprocess: str = "none"
    zca_epsilon: float = 1e-5
    extra_pool_path: str = ""
    extra_pool_n: int = 0  # synthesize an unlabeled pool for two_moons
    extra_pool_cap: int = 0


@dataclass
class RunConfig:
    algorithm: str = "pi"
    seed: int = 1
    replicates: int = 1
    precision: str = "float32"
    batch_size: int = 100
    alpha: float = 0.6
    adam_eps: float = 1e-8
    ensemble_sweep: bool = False  # accumulate Z from a post-epoch stochastic sweep
    out_dir: str = ""
    network: NetworkConfig = field(default_factory=NetworkConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        _expect(self.algorithm in ALGORITHMS, "run.algorithm", self.algorithm, ALGORITHMS)
        _expect(self.precision in PRECISIONS, "run.precision", self.precision, PRECISIONS)
        _expect(self.batch_size >= 1, "run.batch_size", self.batch_size, ">= 1")
        _expect(0.0 <= self.alpha < 1.0, "run.alpha", self.alpha, "[0, 1)")
        _expect(self.replicates >= 1, "run.replicates", self.replicates, ">= 1")
        _expect(self.network.preset in PRESETS, "network.preset", self.network.preset, PRESETS)
        _expect(self.network.dropout < 1.0 and self.network.dropout >= 0.0,
                "network.dropout", self.network.dropout, "[0, 1)")
        _expect(self.data.recipe in RECIPES, "data.recipe", self.data.recipe, RECIPES)
        _expect(self.data.preprocess in PREPROCESS, "data.preprocess",
                self.data.preprocess, PREPROCESS)
        _expect(0.0 <= self.data.corruption_fraction <= 1.0,
                "data.corruption_fraction", self.data.corruption_fraction, "[0, 1]")
        self.schedule.validate()
        self.augment.validate()
        if self.schedule.rampup_epochs < 0.1 * self.schedule.total_epochs:
            warnings.warn(
                "unsupervised ramp-up shorter than 10% of the run; fast ramps "
                "are known to collapse to degenerate solutions", stacklevel=2)
        return self


def _expect(ok: bool, key: str, value, accepted) -> None:
    if not ok:
        raise ConfigurationError(f"{key}={value!r} invalid; accepted: {accepted}")


_SECTIONS = {
    "run": (RunConfig, None),
    "network": (NetworkConfig, "network"),
    "schedule": (ScheduleConfig, "schedule"),
    "augment": (AugmentPolicy, "augment"),
    "data": (DataConfig, "data"),
}

_RUN_SCALARS = ("algorithm", "seed", "replicates", "precision", "batch_size",
                "alpha", "adam_eps", "ensemble_sweep", "out_dir")


def _coerce(section: str, key: str, text: str, current) -> object:
    if isinstance(current, bool):
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"{section}.{key}={text!r} is not a boolean")
    try:
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
    except ValueError:
        raise ConfigurationError(
            f"{section}.{key}={text!r} is not a {type(current).__name__}") from None
    return text


def _canon_layers(text: str) -> str:
    lines = [line.strip() for line in text.splitlines()]
    return "\n".join(line for line in lines if line)


def parse_config(path: str | None = None,
                 overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a validated RunConfig from defaults, an optional config file,
    and 'section.key' string overrides (CLI flags). Unknown keys are
    rejected by name."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as f:
                parser.read_file(f)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config file: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                _assign(cfg, section, key, value)
    for spec, value in (overrides or {}).items():
        if "." not in spec:
            raise ConfigurationError(f"override '{spec}' must look like section.key")
        section, key = spec.split(".", 1)
        _assign(cfg, section, key, value)
    return cfg.validate()


def _assign(cfg: RunConfig, section: str, key: str, value: str) -> None:
    if section not in _SECTIONS:
        raise ConfigurationError(f"unknown config section [{section}]")
    target = cfg if section == "run" else getattr(cfg, section)
    valid = (_RUN_SCALARS if section == "run"
             else tuple(f.name for f in dataclasses.fields(target)))
    if key not in valid:
        raise ConfigurationError(f"unknown config key {section}.{key}")
    current = getattr(target, key)
    if section == "network" and key == "layers":
        setattr(target, key, _canon_layers(value))
        return
    setattr(target, key, _coerce(section, key, value, current))


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig as the diff-friendly INI text this module parses."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["run"] = {k: str(getattr(cfg, k)) for k in _RUN_SCALARS}
    for section, attr in (("network", cfg.network), ("schedule", cfg.schedule),
                          ("augment", cfg.augment), ("data", cfg.data)):
        items = {}
        for f in dataclasses.fields(attr):
            value = getattr(attr, f.name)
            if f.name == "layers":
                if value:
                    items[f.name] = "\n" + _canon_layers(value)
                continue
            items[f.name] = str(value)
        parser[section] = items
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as f:
        f.write(serialize_config(cfg))
