"""Run configuration: a strict plain-text key-value format with one
section per task.

Example file::

    [common]
    seed = 7

    [surrogate]
    epochs = 40
    lambda_bl = 0.1

Absent keys take the documented defaults; unknown sections or keys are
hard errors so typos cannot silently change a run.  `render_config`
serializes a resolved config back to the same format.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class CommonSection:
    seed: int = 7


@dataclass
class DataSection:
    pulses_normal: int = 120
    pulses_anomaly_a: int = 60
    test_normal: int = 60
    test_anomaly_a: int = 40
    test_anomaly_b: int = 40
    series_length: int = 400
    ood_start: int = 175
    ood_end: int = 225
    output_channel: int = 1


@dataclass
class SiameseSection:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-2
    alpha: float = 0.5
    margin: float = 1.0
    rff_dim: int = 256
    length_scale: float = 1.0
    ridge: float = 1e-3
    spectral_bound: float = 0.95
    power_iterations: int = 4
    pairs_per_label: int = 150


@dataclass
class SurrogateSection:
    epochs: int = 80
    batch_size: int = 32
    lr: float = 3e-3
    rff_dim: int = 256
    length_scale: float = 1.0
    noise_var: float = 1e-2
    lambda_bl: float = 0.1
    l1: float = 0.75
    l2: float = 1.25
    pairs_per_batch: int = 64
    gate_threshold: float = 0.995


@dataclass
class EvaluateSection:
    trials: int = 250
    grid_size: int = 512
    test_pairs_per_label: int = 60


@dataclass
class ProbeSection:
    channel: int = 1
    base_window: int = 50
    increment_max: float = 0.6
    increment_count: int = 12


@dataclass
class RunConfig:
    common: CommonSection = field(default_factory=CommonSection)
    data: DataSection = field(default_factory=DataSection)
    siamese: SiameseSection = field(default_factory=SiameseSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    probe: ProbeSection = field(default_factory=ProbeSection)

    @property
    def seed(self) -> int:
        return self.common.seed


_SECTIONS = {
    "common": CommonSection,
    "data": DataSection,
    "siamese": SiameseSection,
    "surrogate": SurrogateSection,
    "evaluate": EvaluateSection,
    "probe": ProbeSection,
}

_SECTION_ORDER = ("common", "data", "siamese", "surrogate", "evaluate", "probe")


def _coerce(section: str, key: str, raw: str, target_type: type, line: int):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"key {section}.{key} expects {target_type.__name__}, got {raw!r}",
            line=line) from None


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    section_name: str | None = None
    section_obj = None
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section_name = line[1:-1].strip()
            if section_name not in _SECTIONS:
                raise ConfigError(f"unknown section [{section_name}]", line=line_no)
            section_obj = getattr(cfg, section_name)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", line=line_no)
        if section_obj is None:
            raise ConfigError("key outside of any [section]", line=line_no)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        field_names = {f.name for f in dataclasses.fields(section_obj)}
        if key not in field_names:
            raise ConfigError(f"unknown key {key!r} in section [{section_name}]",
                              line=line_no)
        target_type = type(getattr(section_obj, key))
        setattr(section_obj, key, _coerce(section_name, key, value, target_type, line_no))
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def render_config(cfg: RunConfig) -> str:
    lines = []
    for name in _SECTION_ORDER:
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if isinstance(value, float):
                lines.append(f"{f.name} = {value!r}")
            else:
                lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def _validate(cfg: RunConfig) -> None:
    d, s, g, e, p = cfg.data, cfg.siamese, cfg.surrogate, cfg.evaluate, cfg.probe
    _require(cfg.common.seed >= 0, "common.seed must be >= 0")
    for key in ("pulses_normal", "pulses_anomaly_a", "test_normal",
                "test_anomaly_a", "test_anomaly_b"):
        _require(getattr(d, key) >= 0, f"data.{key} must be >= 0")
    _require(d.series_length >= 16, "data.series_length must be >= 16")
    _require(0 <= d.ood_start < d.ood_end <= d.series_length,
             "data OOD segment must satisfy 0 <= start < end <= series_length")
    _require(0 <= d.output_channel < 5, "data.output_channel must be in [0, 5)")
    _require(s.epochs >= 0, "siamese.epochs must be >= 0")
    _require(s.batch_size >= 2, "siamese.batch_size must be >= 2")
    _require(s.lr > 0, "siamese.lr must be positive")
    _require(0 < s.alpha < 1, "siamese.alpha must be in (0, 1)")
    _require(s.margin > 0, "siamese.margin must be positive")
    _require(s.rff_dim >= 1, "siamese.rff_dim must be >= 1")
    _require(s.length_scale > 0, "siamese.length_scale must be positive")
    _require(s.ridge > 0, "siamese.ridge must be positive")
    _require(s.spectral_bound > 0, "siamese.spectral_bound must be positive")
    _require(s.power_iterations >= 1, "siamese.power_iterations must be >= 1")
    _require(s.pairs_per_label >= 0, "siamese.pairs_per_label must be >= 0")
    _require(g.epochs >= 0, "surrogate.epochs must be >= 0")
    _require(g.batch_size >= 2, "surrogate.batch_size must be >= 2")
    _require(g.lr > 0, "surrogate.lr must be positive")
    _require(g.rff_dim >= 1, "surrogate.rff_dim must be >= 1")
    _require(g.length_scale > 0, "surrogate.length_scale must be positive")
    _require(g.noise_var > 0, "surrogate.noise_var must be positive")
    _require(g.lambda_bl >= 0, "surrogate.lambda_bl must be >= 0")
    _require(0 < g.l1 <= g.l2, "surrogate needs 0 < l1 <= l2")
    _require(g.pairs_per_batch >= 1, "surrogate.pairs_per_batch must be >= 1")
    _require(0 < g.gate_threshold <= 1, "surrogate.gate_threshold must be in (0, 1]")
    _require(e.trials >= 1, "evaluate.trials must be >= 1")
    _require(e.grid_size >= 2, "evaluate.grid_size must be >= 2")
    _require(e.test_pairs_per_label >= 1, "evaluate.test_pairs_per_label must be >= 1")
    _require(0 <= p.channel < 5, "probe.channel must be in [0, 5)")
    _require(p.base_window >= 0, "probe.base_window must be >= 0")
    _require(p.increment_max > 0, "probe.increment_max must be positive")
    _require(p.increment_count >= 2, "probe.increment_count must be >= 2")
