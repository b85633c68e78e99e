"""Run configuration: typed dataclass sections read from / written to INI text.

Every key must belong to a known section; unknown keys are rejected. Tuple
fields are written as comma-separated lists.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .channel import LinkBudgetConfig

VARIANTS = ("FULL", "NF", "NO_SIL", "NO_MHA", "MAAC", "RANDOM", "GREEDY_SINR")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass(frozen=True)
class ScenarioConfig:
    width: float = 1000.0  # m
    height: float = 1000.0  # m
    density: float = 8.0  # vehicles per km^2
    n_rsu: int = 4
    road_spacing: float = 250.0
    lanes_per_direction: int = 2
    lane_width: float = 3.5
    horizon: int = 100  # steps per episode (T)
    dt: float = 1e-3  # s per step
    penalty_w: float = 0.1
    neighbor_radius: float = 300.0
    max_neighbors: int = 8
    n_terrestrial: int = 4
    n_satellite: int = 4
    bw_terrestrial: float = 1e6
    bw_satellite: float = 20e6
    power_v2i: tuple = (23.0,)
    power_v2s: tuple = (33.5,)
    power_v2v: tuple = (23.0, 10.0, 15.0, 17.0)
    packet_bytes: int = 500
    packets_per_episode: int = 1500
    speed_min: float = 6.21
    speed_max: float = 13.07
    mobility: bool = True
    min_distance: float = 1.0
    v2v_enabled: bool = True

    @property
    def n_vehicles(self) -> int:
        return int(round(self.density * self.width * self.height / 1e6))

    @property
    def load_bits(self) -> float:
        return 8.0 * self.packet_bytes * self.packets_per_episode

    @property
    def n_subchannels(self) -> int:
        return self.n_terrestrial + self.n_satellite

    @property
    def p_max_dbm(self) -> float:
        return max(max(self.power_v2i), max(self.power_v2s), max(self.power_v2v))


@dataclass(frozen=True)
class LearnerConfig:
    variant: str = "FULL"
    gamma: float = 0.92
    lr_actor: float = 1e-4
    lr_critic: float = 0.009
    lr_estimator: float = 0.0  # 0 -> same as lr_critic
    entropy: float = 0.058
    batch_size: int = 64
    actor_hidden: int = 256
    critic_hidden: int = 224
    attn_dim: int = 64
    gru_hidden: int = 128
    heads: int = 4
    dropout: float = 0.2
    obs_window: int = 4
    sharing: float = 1.0
    lambda_est: float = 0.5
    value_coef: float = 0.5
    buffer_capacity: int = 20000
    sil_batches: int = 1
    prio_eps: float = 1e-6
    max_grad_norm: float = 5.0


@dataclass(frozen=True)
class RunSection:
    seeds: tuple = (0,)
    episodes: int = 600
    eval_episodes: int = 10
    final_window: int = 50
    out_dir: str = "runs"
    densities: tuple = (16.95, 25.42, 33.9, 42.37)
    sharing_levels: tuple = (1.0, 0.8, 0.6, 0.4)
    variants: tuple = ("FULL", "NF", "NO_SIL", "MAAC")
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    link: LinkBudgetConfig = field(default_factory=LinkBudgetConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    run: RunSection = field(default_factory=RunSection)

    def replace(self, **sections: dict[str, Any]) -> "RunConfig":
        """Return a copy with per-section field overrides, e.g. ``replace(run={"episodes": 5})``."""
        new = {}
        problems = []
        for name, overrides in sections.items():
            sec = getattr(self, name)
            known = {f.name for f in dataclasses.fields(sec)}
            bad = [k for k in overrides if k not in known]
            problems += [f"[{name}] unknown key '{k}'" for k in bad]
            new[name] = dataclasses.replace(sec, **{k: v for k, v in overrides.items() if k in known})
        if problems:
            raise ConfigError(problems)
        cfg = dataclasses.replace(self, **new)
        validate(cfg)
        return cfg


SECTIONS = {"scenario": ScenarioConfig, "link": LinkBudgetConfig, "learner": LearnerConfig,
            "run": RunSection}


def _parse_value(raw: str, default: Any, where: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            proto = default[0] if default else 0.0
            return tuple(_parse_value(x, proto, where) for x in items)
        return raw
    except ValueError:
        raise ConfigError([f"{where}: cannot parse '{raw}' as {type(default).__name__}"]) from None


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def validate(cfg: RunConfig) -> None:
    p = []
    s, l, r = cfg.scenario, cfg.learner, cfg.run
    if s.width <= 0 or s.height <= 0:
        p.append("[scenario] width/height must be > 0")
    if s.density <= 0:
        p.append("[scenario] density must be > 0")
    if s.v2v_enabled and s.n_vehicles < 2:
        p.append(f"[scenario] {s.n_vehicles} vehicle(s) with V2V enabled: no peer available")
    if s.n_vehicles < 1:
        p.append("[scenario] density * area gives no vehicles")
    if s.n_rsu < 1:
        p.append("[scenario] n_rsu must be >= 1")
    if s.horizon < 1 or s.dt <= 0:
        p.append("[scenario] horizon must be >= 1 and dt > 0")
    if s.penalty_w <= 0:
        p.append("[scenario] penalty_w must be > 0")
    if s.n_terrestrial < 1 or s.n_satellite < 1:
        p.append("[scenario] subchannel pools must be nonempty")
    if s.bw_terrestrial <= 0 or s.bw_satellite <= 0:
        p.append("[scenario] bandwidths must be > 0")
    if not (s.power_v2i and s.power_v2s and s.power_v2v):
        p.append("[scenario] power sets must be nonempty")
    if not 0 < s.speed_min <= s.speed_max:
        p.append("[scenario] need 0 < speed_min <= speed_max")
    if s.packet_bytes <= 0 or s.packets_per_episode <= 0:
        p.append("[scenario] load must be > 0")
    if s.neighbor_radius < 0 or s.max_neighbors < 1:
        p.append("[scenario] neighbor_radius >= 0 and max_neighbors >= 1 required")
    if l.variant not in VARIANTS:
        p.append(f"[learner] unknown variant '{l.variant}' (known: {', '.join(VARIANTS)})")
    if not 0 <= l.gamma <= 1:
        p.append("[learner] gamma must be in [0, 1]")
    if not 0 <= l.sharing <= 1:
        p.append("[learner] sharing must be in [0, 1]")
    if not 0 <= l.dropout < 1:
        p.append("[learner] dropout must be in [0, 1)")
    if l.attn_dim % l.heads:
        p.append("[learner] attn_dim must be divisible by heads")
    if l.obs_window < 1 or l.batch_size < 1:
        p.append("[learner] obs_window and batch_size must be >= 1")
    if l.prio_eps <= 0:
        p.append("[learner] prio_eps must be > 0")
    if l.buffer_capacity < l.batch_size:
        p.append("[learner] buffer_capacity must be >= batch_size")
    if not r.seeds:
        p.append("[run] at least one seed required")
    if r.episodes < 1 or r.final_window < 1 or r.eval_episodes < 0:
        p.append("[run] episodes/final_window must be >= 1, eval_episodes >= 0")
    bad_levels = [x for x in r.sharing_levels if not 0 <= x <= 1]
    if bad_levels:
        p.append(f"[run] sharing levels outside [0, 1]: {bad_levels}")
    bad_variants = [v for v in r.variants if v not in VARIANTS]
    if bad_variants:
        p.append(f"[run] unknown variants: {bad_variants}")
    if p:
        raise ConfigError(p)


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    problems: list[str] = []
    parts = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            problems.append(f"unknown section [{sec}]")
    for name, cls in SECTIONS.items():
        defaults = cls()
        known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(cls)}
        values = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in known:
                    problems.append(f"[{name}] unknown key '{key}'")
                    continue
                try:
                    values[key] = _parse_value(raw, known[key], f"[{name}] {key}")
                except ConfigError as e:
                    problems += e.problems
        try:
            parts[name] = cls(**values)
        except ValueError as e:
            problems.append(f"[{name}] {e}")
    if len(parts) == len(SECTIONS):
        # report value problems alongside unknown keys in one pass
        try:
            validate(RunConfig(**parts))
        except ConfigError as e:
            problems += e.problems
    if problems:
        raise ConfigError(problems)
    return RunConfig(**parts)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError([f"cannot read config {path}: {e}"]) from None
    return loads(text)


def dumps(cfg: RunConfig) -> str:
    out = io.StringIO()
    for name in SECTIONS:
        sec = getattr(cfg, name)
        out.write(f"[{name}]\n")
        for f in dataclasses.fields(sec):
            out.write(f"{f.name} = {_format_value(getattr(sec, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def to_dict(cfg: RunConfig) -> dict[str, dict[str, Any]]:
    return {name: {f.name: (list(v) if isinstance(v := getattr(getattr(cfg, name), f.name), tuple) else v)
                   for f in dataclasses.fields(getattr(cfg, name))}
            for name in SECTIONS}


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()[:16]
