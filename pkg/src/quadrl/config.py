"""Sectioned key-value run configuration (INI syntax)."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dynamics import QuadParams
from .env import EnvConfig, RewardParams
from .pid import PidGains
from .td3 import Td3Config


class ConfigError(ValueError):
    """Invalid configuration; message names the section and key."""


@dataclass(frozen=True)
class EvalConfig:
    period: float = 6.0
    radius: float = 1.0
    center: tuple[float, float, float] = (0.0, 0.0, 1.0)
    duration: float = 12.0
    takeoff_time: float = 0.0
    transient: float = 1.0
    setpoint_period: float = 0.02
    episodes: int = 1


@dataclass(frozen=True)
class IoConfig:
    output_dir: str = "runs/default"
    checkpoint_every: int = 25_000


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    physics: QuadParams = field(default_factory=QuadParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    td3: Td3Config = field(default_factory=Td3Config)
    pid: PidGains = field(default_factory=PidGains)
    eval: EvalConfig = field(default_factory=EvalConfig)
    io: IoConfig = field(default_factory=IoConfig)

    def with_overrides(self, **sections) -> RunConfig:
        """``cfg.with_overrides(td3={"total_steps": 1000}, seed=3)``."""
        updates = {}
        for name, value in sections.items():
            if isinstance(value, dict):
                updates[name] = dataclasses.replace(getattr(self, name), **value)
            else:
                updates[name] = value
        return dataclasses.replace(self, **updates)

    @property
    def td3_seeded(self) -> Td3Config:
        return dataclasses.replace(self.td3, seed=self.seed)


# Reward weights live in [env] with a prefix; the global seed lives in [run].
_SECTIONS = ("physics", "env", "td3", "pid", "eval", "io")
_REWARD_PREFIX = "reward_"


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from exc


def _section_items(cfg: RunConfig, section: str) -> dict:
    obj = getattr(cfg, section)
    items = {f.name: getattr(obj, f.name) for f in fields(obj)}
    if section == "td3":
        items.pop("seed")
    if section == "env":
        for f in fields(cfg.reward):
            items[_REWARD_PREFIX + f.name] = getattr(cfg.reward, f.name)
    return items


def to_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"seed": str(cfg.seed)}
    for section in _SECTIONS:
        parser[section] = {k: _format(v) for k, v in _section_items(cfg, section).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text on top of ``base`` (defaults); unknown sections or keys are errors."""
    base = base or RunConfig()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    updates: dict = {}
    for section in parser.sections():
        if section == "run":
            for key, raw in parser[section].items():
                if key != "seed":
                    raise ConfigError(f"[run] unknown key {key!r}")
                updates["seed"] = _parse(raw, base.seed, "[run] seed")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        defaults = _section_items(base, section)
        values, reward_values = {}, {}
        for key, raw in parser[section].items():
            if key not in defaults:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            value = _parse(raw, defaults[key], f"[{section}] {key}")
            if section == "env" and key.startswith(_REWARD_PREFIX):
                reward_values[key[len(_REWARD_PREFIX):]] = value
            else:
                values[key] = value
        try:
            updates[section] = dataclasses.replace(getattr(base, section), **values)
            if reward_values:
                updates["reward"] = dataclasses.replace(base.reward, **reward_values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
    return dataclasses.replace(base, **updates)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_ini(text)
