"""Flat ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .topology import (
    DEFAULT_CHUNK_BITS, DEFAULT_INTEREST_BITS, DEFAULT_LINK_BITS, DEFAULT_OBJECT_BITS, GB_BITS,
)

DEFAULT_POLICIES = ("NVIP", "VIP", "LFU", "LCE-UNIF", "LCE-LRU", "LCD-LRU", "LCE-BIAS", "POT-LCE-LRU")


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(x) for x in str(text).replace(",", " ").split())


def parse_seeds(text) -> tuple[int, ...]:
    """``"0,1,2"``, ``"0-4"`` or a mix."""
    seeds = []
    for part in str(text).replace(",", " ").split():
        if "-" in part.lstrip("-"):
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return tuple(seeds)


def _names(text):
    return tuple(x for x in str(text).replace(",", " ").split())


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    topology: str = "Abilene"
    objects: int = 3000
    object_bits: int = DEFAULT_OBJECT_BITS
    chunk_bits: int = DEFAULT_CHUNK_BITS
    interest_bits: int = DEFAULT_INTEREST_BITS
    link_bits: int = DEFAULT_LINK_BITS
    cache_bits: int | None = None  # None: per-topology default
    r_default: float = 1.0
    zipf: float = 0.75
    lambdas: tuple = (10.0,)
    seeds: tuple = tuple(range(10))
    horizon: int = 10_000
    policies: tuple = DEFAULT_POLICIES
    theta_mode: str = "ema"
    theta_value: float = 1.0
    theta_beta: float = 0.125
    theta_initial: float = 1.0
    forwarding: str | None = None
    caching: str | None = None
    window: int = 64
    score: str = "count"  # "count" | "inflow"
    truncate: bool = False
    pit_collapse: bool = True
    out: str = "results"
    trace: str | None = None  # replay arrivals from a trace file instead of sampling
    stability_rates: str | None = None  # "n:k:rate ..." (1-based); default: lambda at requesters
    stability_slack: float = 0.0
    topology_seed: int | None = None  # None: use the run seed
    base_dir: str = field(default=".", compare=False)

    def resolved_cache_bits(self) -> int:
        if self.cache_bits is not None:
            return self.cache_bits
        return 5 * GB_BITS if self.topology.lower() in ("service", "abilene") else 2 * GB_BITS


# config key -> (RunConfig field, parser)
KEYS = {
    "topology": ("topology", str),
    "topology.seed": ("topology_seed", int),
    "objects": ("objects", int),
    "object_bits": ("object_bits", int),
    "chunk_bits": ("chunk_bits", int),
    "interest_bits": ("interest_bits", int),
    "link_bits": ("link_bits", int),
    "cache_bits": ("cache_bits", int),
    "r_default": ("r_default", float),
    "zipf": ("zipf", float),
    "lambda": ("lambdas", _floats),
    "seeds": ("seeds", parse_seeds),
    "horizon": ("horizon", int),
    "policies": ("policies", _names),
    "theta.mode": ("theta_mode", str),
    "theta.value": ("theta_value", float),
    "theta.beta": ("theta_beta", float),
    "theta.initial": ("theta_initial", float),
    "policy.forwarding": ("forwarding", str),
    "policy.caching": ("caching", str),
    "mapping.window": ("window", int),
    "mapping.score": ("score", str),
    "truncate": ("truncate", _bool),
    "pit.collapse": ("pit_collapse", _bool),
    "out": ("out", str),
    "trace": ("trace", str),
    "stability.rates": ("stability_rates", str),
    "stability.slack": ("stability_slack", float),
}


def apply(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    changes = {}
    for key, raw in items.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        name, parse = KEYS[key]
        try:
            changes[name] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    cfg = replace(cfg, **changes)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.theta_mode not in ("constant", "ema"):
        raise ConfigError("theta.mode must be 'constant' or 'ema'")
    if cfg.theta_value < 1:
        raise ConfigError("theta.value must be >= 1")
    if not 0 < cfg.theta_beta <= 1:
        raise ConfigError("theta.beta must be in (0, 1]")
    if cfg.horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if cfg.objects < 1:
        raise ConfigError("objects must be >= 1")
    if any(x < 0 for x in cfg.lambdas):
        raise ConfigError("lambda values must be nonnegative")
    if cfg.score not in ("count", "inflow"):
        raise ConfigError("mapping.score must be 'count' or 'inflow'")
    if cfg.stability_slack < 0:
        raise ConfigError("stability.slack must be >= 0")
    if cfg.window < 1:
        raise ConfigError("mapping.window must be >= 1")


def parse_text(text: str) -> dict[str, str]:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        items[key.strip()] = val.strip()
    return items


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    items = parse_text(Path(path).read_text()) if path else {}
    items.update(overrides or {})
    base = str(Path(path).resolve().parent) if path else "."
    return apply(RunConfig(base_dir=base), items)


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, val = text.split("=", 1)
    return key.strip(), val.strip()


def resolve_path(cfg: RunConfig, name: str) -> Path:
    """``name`` relative to the config file's directory unless absolute."""
    path = Path(name)
    return path if path.is_absolute() else Path(cfg.base_dir) / path
