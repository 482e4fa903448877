"""TOML run configuration with strict key checking.

Every table maps onto a small dataclass; a key that no dataclass knows about
is an error rather than being silently dropped. Command-line flags are applied
on top with :func:`apply_overrides`.

Example::

    seed = 7
    adapter = "noisy"
    workers = 4

    [session]
    init_frames = 10
    per_iter_frames = 2
    t_max = 3

    [noise]
    answer_error = 0.1
    jitter_s = 2.0

    [remote.target]
    base_url = "http://localhost:8000/v1"
    model = "big-vlm"
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib

from .adapters.oracle import NoiseConfig
from .adapters.remote import RemoteConfig
from .errors import ConfigError
from .grpo import GrpoConfig
from .latency import CostModel, StageCoefficients

ADAPTERS = ("oracle", "noisy", "remote")
DEFAULT_STRATEGIES = ("10+2x3", "4+4x3", "13+1x3")


@dataclass(frozen=True)
class SessionSection:
    init_frames: int = 10
    per_iter_frames: int = 2
    t_max: int = 3
    dense_fps: float = 1.0


@dataclass(frozen=True)
class PopulationSection:
    n: int = 200
    mix: tuple[float, ...] = (0.324, 0.518, 0.158)
    reveal_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    dim: int = 64


@dataclass(frozen=True)
class BenchSection:
    strategies: tuple[str, ...] = DEFAULT_STRATEGIES
    t_max_sweep: tuple[int, ...] = ()


@dataclass(frozen=True)
class NiahSection:
    depths: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    lengths: tuple[int, ...] = (200, 500, 1000, 2000)
    width: int = 1
    dim: int = 256
    baseline_frames: int = 16


@dataclass(frozen=True)
class AppConfig:
    seed: int = 0
    adapter: str = "oracle"
    workers: int = 1
    out: str = "spectemp-out"
    session: SessionSection = field(default_factory=SessionSection)
    cost: CostModel = field(default_factory=CostModel)
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(0.1, 0.05, 2.0))
    remote_target: Optional[dict] = None
    remote_draft: Optional[dict] = None
    population: PopulationSection = field(default_factory=PopulationSection)
    bench: BenchSection = field(default_factory=BenchSection)
    niah: NiahSection = field(default_factory=NiahSection)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    validate_threshold: float = 0.5

    def __post_init__(self):
        if self.adapter not in ADAPTERS:
            raise ConfigError(f"adapter must be one of {ADAPTERS}, got {self.adapter!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def remote_configs(self) -> tuple[RemoteConfig, RemoteConfig]:
        if not self.remote_target:
            raise ConfigError("remote adapter needs a [remote.target] table or --remote-url")
        tgt = RemoteConfig.from_mapping(dict(self.remote_target))
        drf = RemoteConfig.from_mapping(dict(self.remote_draft or self.remote_target))
        return tgt, drf


def _build(cls, data: Any, where: str):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k) if _has_defaults(cls) else None
        kwargs[k] = tuple(v) if isinstance(v, list) or isinstance(default, tuple) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [{where}]: {e}") from e


def _has_defaults(cls) -> bool:
    return all(f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
               for f in fields(cls))


def _build_cost(data: Any) -> CostModel:
    if not isinstance(data, dict):
        raise ConfigError("[cost] must be a table")
    unknown = sorted(set(data) - {"target", "draft", "tokens_per_frame"})
    if unknown:
        raise ConfigError(f"unknown key(s) in [cost]: {', '.join(unknown)}")
    base = CostModel()
    tgt = base.target
    drf = base.draft
    if "target" in data:
        tgt = _build(StageCoefficients, {**dataclasses.asdict(tgt), **data["target"]}, "cost.target")
    if "draft" in data:
        drf = _build(StageCoefficients, {**dataclasses.asdict(drf), **data["draft"]}, "cost.draft")
    try:
        return CostModel(tgt, drf, int(data.get("tokens_per_frame", base.tokens_per_frame)))
    except ValueError as e:
        raise ConfigError(f"invalid [cost]: {e}") from e


_TOP = {"seed", "adapter", "workers", "out", "validate_threshold"}
_TABLES = {"session", "cost", "noise", "remote", "population", "bench", "niah", "grpo"}


def config_from_mapping(data: dict) -> AppConfig:
    unknown = sorted(set(data) - _TOP - _TABLES)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw: dict = {k: data[k] for k in _TOP if k in data}
    if "session" in data:
        kw["session"] = _build(SessionSection, data["session"], "session")
    if "cost" in data:
        kw["cost"] = _build_cost(data["cost"])
    if "noise" in data:
        kw["noise"] = _build(NoiseConfig, data["noise"], "noise")
    if "population" in data:
        kw["population"] = _build(PopulationSection, data["population"], "population")
    if "bench" in data:
        kw["bench"] = _build(BenchSection, data["bench"], "bench")
    if "niah" in data:
        kw["niah"] = _build(NiahSection, data["niah"], "niah")
    if "grpo" in data:
        kw["grpo"] = _build(GrpoConfig, data["grpo"], "grpo")
    if "remote" in data:
        remote = data["remote"]
        if not isinstance(remote, dict) or set(remote) - {"target", "draft"}:
            raise ConfigError("[remote] may only contain [remote.target] and [remote.draft]")
        for role in ("target", "draft"):
            if role in remote:
                RemoteConfig.from_mapping(dict(remote[role]))  # validate early
                kw[f"remote_{role}"] = dict(remote[role])
    try:
        return AppConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> AppConfig:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror or e}") from e
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{p}: {e}") from e
    return config_from_mapping(data)


def apply_overrides(cfg: AppConfig, **overrides) -> AppConfig:
    """Replace top-level fields and ``session`` fields whose override is not None."""
    top = {k: v for k, v in overrides.items() if v is not None and k in {f.name for f in fields(AppConfig)}}
    sess = {k: v for k, v in overrides.items()
            if v is not None and k in {f.name for f in fields(SessionSection)}}
    if sess:
        top["session"] = dataclasses.replace(cfg.session, **sess)
    try:
        return dataclasses.replace(cfg, **top)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
