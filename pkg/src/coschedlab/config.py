"""Configuration loading: shipped workload profiles and experiment configs.

Profiles live in ``data/profiles.yaml`` inside the package; experiment configs
are small user-supplied YAML files naming a profile, a demand shape, a
duration, and optional loop overrides.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace

import yaml

from .controller import AgentConfig, LoopConfig
from .errors import InputDomainError
from .simenv import BeProfile, DemandTrace, HpProfile, SimEnv

METHODS = ("rapid", "rl", "pid")


@dataclass(frozen=True)
class SimParams:
    tick_s: float = 0.01
    tau_s: float = 1.5
    meas_interval_s: float = 1.0


@dataclass(frozen=True)
class ProfileBundle:
    """One HP workload analog plus its default demand levels."""

    hp: HpProfile
    static_rps: float
    dynamic_rps: tuple


@dataclass(frozen=True)
class Profiles:
    hp: dict  # name -> ProfileBundle
    be: BeProfile
    sim: SimParams


def default_profiles_text() -> str:
    return (
        importlib.resources.files("coschedlab")
        .joinpath("data/profiles.yaml")
        .read_text()
    )


def load_profiles(path=None) -> Profiles:
    if path is None:
        raw = yaml.safe_load(default_profiles_text())
    else:
        with open(path) as f:
            raw = yaml.safe_load(f)
    sim = SimParams(**raw.get("sim", {}))
    be = BeProfile(**raw["be_profile"])
    hp = {}
    for name, p in raw["hp_profiles"].items():
        p = dict(p)
        static_rps = float(p.pop("static_rps"))
        dynamic_rps = tuple(float(v) for v in p.pop("dynamic_rps"))
        p["mbw_capacity_factor"] = tuple(p["mbw_capacity_factor"])
        p["measurement_noise"] = tuple(p["measurement_noise"])
        hp[name] = ProfileBundle(
            hp=HpProfile(name=name, **p),
            static_rps=static_rps,
            dynamic_rps=dynamic_rps,
        )
    return Profiles(hp=hp, be=be, sim=sim)


def build_trace(bundle: ProfileBundle, kind: str, **overrides) -> DemandTrace:
    if kind == "static":
        base = dict(kind="static", rps_min=bundle.static_rps, rps_max=bundle.static_rps)
    elif kind == "dynamic-cycle":
        lo, hi = bundle.dynamic_rps
        base = dict(kind="dynamic-cycle", rps_min=lo, rps_max=hi)
    else:
        raise InputDomainError(f"unknown demand kind {kind!r}")
    base.update(overrides)
    return DemandTrace(**base)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run (method and seed included)."""

    profile: str
    method: str
    seed: int
    duration_s: float
    demand_kind: str = "static"
    demand_overrides: dict = field(default_factory=dict)
    loop: LoopConfig = field(default_factory=LoopConfig)
    profiles_path: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputDomainError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.duration_s <= 0:
            raise InputDomainError("duration_s must be positive")


def load_experiment(path, method: str, seed: int) -> ExperimentConfig:
    """Build an ExperimentConfig from a YAML file plus CLI-supplied method/seed.

    Recognized keys: profile (required), duration_s (required), demand
    (mapping with kind + DemandTrace overrides), loop and agent (mappings of
    LoopConfig / AgentConfig field overrides), profiles_path.
    """
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    try:
        profile = raw["profile"]
        duration_s = float(raw["duration_s"])
    except KeyError as e:
        raise InputDomainError(f"experiment config missing key {e}") from None
    demand = dict(raw.get("demand", {}))
    kind = demand.pop("kind", "static")
    agent = AgentConfig(**raw.get("agent", {}))
    loop = LoopConfig(agent=agent, **raw.get("loop", {}))
    loop = replace(loop, method=method)
    return ExperimentConfig(
        profile=profile,
        method=method,
        seed=seed,
        duration_s=duration_s,
        demand_kind=kind,
        demand_overrides=demand,
        loop=loop,
        profiles_path=raw.get("profiles_path"),
    )


def build_env(cfg: ExperimentConfig, noise: bool = True) -> SimEnv:
    profiles = load_profiles(cfg.profiles_path)
    try:
        bundle = profiles.hp[cfg.profile]
    except KeyError:
        raise InputDomainError(
            f"unknown profile {cfg.profile!r}; available: {sorted(profiles.hp)}"
        ) from None
    trace = build_trace(bundle, cfg.demand_kind, **cfg.demand_overrides)
    return SimEnv(
        hp=bundle.hp,
        be=profiles.be,
        trace=trace,
        seed=cfg.seed,
        tick_s=profiles.sim.tick_s,
        tau_s=profiles.sim.tau_s,
        meas_interval_s=profiles.sim.meas_interval_s,
        noise=noise,
    )
