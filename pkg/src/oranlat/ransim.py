"""Synthetic gNB/UE/iPerf stand-in producing KPM report streams.

Uplink latency follows a queueing-shaped law of utilization::

    latency = base_ms + load_gain_ms * u / (1 - u) + noise,   u <= 0.95

where ``u`` is the offered PRB load over the PRB budget. Offered load comes
from the traffic profile and the per-PRB capacity from the current SNR, which
performs an AR(1) walk around its mean. All randomness is drawn from numpy's
PCG64 generator seeded with ``ScenarioConfig.seed``; the draw order per step
is fixed (one uniform per bursty component, then latency noise, then SNR
innovation) so streams are reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .kpm import REPORT_PERIOD_MS, KpmRecord

UTILIZATION_CAP = 0.95
SNR_AR_COEF = 0.95
PRB_BANDWIDTH_MHZ = 0.18  # 12 subcarriers at 15 kHz
SHANNON_FACTOR = 0.75
MIN_SPECTRAL_EFF = 0.1


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class ScenarioExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class Constant:
    rate_mbps: float


@dataclass(frozen=True)
class Sinusoid:
    mean_mbps: float
    amplitude_mbps: float
    period_s: float


@dataclass(frozen=True)
class Bursty:
    base_mbps: float
    burst_mbps: float
    burst_prob: float
    # Mean burst length; burst_prob is the stationary fraction of time bursting.
    mean_burst_s: float = 2.0


Profile = Union[Constant, Sinusoid, Bursty]
_PROFILE_KINDS = {"constant": Constant, "sinusoid": Sinusoid, "bursty": Bursty}


@dataclass(frozen=True)
class Channel:
    mean_snr_db: float = 18.0
    snr_jitter_db: float = 2.0


@dataclass(frozen=True)
class LatencyParams:
    base_ms: float = 5.0
    load_gain_ms: float = 4.0
    noise_sd_ms: float = 0.5


@dataclass(frozen=True)
class ScenarioConfig:
    duration_s: int
    seed: int
    ue_count: int = 1
    prb_total_ul: int = 106
    # One profile, or several whose offered rates add up.
    traffic_profile: tuple[Profile, ...] = (Constant(20.0),)
    channel: Channel = field(default_factory=Channel)
    latency_params: LatencyParams = field(default_factory=LatencyParams)

    def __post_init__(self):
        if isinstance(self.traffic_profile, (Constant, Sinusoid, Bursty)):
            object.__setattr__(self, "traffic_profile", (self.traffic_profile,))
        else:
            object.__setattr__(self, "traffic_profile", tuple(self.traffic_profile))
        validate_config(self)

    @property
    def n_records(self) -> int:
        return self.duration_s * 1000 // REPORT_PERIOD_MS

    def to_dict(self) -> dict:
        profiles = []
        for p in self.traffic_profile:
            kind = next(k for k, cls in _PROFILE_KINDS.items() if isinstance(p, cls))
            profiles.append({"kind": kind, **p.__dict__})
        return {
            "duration_s": self.duration_s,
            "seed": self.seed,
            "ue_count": self.ue_count,
            "prb_total_ul": self.prb_total_ul,
            "traffic_profile": profiles if len(profiles) > 1 else profiles[0],
            "channel": dict(self.channel.__dict__),
            "latency_params": dict(self.latency_params.__dict__),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {"duration_s", "seed", "ue_count", "prb_total_ul", "traffic_profile",
                 "channel", "latency_params"}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown field")
        for key in ("duration_s", "seed"):
            if key not in d:
                raise ConfigError(key, "required")
        kwargs = {k: d[k] for k in ("duration_s", "seed", "ue_count", "prb_total_ul") if k in d}
        for key in kwargs:
            if isinstance(kwargs[key], bool) or not isinstance(kwargs[key], int):
                raise ConfigError(key, "must be an integer")
        if "traffic_profile" in d:
            raw = d["traffic_profile"]
            raw = raw if isinstance(raw, list) else [raw]
            kwargs["traffic_profile"] = tuple(_profile_from_dict(p) for p in raw)
        if "channel" in d:
            kwargs["channel"] = _build(Channel, d["channel"], "channel")
        if "latency_params" in d:
            kwargs["latency_params"] = _build(LatencyParams, d["latency_params"], "latency_params")
        return cls(**kwargs)


def _build(cls, d, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(prefix, "must be an object")
    names = set(cls.__dataclass_fields__)
    for key, value in d.items():
        if key not in names:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{prefix}.{key}", "must be a number")
    try:
        return cls(**{k: float(v) for k, v in d.items()})
    except TypeError as exc:
        raise ConfigError(prefix, str(exc)) from None


def _profile_from_dict(d) -> Profile:
    if not isinstance(d, dict) or d.get("kind") not in _PROFILE_KINDS:
        raise ConfigError("traffic_profile.kind", f"must be one of {sorted(_PROFILE_KINDS)}")
    body = {k: v for k, v in d.items() if k != "kind"}
    return _build(_PROFILE_KINDS[d["kind"]], body, f"traffic_profile.{d['kind']}")


def validate_config(cfg: ScenarioConfig) -> None:
    """Raise ``ConfigError`` naming the first offending field."""
    if cfg.duration_s < 1:
        raise ConfigError("duration_s", "must be >= 1")
    if not -(2**63) <= cfg.seed < 2**64:
        raise ConfigError("seed", "must fit in 64 bits")
    if cfg.ue_count < 1:
        raise ConfigError("ue_count", "must be >= 1")
    if cfg.prb_total_ul < 1:
        raise ConfigError("prb_total_ul", "must be >= 1")
    if not cfg.traffic_profile:
        raise ConfigError("traffic_profile", "at least one profile required")
    for p in cfg.traffic_profile:
        if isinstance(p, Constant):
            if p.rate_mbps < 0:
                raise ConfigError("traffic_profile.constant.rate_mbps", "must be >= 0")
        elif isinstance(p, Sinusoid):
            if p.mean_mbps < 0:
                raise ConfigError("traffic_profile.sinusoid.mean_mbps", "must be >= 0")
            if not 0 <= p.amplitude_mbps <= p.mean_mbps:
                raise ConfigError("traffic_profile.sinusoid.amplitude_mbps",
                                  "must be in [0, mean_mbps]")
            if p.period_s <= 0:
                raise ConfigError("traffic_profile.sinusoid.period_s", "must be > 0")
        elif isinstance(p, Bursty):
            if p.base_mbps < 0 or p.burst_mbps < 0:
                raise ConfigError("traffic_profile.bursty.base_mbps", "rates must be >= 0")
            if not 0 <= p.burst_prob <= 1:
                raise ConfigError("traffic_profile.bursty.burst_prob", "must be in [0, 1]")
            if p.mean_burst_s * 1000 < REPORT_PERIOD_MS:
                raise ConfigError("traffic_profile.bursty.mean_burst_s",
                                  "must be at least one report period")
        else:
            raise ConfigError("traffic_profile", f"unsupported profile {p!r}")
    if cfg.channel.snr_jitter_db < 0:
        raise ConfigError("channel.snr_jitter_db", "must be >= 0")
    lp = cfg.latency_params
    if lp.base_ms <= 0:
        raise ConfigError("latency_params.base_ms", "must be > 0")
    if lp.load_gain_ms < 0:
        raise ConfigError("latency_params.load_gain_ms", "must be >= 0")
    if lp.noise_sd_ms < 0:
        raise ConfigError("latency_params.noise_sd_ms", "must be >= 0")


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "top level must be an object")
    return ScenarioConfig.from_dict(raw)


# --- channel and load models ---------------------------------------------


def snr_to_cqi(snr_db: float) -> int:
    """Affine SNR to CQI map, rounded half-up and clamped to [0, 15]."""
    return int(min(15, max(0, math.floor((snr_db + 6.0) / 2.2 + 0.5))))


def per_prb_mbps(snr_db: float) -> float:
    """Uplink capacity of one PRB at the given SNR (derated Shannon)."""
    eff = SHANNON_FACTOR * math.log2(1.0 + 10.0 ** (snr_db / 10.0))
    return PRB_BANDWIDTH_MHZ * max(eff, MIN_SPECTRAL_EFF)


def utilization(offered_mbps: float, snr_db: float, prb_total: int) -> float:
    offered_prb = offered_mbps / per_prb_mbps(snr_db)
    return min(offered_prb / prb_total, UTILIZATION_CAP)


def latency_model(u: float, lp: LatencyParams, noise: float = 0.0) -> float:
    raw = lp.base_ms + lp.load_gain_ms * u / (1.0 - u) + noise
    return max(raw, lp.base_ms / 2.0)


def success_rate(u: float, cqi: int) -> float:
    return min(1.0, max(0.0, 1.0 - 0.1 * u - 0.03 * max(0, 7 - cqi)))


# --- stepping --------------------------------------------------------------


@dataclass(frozen=True)
class SimState:
    t_ms: int
    rng_state: dict
    current_snr_db: float
    in_burst: tuple[bool, ...] = ()


def initial_state(cfg: ScenarioConfig) -> SimState:
    n_bursty = sum(isinstance(p, Bursty) for p in cfg.traffic_profile)
    return SimState(
        t_ms=0,
        rng_state=np.random.PCG64(cfg.seed % 2**64).state,
        current_snr_db=cfg.channel.mean_snr_db,
        in_burst=(False,) * n_bursty,
    )


def _burst_transition(p: Bursty, in_burst: bool, draw: float) -> bool:
    if p.burst_prob >= 1.0:
        return True
    if p.burst_prob <= 0.0:
        return False
    p_exit = REPORT_PERIOD_MS / (p.mean_burst_s * 1000.0)
    p_enter = min(1.0, p.burst_prob * p_exit / (1.0 - p.burst_prob))
    return draw >= p_exit if in_burst else draw < p_enter


def step(cfg: ScenarioConfig, st: SimState) -> tuple[KpmRecord, SimState]:
    """Emit the record for ``st.t_ms`` and return the advanced state."""
    if st.t_ms >= cfg.duration_s * 1000:
        raise ScenarioExhausted(f"scenario ended at {cfg.duration_s} s")
    bitgen = np.random.PCG64()
    bitgen.state = st.rng_state
    rng = np.random.Generator(bitgen)

    t_s = st.t_ms / 1000.0
    offered = 0.0
    bursts = list(st.in_burst)
    k = 0
    for p in cfg.traffic_profile:
        if isinstance(p, Constant):
            offered += p.rate_mbps
        elif isinstance(p, Sinusoid):
            offered += p.mean_mbps + p.amplitude_mbps * math.sin(2.0 * math.pi * t_s / p.period_s)
        else:
            bursts[k] = _burst_transition(p, bursts[k], rng.random())
            offered += p.base_mbps + (p.burst_mbps if bursts[k] else 0.0)
            k += 1

    lp = cfg.latency_params
    snr = st.current_snr_db
    cqi = snr_to_cqi(snr)
    u = utilization(offered, snr, cfg.prb_total_ul)
    noise = lp.noise_sd_ms * rng.standard_normal()
    latency = latency_model(u, lp, noise)
    succ = success_rate(u, cqi)
    prb_used = min(cfg.prb_total_ul, int(math.floor(u * cfg.prb_total_ul + 0.5)))
    served = u * cfg.prb_total_ul * per_prb_mbps(snr)
    throughput = served * succ
    record = KpmRecord(
        ts_ms=st.t_ms,
        ue_count=cfg.ue_count,
        latency_ms=latency,
        prb_avail_ul=cfg.prb_total_ul - prb_used,
        prb_total_ul=cfg.prb_total_ul,
        ul_pkt_success_rate=succ,
        ul_sdu_volume=throughput * REPORT_PERIOD_MS / 8.0,  # Mbit/s over the period -> kB
        ul_throughput=throughput,
        air_if_delay_ms=0.5 * lp.base_ms * (1.0 + 4.0 * (1.0 - succ)),
        snr_db=snr,
        cqi=cqi,
    )

    ch = cfg.channel
    innovation = ch.snr_jitter_db * math.sqrt(1.0 - SNR_AR_COEF**2) * rng.standard_normal()
    next_snr = ch.mean_snr_db + SNR_AR_COEF * (snr - ch.mean_snr_db) + innovation
    return record, SimState(
        t_ms=st.t_ms + REPORT_PERIOD_MS,
        rng_state=bitgen.state,
        current_snr_db=next_snr,
        in_burst=tuple(bursts),
    )


def run_scenario(cfg: ScenarioConfig) -> Iterator[KpmRecord]:
    """Yield all ``duration_s * 10`` records of the scenario."""
    validate_config(cfg)
    st = initial_state(cfg)
    for _ in range(cfg.n_records):
        record, st = step(cfg, st)
        yield record
