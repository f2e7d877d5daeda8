"""Sectioned key-value config files for the simulator.

Every key has a default; a file only needs the keys it changes.  Unknown
sections or keys are rejected so typos do not silently fall back to
defaults.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .cache import CacheConfig
from .dram import DramConfig
from .engine import EngineConfig, Latencies, PolicyConfig


class ConfigError(ValueError):
    pass


# section -> key -> default
DEFAULTS = {
    "gpu": {
        "num_cus": 64,
        "issue_width_per_cu": 1,
        "max_outstanding_per_cu": 32,
        "dispatch_interval": 1,
    },
    "caches": {
        "l1_size_bytes": 16 * 1024,
        "l1_associativity": 16,
        "l1_mshr_entries": 32,
        "l1_mshr_targets": 8,
        "l1_tag_ports": 2,
        "l2_size_bytes": 4 * 1024 * 1024,
        "l2_associativity": 16,
        "l2_mshr_entries": 128,
        "l2_mshr_targets": 16,
        "l2_mshr_banks": 8,
        "l2_tag_banks": 8,
    },
    "dram": {
        "channels": 16,
        "banks_per_channel": 16,
        "row_bytes": 2048,
        "t_row_hit": 10,
        "t_row_miss": 50,
        "t_bus": 4,
        "queue_depth": 32,
    },
    "engine": {
        "latency_l1": 50,
        "latency_l2": 125,
        "latency_mem": 225,
    },
    "opts": {
        "allocation_bypass": False,
        "cache_rinse": False,
        "pc_bypass": False,
        "predictor_entries": 1024,
        "predictor_counter_bits": 2,
        "predictor_threshold": 2,
    },
}


@dataclass
class SimConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    allocation_bypass: bool = False
    cache_rinse: bool = False
    pc_bypass: bool = False

    def opts_for(self, policy) -> PolicyConfig:
        return PolicyConfig(policy, self.allocation_bypass, self.cache_rinse, self.pc_bypass)


def defaults_text() -> str:
    cp = configparser.ConfigParser()
    for sec, keys in DEFAULTS.items():
        cp[sec] = {k: _render(v) for k, v in keys.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse(sec: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"[{sec}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> SimConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    values = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, raw in cp[sec].items():
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{sec}]")
            values[sec][key] = _parse(sec, key, raw, DEFAULTS[sec][key])
    return build(values)


def load_config(path) -> SimConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    return parse_config(text, str(path))


def build(values: dict) -> SimConfig:
    g, c, d, e, o = (values[s] for s in ("gpu", "caches", "dram", "engine", "opts"))
    try:
        l1 = CacheConfig.l1_default(size_bytes=c["l1_size_bytes"],
                                    associativity=c["l1_associativity"],
                                    mshr_entries=c["l1_mshr_entries"],
                                    mshr_targets_per_entry=c["l1_mshr_targets"])
        l2 = CacheConfig.l2_default(size_bytes=c["l2_size_bytes"],
                                    associativity=c["l2_associativity"],
                                    mshr_entries=c["l2_mshr_entries"],
                                    mshr_targets_per_entry=c["l2_mshr_targets"],
                                    mshr_banks=c["l2_mshr_banks"])
        dram = DramConfig(**d)
        eng = EngineConfig(
            num_cus=g["num_cus"], l1=l1, l2=l2, dram=dram,
            latencies=Latencies(e["latency_l1"], e["latency_l2"], e["latency_mem"]),
            issue_width_per_cu=g["issue_width_per_cu"],
            max_outstanding_per_cu=g["max_outstanding_per_cu"],
            dispatch_interval=g["dispatch_interval"],
            l1_tag_ports=c["l1_tag_ports"], l2_tag_banks=c["l2_tag_banks"],
            predictor_entries=o["predictor_entries"],
            predictor_counter_bits=o["predictor_counter_bits"],
            predictor_threshold=o["predictor_threshold"])
        eng.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return SimConfig(eng, o["allocation_bypass"], o["cache_rinse"], o["pc_bypass"])
