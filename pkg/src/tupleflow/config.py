"""TOML configuration: hardware profile, CPI table and runtime topology.

Scalar profile fields may sit at the top level or under ``[profile]``; CPI
overrides go in ``[cpi]`` or ``[profile.cpi]``; topology in ``[topology]``::

    clock_hz = 2.8e9
    bandwidth_per_core_bytes_per_s = 5.97e9
    lane_width_bits = 256
    cache_block_bytes = 262144
    worker_threads = 4

    [cpi]
    sqrt = 4.0

    [topology]
    nodes = 1
    exec_block_bytes = 1048576
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .analyzer import DEFAULT_CPI, HardwareProfile
from .runtime import TierTopology

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PROFILE_FIELDS = ("clock_hz", "bandwidth_per_core_bytes_per_s", "lane_width_bits", "cache_block_bytes", "worker_threads")
TOPOLOGY_FIELDS = {
    "nodes": "node_count",
    "node_count": "node_count",
    "executors_per_node": "executors_per_node",
    "gm_block_bytes": "gm_block_bytes",
    "exec_block_bytes": "exec_block_bytes",
    "prefetch": "prefetch",
}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    profile: HardwareProfile = field(default_factory=HardwareProfile)
    nodes: int = 1
    executors_per_node: int | None = None  # defaults to profile.worker_threads
    gm_block_bytes: int = TierTopology.gm_block_bytes
    exec_block_bytes: int = TierTopology.exec_block_bytes
    prefetch: int = TierTopology.prefetch
    backend: str = "numba"

    def topology(self) -> TierTopology:
        epn = self.executors_per_node or self.profile.worker_threads
        gm = max(self.gm_block_bytes, self.exec_block_bytes)
        return TierTopology(self.nodes, epn, gm, self.exec_block_bytes, self.prefetch)

    def with_overrides(self, threads: int | None = None, nodes: int | None = None,
                       block_bytes: int | None = None) -> "Config":
        out = replace(self)
        if threads is not None:
            out.profile = out.profile.with_(worker_threads=threads)
            out.executors_per_node = threads
        if nodes is not None:
            out.nodes = nodes
        if block_bytes is not None:
            out.exec_block_bytes = block_bytes
        return out


def parse_config(doc: dict) -> Config:
    prof = dict(doc.get("profile", {}))
    cpi = dict(prof.pop("cpi", {}))
    cpi.update(doc.get("cpi", {}))
    for k in PROFILE_FIELDS:
        if k in doc:
            prof[k] = doc[k]
    unknown = set(prof) - set(PROFILE_FIELDS)
    if unknown:
        raise ConfigError(f"unknown profile fields: {sorted(unknown)}")
    bad = set(cpi) - set(DEFAULT_CPI)
    if bad:
        raise ConfigError(f"unknown opcodes in cpi table: {sorted(bad)}")
    try:
        hw = HardwareProfile(**prof, cpi_table={**DEFAULT_CPI, **{k: float(v) for k, v in cpi.items()}})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg = Config(profile=hw)
    for k, v in doc.get("topology", {}).items():
        if k not in TOPOLOGY_FIELDS:
            raise ConfigError(f"unknown topology field {k!r}")
        setattr(cfg, "nodes" if TOPOLOGY_FIELDS[k] == "node_count" else TOPOLOGY_FIELDS[k], int(v))
    topo = doc.get("topology", {})
    if "gm_block_bytes" in topo and cfg.gm_block_bytes < cfg.exec_block_bytes:
        raise ConfigError("topology needs gm_block_bytes >= exec_block_bytes")
    if "backend" in doc.get("runtime", {}):
        cfg.backend = str(doc["runtime"]["backend"])
    known = {"profile", "cpi", "topology", "runtime", *PROFILE_FIELDS}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    try:
        cfg.topology()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)


__all__ = ["Config", "ConfigError", "load_config", "parse_config"]
