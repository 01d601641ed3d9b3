"""Declarative run configuration.

A scenario is a flat key-value document with dotted section keys::

    model.name = mobile_hosts
    model.n_hosts = 9999
    sync.protocol = time_stepped
    run.lps = 3
    run.seed = 1

``#`` starts a comment.  Unknown keys are rejected with key-level
diagnostics; together with the seed, a scenario fully determines a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

PROTOCOLS = ("sequential", "time_stepped", "cmb", "time_warp")
MODELS = ("mobile_hosts", "interaction_groups", "idle")
ALLOCATIONS = ("random", "stripes", "explicit")
BACKENDS = ("in_process", "socket")
FT_MODES = ("crash", "byzantine")


class ScenarioError(Exception):
    pass


def _parse_bool(v: str) -> bool:
    lv = v.strip().lower()
    if lv in ("true", "1", "yes", "on"):
        return True
    if lv in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class ModelCfg:
    name: str = "mobile_hosts"
    n_hosts: int = 9999
    side: float = 10000.0
    radius: float = 250.0
    max_speed: float = 10.0
    move_fraction: float = 0.70
    broadcast_fraction: float = 0.20
    steps: int = 1000
    allocation: str = "random"
    groups: str = ""
    rosters: str = ""
    entities_per_lp: int = 1


@dataclass
class SyncCfg:
    protocol: str = "time_stepped"
    lookahead: int = 1
    checkpoint_every: int = 8
    gvt_every: int = 256


@dataclass
class GaiaCfg:
    enabled: bool = False
    window: int = 16
    eval_every: int = 16
    threshold: float = 0.6
    min_activity: int = 4
    balance_band: float = 0.25
    hysteresis: int = 2


@dataclass
class FtCfg:
    enabled: bool = False
    replicas: int = 1
    mode: str = "crash"
    barrier_timeout_s: float = 10.0
    rereplicate: bool = False


@dataclass
class TransportCfg:
    backend: str = "in_process"
    endpoints: str = ""
    latency: str = "none"
    slow_lp: str = ""
    crash: str = ""
    corrupt_lp: str = ""


@dataclass
class RunCfg:
    lps: int = 1
    nodes: int = 0          # 0: one node per container
    lp_to_node: str = ""
    seed: int = 1
    snapshots: str = ""
    keep_entity_hashes: bool = False
    out: str = ""


@dataclass
class ScenarioConfig:
    model: ModelCfg = field(default_factory=ModelCfg)
    sync: SyncCfg = field(default_factory=SyncCfg)
    gaia: GaiaCfg = field(default_factory=GaiaCfg)
    ft: FtCfg = field(default_factory=FtCfg)
    transport: TransportCfg = field(default_factory=TransportCfg)
    run: RunCfg = field(default_factory=RunCfg)

    # ------------------------------------------------------------------
    def n_nodes(self) -> int:
        return self.run.nodes if self.run.nodes > 0 else self.run.lps

    def lp_nodes(self) -> list[int]:
        """Node hosting each container (round-robin unless pinned)."""
        n = self.n_nodes()
        mapping = [i % n for i in range(self.run.lps)]
        if self.run.lp_to_node:
            for part in self.run.lp_to_node.split(","):
                lp_s, node_s = part.split(":")
                mapping[int(lp_s)] = int(node_s)
        bad = [m for m in mapping if m < 0 or m >= n]
        if bad:
            raise ScenarioError(f"run.lp_to_node references nodes out of range: {bad}")
        return mapping

    def snapshot_steps(self) -> list[int]:
        if not self.run.snapshots:
            return []
        return sorted({int(s) for s in self.run.snapshots.split(",")})

    def crash_schedule(self) -> list[tuple[int, int]]:
        """(node, step) fail-stop triggers."""
        out = []
        for part in self.transport.crash.split(","):
            part = part.strip()
            if part:
                node_s, step_s = part.split(":")
                out.append((int(node_s), int(step_s)))
        return out

    def slow_lp(self) -> Optional[tuple[int, float]]:
        if not self.transport.slow_lp:
            return None
        lp_s, f_s = self.transport.slow_lp.split(":")
        return int(lp_s), float(f_s)

    def latency_ms(self) -> tuple[str, float, float]:
        spec = self.transport.latency.strip() or "none"
        if spec == "none":
            return ("none", 0.0, 0.0)
        kind, _, rest = spec.partition(":")
        if kind == "fixed":
            return ("fixed", float(rest), float(rest))
        if kind == "uniform":
            a, b = rest.split(",")
            return ("uniform", float(a), float(b))
        raise ScenarioError(f"transport.latency: unknown form {spec!r}")

    def endpoints(self) -> dict[int, tuple[str, int]]:
        out: dict[int, tuple[str, int]] = {}
        for part in self.transport.endpoints.split(","):
            part = part.strip()
            if part:
                lp_s, host, port_s = part.split(":")
                out[int(lp_s)] = (host, int(port_s))
        return out

    def to_flat_dict(self) -> dict[str, object]:
        flat: dict[str, object] = {}
        for section, cfg in asdict(self).items():
            for key, value in cfg.items():
                flat[f"{section}.{key}"] = value
        return dict(sorted(flat.items()))

    def to_json(self) -> str:
        return json.dumps(self.to_flat_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "model": ModelCfg, "sync": SyncCfg, "gaia": GaiaCfg,
    "ft": FtCfg, "transport": TransportCfg, "run": RunCfg,
}

_COERCE: dict[type, Callable[[str], object]] = {
    int: int, float: float, str: lambda s: s, bool: _parse_bool,
}


def known_keys() -> list[str]:
    keys = []
    for section, cls in _SECTIONS.items():
        for name in cls.__dataclass_fields__:
            keys.append(f"{section}.{name}")
    return sorted(keys)


def apply_setting(cfg: ScenarioConfig, key: str, raw: object) -> None:
    section, _, name = key.partition(".")
    cls = _SECTIONS.get(section)
    if cls is None or name not in cls.__dataclass_fields__:
        raise ScenarioError(f"unknown scenario key {key!r}")
    target = getattr(cfg, section)
    ftype = cls.__dataclass_fields__[name].type
    pytype = {"int": int, "float": float, "str": str, "bool": bool}[ftype]
    try:
        value = raw if isinstance(raw, pytype) and not isinstance(raw, str) else \
            _COERCE[pytype](str(raw))
    except (ValueError, KeyError) as exc:
        raise ScenarioError(f"{key}: cannot parse {raw!r} as {pytype.__name__}") from exc
    setattr(target, name, value)


def parse_scenario_text(text: str, source: str = "<string>") -> ScenarioConfig:
    cfg = ScenarioConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ScenarioError(f"{source}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        apply_setting(cfg, key.strip(), raw.strip())
    return cfg


def load_scenario(path: Path | str, overrides: Optional[list[str]] = None) -> ScenarioConfig:
    path = Path(path)
    cfg = parse_scenario_text(path.read_text(), source=str(path))
    for ov in overrides or []:
        if "=" not in ov:
            raise ScenarioError(f"override {ov!r}: expected key=value")
        key, _, raw = ov.partition("=")
        apply_setting(cfg, key.strip(), raw.strip())
    validate_scenario(cfg)
    return cfg


def scenario_from_mapping(mapping: dict[str, object]) -> ScenarioConfig:
    cfg = ScenarioConfig()
    for key, value in mapping.items():
        apply_setting(cfg, key, value)
    validate_scenario(cfg)
    return cfg


def validate_scenario(cfg: ScenarioConfig) -> None:
    problems = []
    if cfg.model.name not in MODELS:
        problems.append(f"model.name: {cfg.model.name!r} not one of {MODELS}")
    if cfg.sync.protocol not in PROTOCOLS:
        problems.append(f"sync.protocol: {cfg.sync.protocol!r} not one of {PROTOCOLS}")
    if cfg.model.allocation not in ALLOCATIONS:
        problems.append(f"model.allocation: {cfg.model.allocation!r} not one of {ALLOCATIONS}")
    if cfg.transport.backend not in BACKENDS:
        problems.append(f"transport.backend: {cfg.transport.backend!r} not one of {BACKENDS}")
    if cfg.ft.mode not in FT_MODES:
        problems.append(f"ft.mode: {cfg.ft.mode!r} not one of {FT_MODES}")
    if cfg.run.lps < 1:
        problems.append("run.lps: need at least one container")
    if cfg.sync.lookahead < 1:
        problems.append("sync.lookahead: must be >= 1 on the integer timeline")
    if cfg.sync.checkpoint_every < 1 or cfg.sync.gvt_every < 1:
        problems.append("sync.checkpoint_every and sync.gvt_every must be >= 1")
    if cfg.gaia.window < 1 or cfg.gaia.eval_every < 1:
        problems.append("gaia.window and gaia.eval_every must be >= 1")
    if not (0.0 <= cfg.gaia.threshold <= 1.0):
        problems.append("gaia.threshold: must lie in [0, 1]")
    if cfg.gaia.balance_band < 0:
        problems.append("gaia.balance_band: must be >= 0")
    if cfg.ft.enabled and cfg.ft.replicas < 1:
        problems.append("ft.replicas: must be >= 1")
    if cfg.ft.enabled and cfg.sync.protocol not in ("sequential", "time_stepped"):
        problems.append("ft.enabled: replication is supported with time-stepped execution only")
    if cfg.model.name == "interaction_groups" and not cfg.model.groups:
        problems.append("model.groups: required for the interaction_groups model")
    if cfg.model.allocation == "explicit" and not cfg.model.rosters:
        problems.append("model.rosters: required with explicit allocation")
    try:
        cfg.lp_nodes()
        cfg.latency_ms()
        cfg.crash_schedule()
        cfg.slow_lp()
        cfg.endpoints()
    except (ScenarioError, ValueError) as exc:
        problems.append(str(exc))
    if cfg.transport.backend == "socket":
        eps = cfg.endpoints()
        missing = [lp for lp in range(cfg.run.lps) if lp not in eps]
        if missing:
            problems.append(f"transport.endpoints: missing endpoints for containers {missing}")
    if problems:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(problems))


def parse_rosters(text: str, n_lps: int) -> dict[int, list[int]]:
    """Parse explicit placement "0:1,2,3|1:5,6" into lp -> ids."""
    out: dict[int, list[int]] = {}
    for part in text.split("|"):
        part = part.strip()
        if not part:
            continue
        lp_s, _, ids_s = part.partition(":")
        lp = int(lp_s)
        if lp < 0 or lp >= n_lps:
            raise ScenarioError(f"model.rosters: container {lp} out of range")
        out[lp] = [int(tok) for tok in ids_s.split(",") if tok.strip()]
    return out
