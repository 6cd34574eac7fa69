"""Engine configuration: detector knobs, inventory and their JSON file format.

File layout (every key optional except ``inventory``)::

    {
      "inventory": {"internet_facing_hosts": [...], "edge_gateway_ip": "...",
                    "ce_endpoints": [{"ip": "...", "port": 502, "protocol": "MODBUS"}],
                    "vpn_server_ip": null, "private_ranges": [...], "ce_subnets": [...]},
      "score": {"w_opt": 0.5, "tau": 0.5,
                "secondary_weights": [{"stage": "DISCOVERY", "source": "IDS_ALERTS", "weight": 0.25}]},
      "window_s": 60,
      "vote_n": 5,
      "normal_scan_rate_per_min": 30,
      "remote_access_ports": [22, 23, 3389, 5900],
      "periodicity": {"sampling_frequency": 1.0, "min_peak_fraction": 0.7, "min_peak_height": 0.5,
                      "gap_variance_threshold": 0.01, "min_packets": 4, "phase_offsets": [0.0, 0.5]},
      "ia_ports": {"MODBUS": 502, "S7": 102, "DNP3": 20000},
      "signature_map": {"1000001": "DISCOVERY", "1000101": "FIELDBUS_SCAN"}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .cnc import PeriodicityConfig
from .model import (
    DEFAULT_IA_PORTS,
    AptError,
    CeProtocol,
    DataSource,
    HostInventory,
    ScoreConfig,
    StageHint,
    StageKind,
    validate_inventory,
)

# Signature ids the scenario generator writes into its alert files.
SIG_PORTSCAN = 1000001
SIG_MODBUS_ENUM = 1000101
SIG_S7_ENUM = 1000102
SIG_POLICY = 1000900

DEFAULT_SIGNATURE_MAP: dict[int, StageHint] = {
    SIG_PORTSCAN: StageHint.DISCOVERY,
    SIG_MODBUS_ENUM: StageHint.FIELDBUS_SCAN,
    SIG_S7_ENUM: StageHint.FIELDBUS_SCAN,
}

REMOTE_ACCESS_PORTS = (22, 23, 3389, 5900)


@dataclass(frozen=True)
class DetectorConfig:
    score: ScoreConfig = field(default_factory=ScoreConfig)
    periodicity: PeriodicityConfig = field(default_factory=PeriodicityConfig)
    window_s: float = 60.0
    vote_n: int = 5
    # Probes per minute at or above which a scan counts as NORMAL speed.
    normal_scan_rate_per_min: float = 30.0
    remote_access_ports: tuple[int, ...] = REMOTE_ACCESS_PORTS
    ia_ports: Mapping[CeProtocol, int] = field(default_factory=lambda: dict(DEFAULT_IA_PORTS))
    signature_map: Mapping[int, StageHint] = field(default_factory=lambda: dict(DEFAULT_SIGNATURE_MAP))

    def __post_init__(self):
        if not self.window_s > 0:
            raise AptError("NONPOSITIVE_DURATION", "window_s must be > 0")
        if self.vote_n < 1 or self.vote_n % 2 == 0:
            raise AptError("BAD_VOTE_COUNT", "vote_n must be a positive odd number")
        for p in (*self.remote_access_ports, *self.ia_ports.values()):
            if not 1 <= int(p) <= 65535:
                raise AptError("BAD_PORT", f"port {p} out of range")


@dataclass(frozen=True)
class EngineConfig:
    inventory: HostInventory
    detector: DetectorConfig = field(default_factory=DetectorConfig)


def _score_from(d: Mapping[str, Any]) -> ScoreConfig:
    base = ScoreConfig()
    weights = dict(base.secondary_weights)
    for item in d.get("secondary_weights", ()):
        weights[(StageKind(item["stage"]), DataSource(item["source"]))] = float(item["weight"])
    return ScoreConfig(
        w_opt=float(d.get("w_opt", base.w_opt)),
        secondary_weights=weights,
        tau=float(d.get("tau", base.tau)),
    )


def detector_from_dict(d: Mapping[str, Any]) -> DetectorConfig:
    base = DetectorConfig()
    per = d.get("periodicity", {})
    if "phase_offsets" in per:
        per = {**per, "phase_offsets": tuple(float(x) for x in per["phase_offsets"])}
    ia = {CeProtocol(k): int(v) for k, v in d.get("ia_ports", {}).items()}
    sig = {int(k): StageHint(v) for k, v in d.get("signature_map", {}).items()}
    return DetectorConfig(
        score=_score_from(d.get("score", {})),
        periodicity=PeriodicityConfig(**per),
        window_s=float(d.get("window_s", base.window_s)),
        vote_n=int(d.get("vote_n", base.vote_n)),
        normal_scan_rate_per_min=float(d.get("normal_scan_rate_per_min", base.normal_scan_rate_per_min)),
        remote_access_ports=tuple(int(p) for p in d.get("remote_access_ports", base.remote_access_ports)),
        ia_ports={**base.ia_ports, **ia},
        signature_map=sig or dict(base.signature_map),
    )


def detector_to_dict(c: DetectorConfig) -> dict:
    p = c.periodicity
    return {
        "score": {
            "w_opt": c.score.w_opt,
            "tau": c.score.tau,
            "secondary_weights": [
                {"stage": s.value, "source": src.value, "weight": w}
                for (s, src), w in sorted(c.score.secondary_weights.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value))
            ],
        },
        "window_s": c.window_s,
        "vote_n": c.vote_n,
        "normal_scan_rate_per_min": c.normal_scan_rate_per_min,
        "remote_access_ports": list(c.remote_access_ports),
        "periodicity": {
            "sampling_frequency": p.sampling_frequency,
            "min_peak_fraction": p.min_peak_fraction,
            "min_peak_height": p.min_peak_height,
            "gap_variance_threshold": p.gap_variance_threshold,
            "min_packets": p.min_packets,
            "phase_offsets": list(p.phase_offsets),
        },
        "ia_ports": {k.value: v for k, v in sorted(c.ia_ports.items(), key=lambda kv: kv[0].value)},
        "signature_map": {str(k): v.value for k, v in sorted(c.signature_map.items())},
    }


def engine_from_dict(d: Mapping[str, Any]) -> EngineConfig:
    if "inventory" not in d:
        raise AptError("BAD_CONFIG", "config needs an 'inventory' section")
    inv = validate_inventory(HostInventory.from_dict(d["inventory"]))
    return EngineConfig(inv, detector_from_dict(d))


def engine_to_dict(c: EngineConfig) -> dict:
    return {"inventory": c.inventory.to_dict(), **detector_to_dict(c.detector)}


def load_config(path, inventory: Optional[HostInventory] = None) -> EngineConfig:
    """Read a JSON config. ``inventory`` fills in a missing inventory section."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise AptError("IO_ERROR", f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise AptError("BAD_CONFIG", f"{path}: {exc}") from exc
    if "inventory" not in raw and inventory is not None:
        raw = {**raw, "inventory": inventory.to_dict()}
    return engine_from_dict(raw)


def write_config(path, cfg: EngineConfig) -> None:
    with open(path, "w") as fh:
        json.dump(engine_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
