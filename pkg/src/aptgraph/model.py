"""Shared domain types, engine configuration records and the invariant state machine.

Everything here is immutable once constructed so detectors can share it freely.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence


class AptError(Exception):
    """Base error. ``code`` is a stable machine-readable identifier."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)


class InventoryError(AptError):
    def __init__(self, violations: Sequence[tuple[str, str]]):
        self.violations = list(violations)
        code = self.violations[0][0] if self.violations else "INVALID_INVENTORY"
        text = "; ".join(f"{c} ({m})" for c, m in self.violations)
        super().__init__(code, text)


class Protocol(str, enum.Enum):
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"


class TcpFlags(enum.IntFlag):
    """TCP control bits, valued as in the TCP header byte."""

    NONE = 0
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10


TCP_FLAG_MASK = 0x1F


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: Optional[int]
    dst_port: Optional[int]
    protocol: Protocol
    tcp_flags: TcpFlags = TcpFlags.NONE
    payload_len: int = 0
    # IP total length: IP header + transport header + payload.
    total_len: int = 0

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if self.payload_len < 0 or self.total_len < self.payload_len:
            raise ValueError("need 0 <= payload_len <= total_len")
        if self.protocol is not Protocol.TCP and self.tcp_flags:
            raise ValueError("tcp_flags only allowed on TCP packets")

    def has(self, flags: TcpFlags) -> bool:
        return (self.tcp_flags & flags) == flags

    @property
    def is_syn(self) -> bool:
        """Connection-opening SYN (no ACK bit)."""
        return self.protocol is Protocol.TCP and self.has(TcpFlags.SYN) and not self.has(TcpFlags.ACK)

    @property
    def is_synack(self) -> bool:
        return self.protocol is Protocol.TCP and self.has(TcpFlags.SYN | TcpFlags.ACK)

    def peer_of(self, host_ip: str) -> str:
        return self.dst_ip if self.src_ip == host_ip else self.src_ip


@dataclass(frozen=True)
class TraceWindow:
    host_ip: str
    start_time: float
    duration_s: float
    packets: tuple[PacketRecord, ...] = ()

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration_s

    def __len__(self) -> int:
        return len(self.packets)


class LoginMethod(str, enum.Enum):
    SSH = "SSH"
    RDP = "RDP"
    OTHER = "OTHER"


@dataclass(frozen=True)
class AuthLoginEvent:
    timestamp: float
    src_ip: str
    dst_ip: str
    username: str
    success: bool
    method: LoginMethod


class StageHint(str, enum.Enum):
    DISCOVERY = "DISCOVERY"
    FIELDBUS_SCAN = "FIELDBUS_SCAN"
    NONE = "NONE"


@dataclass(frozen=True)
class IdsAlert:
    timestamp: float
    signature_id: int
    src_ip: str
    dst_ip: str
    stage_hint: StageHint = StageHint.NONE


class StageKind(str, enum.Enum):
    CNC = "CNC"
    DISCOVERY = "DISCOVERY"
    LATERAL_MOVEMENT = "LATERAL_MOVEMENT"
    FIELDBUS_SCAN = "FIELDBUS_SCAN"
    CE_SPOOF = "CE_SPOOF"


# Canonical kill-chain order of the invariant stages.
STAGE_ORDER: tuple[StageKind, ...] = tuple(StageKind)


class ScanType(str, enum.Enum):
    NORMAL = "NORMAL"
    SLOW = "SLOW"


@dataclass(frozen=True)
class StageDetection:
    kind: StageKind
    detected: bool
    time_det: float
    src_ip: str
    dst_ips: tuple[str, ...] = ()
    extras: Mapping[str, Any] = field(default_factory=dict)
    score: float = 0.0
    # Free-form supporting data; "timestamps" holds the packet/log times the verdict rests on.
    evidence: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.time_det < 0:
            raise ValueError("time_det must be >= 0")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")

    def to_dict(self) -> dict:
        extras = {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in self.extras.items()}
        return {
            "kind": self.kind.value,
            "detected": self.detected,
            "time_det": self.time_det,
            "src_ip": self.src_ip,
            "dst_ips": list(self.dst_ips),
            "extras": extras,
            "score": self.score,
            "evidence": _jsonable(self.evidence),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StageDetection":
        extras = dict(d.get("extras", {}))
        if "scan_type" in extras:
            extras["scan_type"] = ScanType(extras["scan_type"])
        if "list_target_host_IPs" in extras:
            extras["list_target_host_IPs"] = tuple(extras["list_target_host_IPs"])
        return cls(
            kind=StageKind(d["kind"]),
            detected=bool(d["detected"]),
            time_det=float(d["time_det"]),
            src_ip=d["src_ip"],
            dst_ips=tuple(d.get("dst_ips", ())),
            extras=extras,
            score=float(d.get("score", 0.0)),
            evidence=dict(d.get("evidence", {})),
        )


def _jsonable(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = [_jsonable(v) for v in obj]
        return sorted(items) if isinstance(obj, (set, frozenset)) else items
    return obj


class DataSource(str, enum.Enum):
    TRAFFIC = "TRAFFIC"
    IDS_ALERTS = "IDS_ALERTS"
    AUTH_LOGS = "AUTH_LOGS"


# Optimal source per stage; secondary sources carry the lower weights.
OPTIMAL_SOURCE: dict[StageKind, DataSource] = {
    StageKind.CNC: DataSource.TRAFFIC,
    StageKind.DISCOVERY: DataSource.TRAFFIC,
    StageKind.LATERAL_MOVEMENT: DataSource.AUTH_LOGS,
    StageKind.FIELDBUS_SCAN: DataSource.TRAFFIC,
    StageKind.CE_SPOOF: DataSource.TRAFFIC,
}

SECONDARY_SOURCES: dict[StageKind, tuple[DataSource, ...]] = {
    StageKind.CNC: (),
    StageKind.DISCOVERY: (DataSource.IDS_ALERTS,),
    StageKind.LATERAL_MOVEMENT: (DataSource.TRAFFIC,),
    StageKind.FIELDBUS_SCAN: (DataSource.IDS_ALERTS,),
    StageKind.CE_SPOOF: (),
}


def _default_secondary_weights() -> dict[tuple[StageKind, DataSource], float]:
    return {(stage, src): 0.25 for stage, srcs in SECONDARY_SOURCES.items() for src in srcs}


@dataclass(frozen=True)
class ScoreConfig:
    w_opt: float = 0.5
    secondary_weights: Mapping[tuple[StageKind, DataSource], float] = field(
        default_factory=_default_secondary_weights
    )
    tau: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.w_opt <= 1.0:
            raise AptError("BAD_WEIGHT", f"w_opt={self.w_opt} outside (0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise AptError("BAD_THRESHOLD", f"tau={self.tau} outside (0, 1]")
        for key, w in self.secondary_weights.items():
            if w <= 0:
                raise AptError("BAD_WEIGHT", f"secondary weight for {key} must be > 0")
            if not self.w_opt > w:
                raise AptError("WEIGHT_ORDER_VIOLATION", f"w_opt={self.w_opt} must exceed {key}={w}")

    def weight(self, stage: StageKind, source: DataSource) -> float:
        if source is OPTIMAL_SOURCE[stage]:
            return self.w_opt
        return self.secondary_weights.get((stage, source), 0.25)


class CeProtocol(str, enum.Enum):
    MODBUS = "MODBUS"
    S7 = "S7"
    DNP3 = "DNP3"
    OTHER = "OTHER"


DEFAULT_IA_PORTS: dict[CeProtocol, int] = {CeProtocol.MODBUS: 502, CeProtocol.S7: 102, CeProtocol.DNP3: 20000}

RFC1918 = ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16")


@dataclass(frozen=True)
class CeEndpoint:
    ip: str
    port: int
    protocol: CeProtocol = CeProtocol.MODBUS


@dataclass(frozen=True)
class HostInventory:
    internet_facing_hosts: tuple[str, ...]
    edge_gateway_ip: str
    ce_endpoints: tuple[CeEndpoint, ...] = ()
    vpn_server_ip: Optional[str] = None
    private_ranges: tuple[str, ...] = RFC1918
    # CE-side networks behind the gateway; empty means "the /24 of every CE endpoint".
    ce_subnets: tuple[str, ...] = ()

    def is_public(self, ip: str) -> bool:
        if ip == self.vpn_server_ip:
            return False
        return not self.is_private(ip)

    def is_private(self, ip: str) -> bool:
        key = (self.private_ranges, ip)
        hit = _MEMBER_CACHE.get(key)
        if hit is None:
            addr = ipaddress.ip_address(ip)
            hit = _MEMBER_CACHE[key] = any(addr in net for net in _parsed_networks(self.private_ranges))
        return hit

    def fieldbus_networks(self):
        if self.ce_subnets:
            return _parsed_networks(self.ce_subnets)
        return _parsed_networks(tuple(sorted({f"{e.ip}/24" for e in self.ce_endpoints})))

    def in_fieldbus_network(self, ip: str) -> bool:
        key = (self.ce_subnets, self.ce_endpoints, ip)
        hit = _MEMBER_CACHE.get(key)
        if hit is None:
            addr = ipaddress.ip_address(ip)
            hit = _MEMBER_CACHE[key] = any(addr in net for net in self.fieldbus_networks())
        return hit

    def to_dict(self) -> dict:
        return {
            "internet_facing_hosts": list(self.internet_facing_hosts),
            "edge_gateway_ip": self.edge_gateway_ip,
            "ce_endpoints": [
                {"ip": e.ip, "port": e.port, "protocol": e.protocol.value} for e in self.ce_endpoints
            ],
            "vpn_server_ip": self.vpn_server_ip,
            "private_ranges": list(self.private_ranges),
            "ce_subnets": list(self.ce_subnets),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "HostInventory":
        return cls(
            internet_facing_hosts=tuple(d.get("internet_facing_hosts", ())),
            edge_gateway_ip=d["edge_gateway_ip"],
            ce_endpoints=tuple(
                CeEndpoint(e["ip"], int(e["port"]), CeProtocol(e.get("protocol", "OTHER")))
                for e in d.get("ce_endpoints", ())
            ),
            vpn_server_ip=d.get("vpn_server_ip"),
            private_ranges=tuple(d.get("private_ranges", RFC1918)),
            ce_subnets=tuple(d.get("ce_subnets", ())),
        )


_NET_CACHE: dict[tuple[str, ...], list] = {}
_MEMBER_CACHE: dict[tuple, bool] = {}


def _parsed_networks(cidrs: tuple[str, ...]):
    nets = _NET_CACHE.get(cidrs)
    if nets is None:
        nets = [ipaddress.ip_network(c, strict=False) for c in cidrs]
        _NET_CACHE[cidrs] = nets
    return nets


def validate_inventory(inv: HostInventory) -> HostInventory:
    """Return ``inv`` unchanged, or raise InventoryError listing every violated rule."""
    violations: list[tuple[str, str]] = []
    if not inv.internet_facing_hosts:
        violations.append(("EMPTY_FACING_SET", "no internet-facing hosts listed"))
    if inv.edge_gateway_ip in inv.internet_facing_hosts:
        violations.append(("EDGE_IN_FACING_SET", f"{inv.edge_gateway_ip} is also internet-facing"))
    for cidr in (*inv.private_ranges, *inv.ce_subnets):
        try:
            ipaddress.ip_network(cidr, strict=False)
        except ValueError:
            violations.append(("BAD_CIDR", repr(cidr)))
    addrs = [*inv.internet_facing_hosts, inv.edge_gateway_ip, *(e.ip for e in inv.ce_endpoints)]
    if inv.vpn_server_ip:
        addrs.append(inv.vpn_server_ip)
    for a in addrs:
        try:
            ipaddress.IPv4Address(a)
        except ValueError:
            violations.append(("BAD_ADDRESS", repr(a)))
    for e in inv.ce_endpoints:
        if not 1 <= e.port <= 65535:
            violations.append(("BAD_PORT", f"{e.ip}:{e.port}"))
    if violations:
        raise InventoryError(violations)
    return inv


class IasmState(str, enum.Enum):
    READY_FOR_ATTACK = "READY_FOR_ATTACK"
    INFECTED_ENTRY_HOST = "INFECTED_ENTRY_HOST"
    ESTABLISH_FOOTHOLD = "ESTABLISH_FOOTHOLD"
    INFECTED_NEW_HOST = "INFECTED_NEW_HOST"
    INFECTED_EDGE_GATEWAY = "INFECTED_EDGE_GATEWAY"
    COLLECT_ICS_INTELLIGENCE = "COLLECT_ICS_INTELLIGENCE"
    EXECUTE_CE_COMMANDS = "EXECUTE_CE_COMMANDS"
    GOALS_ACHIEVED_OR_DETECTED = "GOALS_ACHIEVED_OR_DETECTED"


_S = IasmState
_K = StageKind

# (state, stage, target_is_gateway) -> next. A None gateway flag means "either".
# The entry compromise itself is not an invariant tactic; see iasm_enter().
IASM_TRANSITIONS: dict[tuple[IasmState, StageKind, Optional[bool]], IasmState] = {
    (_S.INFECTED_ENTRY_HOST, _K.CNC, None): _S.ESTABLISH_FOOTHOLD,
    (_S.ESTABLISH_FOOTHOLD, _K.CNC, None): _S.ESTABLISH_FOOTHOLD,
    (_S.ESTABLISH_FOOTHOLD, _K.DISCOVERY, None): _S.ESTABLISH_FOOTHOLD,
    (_S.ESTABLISH_FOOTHOLD, _K.LATERAL_MOVEMENT, False): _S.INFECTED_NEW_HOST,
    (_S.ESTABLISH_FOOTHOLD, _K.LATERAL_MOVEMENT, True): _S.INFECTED_EDGE_GATEWAY,
    (_S.INFECTED_NEW_HOST, _K.DISCOVERY, None): _S.INFECTED_NEW_HOST,
    (_S.INFECTED_NEW_HOST, _K.LATERAL_MOVEMENT, False): _S.INFECTED_NEW_HOST,
    (_S.INFECTED_NEW_HOST, _K.LATERAL_MOVEMENT, True): _S.INFECTED_EDGE_GATEWAY,
    (_S.INFECTED_EDGE_GATEWAY, _K.FIELDBUS_SCAN, None): _S.INFECTED_EDGE_GATEWAY,
    (_S.INFECTED_EDGE_GATEWAY, _K.CE_SPOOF, None): _S.COLLECT_ICS_INTELLIGENCE,
    (_S.COLLECT_ICS_INTELLIGENCE, _K.CE_SPOOF, None): _S.EXECUTE_CE_COMMANDS,
    (_S.EXECUTE_CE_COMMANDS, _K.CE_SPOOF, None): _S.EXECUTE_CE_COMMANDS,
}


def iasm_enter(state: IasmState = IasmState.READY_FOR_ATTACK) -> IasmState:
    """Initial compromise of an internet-facing host (not itself observable)."""
    if state is not IasmState.READY_FOR_ATTACK:
        raise AptError("ILLEGAL_TRANSITION", f"entry compromise from {state.value}")
    return IasmState.INFECTED_ENTRY_HOST


def iasm_next(state: IasmState, stage: StageKind, target_is_gateway: bool = False) -> IasmState:
    if state is IasmState.GOALS_ACHIEVED_OR_DETECTED:
        raise AptError("ILLEGAL_TRANSITION", "campaign already concluded")
    for gw in (bool(target_is_gateway), None):
        nxt = IASM_TRANSITIONS.get((state, stage, gw))
        if nxt is not None:
            return nxt
    raise AptError("ILLEGAL_TRANSITION", f"{state.value} --{stage.value}-->")


def iasm_conclude(state: IasmState) -> IasmState:
    """Goals achieved or campaign detected; reachable from any state."""
    return IasmState.GOALS_ACHIEVED_OR_DETECTED
