"""Per-window TCP/UDP connection tracking and header-only scan features."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import AptError, PacketRecord, Protocol, TcpFlags, TraceWindow


class ConnState(str, enum.Enum):
    SYN_SENT = "SYN_SENT"
    SYN_RECEIVED = "SYN_RECEIVED"
    ESTABLISHED = "ESTABLISHED"
    CLOSED = "CLOSED"


@dataclass
class Connection:
    """One TCP connection attempt, oriented client -> server."""

    client_ip: str
    client_port: int
    server_ip: str
    server_port: int
    first_seen: float
    state: ConnState = ConnState.SYN_SENT
    handshake_done: bool = False
    # Connection was already up when the trace began (no SYN observed).
    pre_existing: bool = False
    established_at: Optional[float] = None
    closed_at: Optional[float] = None
    closed_by: Optional[str] = None  # "RST" or "FIN"

    @property
    def key(self) -> tuple[str, int, str, int]:
        return (self.client_ip, self.client_port, self.server_ip, self.server_port)

    @property
    def live(self) -> bool:
        return self.established_at is not None

    def live_interval(self) -> Optional[tuple[float, float]]:
        if self.established_at is None:
            return None
        end = self.closed_at if self.closed_at is not None else float("inf")
        return (self.established_at, end)


@dataclass
class ConnectionSummary:
    connections: list[Connection] = field(default_factory=list)
    half_open: int = 0
    syn_count: int = 0
    handshakes_per_dst: dict[str, int] = field(default_factory=dict)
    rst_count: int = 0
    fin_count: int = 0
    # Destination -> unique ports probed by SYN or UDP from the vantage host.
    probe_ports_per_dst: dict[str, set[int]] = field(default_factory=dict)

    @property
    def handshakes(self) -> int:
        return sum(self.handshakes_per_dst.values())


_SYN, _ACK, _RST, _FIN = int(TcpFlags.SYN), int(TcpFlags.ACK), int(TcpFlags.RST), int(TcpFlags.FIN)


def _orient_midstream(pkt: PacketRecord) -> tuple[str, int, str, int]:
    # No SYN seen: guess the server as the side with the lower port.
    if pkt.dst_port <= pkt.src_port:
        return (pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
    return (pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port)


def track_packets(packets: Iterable[PacketRecord], vantage_ip: Optional[str] = None) -> ConnectionSummary:
    """Run the connection tracker over time-ordered packets.

    A handshake counts when SYN, SYN-ACK and the client's ACK are all seen in
    order. Attempts that never get there are half-open. ``vantage_ip`` limits
    the SYN/UDP probe-port bookkeeping to packets that host sent.
    """
    summary = ConnectionSummary()
    open_conns: dict[tuple[str, int, str, int], Connection] = {}
    closed: set[tuple[str, int, str, int]] = set()

    def lookup(pkt: PacketRecord) -> tuple[Optional[Connection], bool]:
        fwd = (pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
        conn = open_conns.get(fwd)
        if conn is not None:
            return conn, True
        conn = open_conns.get((pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port))
        return conn, False

    def close(conn: Connection, ts: float, how: str):
        conn.state = ConnState.CLOSED
        conn.closed_at = ts
        conn.closed_by = how
        open_conns.pop(conn.key, None)
        closed.add(conn.key)

    for pkt in packets:
        from_vantage = vantage_ip is None or pkt.src_ip == vantage_ip
        if pkt.protocol is Protocol.UDP:
            if from_vantage and pkt.dst_port is not None:
                summary.probe_ports_per_dst.setdefault(pkt.dst_ip, set()).add(pkt.dst_port)
            continue
        if pkt.protocol is not Protocol.TCP:
            continue
        flags = int(pkt.tcp_flags)
        if flags & _RST:
            summary.rst_count += 1
        if flags & _FIN:
            summary.fin_count += 1

        if flags & _SYN and not flags & _ACK:
            summary.syn_count += 1
            if from_vantage:
                summary.probe_ports_per_dst.setdefault(pkt.dst_ip, set()).add(pkt.dst_port)
            summary.handshakes_per_dst.setdefault(pkt.dst_ip, 0)
            conn, forward = lookup(pkt)
            if conn is not None and forward and conn.state is ConnState.SYN_SENT:
                continue  # retransmission
            if conn is not None:
                close(conn, pkt.timestamp, "REUSE")
            conn = Connection(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port, pkt.timestamp)
            closed.discard(conn.key)
            open_conns[conn.key] = conn
            summary.connections.append(conn)
            continue

        conn, forward = lookup(pkt)
        if conn is None:
            if flags & (_RST | _FIN) or not flags & _ACK:
                continue
            fwd = (pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
            if fwd in closed or (pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port) in closed:
                continue  # tail of a connection we saw close
            key = _orient_midstream(pkt)
            conn = Connection(*key, first_seen=pkt.timestamp, state=ConnState.ESTABLISHED,
                              pre_existing=True, established_at=pkt.timestamp)
            open_conns[conn.key] = conn
            summary.connections.append(conn)
            continue

        if flags & _SYN and flags & _ACK and not forward and conn.state is ConnState.SYN_SENT:
            conn.state = ConnState.SYN_RECEIVED
        elif (forward and conn.state is ConnState.SYN_RECEIVED and flags & _ACK
              and not flags & (_SYN | _RST)):
            conn.state = ConnState.ESTABLISHED
            conn.handshake_done = True
            conn.established_at = pkt.timestamp
            summary.handshakes_per_dst[conn.server_ip] = summary.handshakes_per_dst.get(conn.server_ip, 0) + 1
        if flags & _RST:
            close(conn, pkt.timestamp, "RST")
        elif flags & _FIN:
            # The first FIN ends the live interval; the closing exchange that
            # follows finds no open entry and is ignored.
            close(conn, pkt.timestamp, "FIN")

    summary.half_open = sum(
        1 for c in summary.connections if not c.pre_existing and not c.handshake_done
    )
    return summary


def track_connections(window: TraceWindow) -> ConnectionSummary:
    return track_packets(window.packets, window.host_ip)


class FeatureStage(str, enum.Enum):
    DISCOVERY = "DISCOVERY"
    FIELDBUS = "FIELDBUS"


class Label(enum.IntEnum):
    NORMAL = 0
    SCANNING = 1


_TRIPLE = ("max", "min", "mean")

DISCOVERY_FEATURES: tuple[str, ...] = (
    "unique_syn_udp_dst_ips",
    *(f"syn_udp_dst_ports_per_ip_{s}" for s in _TRIPLE),
    "half_open_tcp_connections",
    "tcp_rst_packets",
    *(f"packet_length_{s}" for s in _TRIPLE),
    *(f"inter_arrival_{s}" for s in _TRIPLE),
)

FIELDBUS_FEATURES: tuple[str, ...] = (
    *(f"handshakes_per_dst_ip_{s}" for s in _TRIPLE),
    "tcp_rst_packets",
    "tcp_fin_packets",
    *(f"packet_length_{s}" for s in _TRIPLE),
    *(f"inter_arrival_{s}" for s in _TRIPLE),
)

FEATURE_NAMES = {FeatureStage.DISCOVERY: DISCOVERY_FEATURES, FeatureStage.FIELDBUS: FIELDBUS_FEATURES}


@dataclass(frozen=True)
class FeatureVector:
    stage: FeatureStage
    values: tuple[float, ...]
    label: Optional[Label] = None

    def __post_init__(self):
        want = len(FEATURE_NAMES[self.stage])
        if len(self.values) != want:
            raise AptError("BAD_FEATURE_WIDTH", f"{self.stage.value} needs {want} values, got {len(self.values)}")
        if any(v != v for v in self.values):
            raise AptError("NAN_FEATURE", "feature vector contains NaN")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def _stats(xs: Sequence[float]) -> tuple[float, float, float]:
    """(max, min, mean); an empty set imputes to zeros."""
    if len(xs) == 0:
        return (0.0, 0.0, 0.0)
    a = np.asarray(xs, dtype=float)
    return (float(a.max()), float(a.min()), float(a.mean()))


def _length_and_timing(window: TraceWindow) -> tuple[float, ...]:
    lengths = [p.total_len for p in window.packets]
    times = np.array([p.timestamp for p in window.packets], dtype=float)
    gaps = np.diff(times) if times.size > 1 else np.empty(0)
    return (*_stats(lengths), *_stats(gaps))


def discovery_features(window: TraceWindow, label: Optional[Label] = None) -> FeatureVector:
    s = track_connections(window)
    ports = [len(p) for p in s.probe_ports_per_dst.values()]
    values = (
        float(len(s.probe_ports_per_dst)),
        *_stats(ports),
        float(s.half_open),
        float(s.rst_count),
        *_length_and_timing(window),
    )
    return FeatureVector(FeatureStage.DISCOVERY, values, label)


def fieldbus_features(window: TraceWindow, label: Optional[Label] = None) -> FeatureVector:
    s = track_connections(window)
    values = (
        *_stats(list(s.handshakes_per_dst.values())),
        float(s.rst_count),
        float(s.fin_count),
        *_length_and_timing(window),
    )
    return FeatureVector(FeatureStage.FIELDBUS, values, label)


EXTRACTORS = {FeatureStage.DISCOVERY: discovery_features, FeatureStage.FIELDBUS: fieldbus_features}


def csv_header(stage: FeatureStage) -> list[str]:
    return [*FEATURE_NAMES[stage], "label"]


def write_feature_csv(path, stage: FeatureStage, vectors: Iterable[FeatureVector]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(stage))
        for v in vectors:
            if v.stage is not stage:
                raise AptError("STAGE_MISMATCH", f"{v.stage.value} vector in {stage.value} file")
            w.writerow([repr(float(x)) for x in v.values] + ["" if v.label is None else int(v.label)])


def read_feature_csv(path, stage: FeatureStage) -> list[FeatureVector]:
    width = len(csv_header(stage))
    out = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise AptError("IO_ERROR", f"{path}: {exc}") from exc
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            return out
        if len(header) != width:
            raise AptError("SCHEMA_ERROR", f"{path}: header has {len(header)} columns, expected {width}")
        for line_no, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != width:
                raise AptError("SCHEMA_ERROR", f"{path}:{line_no}: {len(row)} columns, expected {width}")
            try:
                values = tuple(float(x) for x in row[:-1])
                label = Label(int(row[-1])) if row[-1] != "" else None
            except ValueError as exc:
                raise AptError("SCHEMA_ERROR", f"{path}:{line_no}: {exc}") from exc
            out.append(FeatureVector(stage, values, label))
    return out
