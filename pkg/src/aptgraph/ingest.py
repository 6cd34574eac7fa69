"""Capture files, authentication logs and IDS alert files -> domain records.

Capture files use the classic libpcap layout (24-byte global header, 16-byte
record headers). Ethernet (with optional 802.1Q tag) and raw IPv4 link types
are understood; anything that is not IPv4 is counted and skipped.

Text formats (one record per line, ``#`` starts a comment)::

    auth log:   epoch_seconds,src_ip,dst_ip,username,ok|fail,ssh|rdp|other
    IDS alerts: epoch_seconds,sig_id,src_ip,dst_ip
"""

from __future__ import annotations

import ipaddress
import math
import socket
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

from .model import (
    TCP_FLAG_MASK,
    AptError,
    AuthLoginEvent,
    IdsAlert,
    LoginMethod,
    PacketRecord,
    Protocol,
    StageHint,
    TcpFlags,
    TraceWindow,
)

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228
SUPPORTED_LINK_TYPES = (LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_IPV4)

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
ETH_HEADER_LEN = 14
IP_HEADER_LEN = 20
TCP_HEADER_LEN = 20
UDP_HEADER_LEN = 8

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_VLAN = 0x8100
_IPPROTO = {Protocol.TCP: 6, Protocol.UDP: 17, Protocol.OTHER: 1}


class CaptureError(AptError):
    def __init__(self, code: str, message: str = "", offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(code, message)


@dataclass(frozen=True)
class CaptureMeta:
    path: str
    link_type: int
    packet_count: int
    time_span: Optional[tuple[float, float]]
    skipped: int = 0


def split_timestamp(ts: float) -> tuple[int, int]:
    """Seconds/microseconds as stored in a capture record header."""
    sec = int(ts)
    usec = int(round((ts - sec) * 1e6))
    if usec >= 1_000_000:
        sec, usec = sec + 1, usec - 1_000_000
    return sec, usec


def join_timestamp(sec: int, frac: int, digits: int = 6) -> float:
    # Decimal parse so capture files and text logs agree to the last bit.
    return float(f"{sec}.{frac:0{digits}d}")


def quantize_timestamp(ts: float) -> float:
    """Round to the microsecond grid a capture file can represent."""
    return join_timestamp(*split_timestamp(ts))


def read_capture(path: str | Path) -> tuple[list[PacketRecord], CaptureMeta]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CaptureError("IO_ERROR", str(exc)) from exc
    if len(data) < GLOBAL_HEADER_LEN:
        raise CaptureError("BAD_MAGIC", f"{path}: shorter than a capture header")

    magic_le = struct.unpack_from("<I", data, 0)[0]
    magic_be = struct.unpack_from(">I", data, 0)[0]
    if magic_le in (MAGIC_USEC, MAGIC_NSEC):
        endian, magic = "<", magic_le
    elif magic_be in (MAGIC_USEC, MAGIC_NSEC):
        endian, magic = ">", magic_be
    else:
        raise CaptureError("BAD_MAGIC", f"{path}: magic 0x{magic_le:08x}")
    frac_digits = 9 if magic == MAGIC_NSEC else 6

    link_type = struct.unpack_from(endian + "I", data, 20)[0] & 0x0FFFFFFF
    if link_type not in SUPPORTED_LINK_TYPES:
        raise CaptureError("UNSUPPORTED_LINK_TYPE", f"{path}: link type {link_type}")

    rec_fmt = endian + "IIII"
    packets: list[PacketRecord] = []
    skipped = 0
    n_records = 0
    first_ts = last_ts = None
    offset = GLOBAL_HEADER_LEN
    size = len(data)
    while offset < size:
        if offset + RECORD_HEADER_LEN > size:
            raise CaptureError("TRUNCATED_RECORD", f"{path}: partial record header", offset)
        ts_sec, ts_frac, incl_len, _orig_len = struct.unpack_from(rec_fmt, data, offset)
        body = offset + RECORD_HEADER_LEN
        if body + incl_len > size:
            raise CaptureError(
                "TRUNCATED_RECORD", f"{path}: record claims {incl_len} bytes, {size - body} remain", offset
            )
        ts = join_timestamp(ts_sec, ts_frac, frac_digits)
        n_records += 1
        first_ts = ts if first_ts is None else first_ts
        last_ts = ts
        rec = _decode_frame(data[body : body + incl_len], link_type, ts)
        if rec is None:
            skipped += 1
        else:
            packets.append(rec)
        offset = body + incl_len

    span = (first_ts, last_ts) if n_records else None
    return packets, CaptureMeta(str(path), link_type, n_records, span, skipped)


def _decode_frame(frame: bytes, link_type: int, ts: float) -> Optional[PacketRecord]:
    if link_type == LINKTYPE_ETHERNET:
        if len(frame) < ETH_HEADER_LEN:
            return None
        ethertype = struct.unpack_from("!H", frame, 12)[0]
        ip_off = ETH_HEADER_LEN
        if ethertype == _ETHERTYPE_VLAN:
            if len(frame) < ETH_HEADER_LEN + 4:
                return None
            ethertype = struct.unpack_from("!H", frame, 16)[0]
            ip_off += 4
        if ethertype != _ETHERTYPE_IPV4:
            return None
    else:
        ip_off = 0
    return _decode_ipv4(frame, ip_off, ts)


def _decode_ipv4(frame: bytes, off: int, ts: float) -> Optional[PacketRecord]:
    if len(frame) < off + IP_HEADER_LEN or frame[off] >> 4 != 4:
        return None
    ihl = (frame[off] & 0x0F) * 4
    total_len = struct.unpack_from("!H", frame, off + 2)[0]
    proto = frame[off + 9]
    src = socket.inet_ntoa(frame[off + 12 : off + 16])
    dst = socket.inet_ntoa(frame[off + 16 : off + 20])
    l4 = off + ihl
    if proto == 6:
        if len(frame) < l4 + TCP_HEADER_LEN:
            return None
        sport, dport = struct.unpack_from("!HH", frame, l4)
        doff = (frame[l4 + 12] >> 4) * 4
        flags = TcpFlags(frame[l4 + 13] & TCP_FLAG_MASK)
        payload = max(0, total_len - ihl - doff)
        return PacketRecord(ts, src, dst, sport, dport, Protocol.TCP, flags, payload, total_len)
    if proto == 17:
        if len(frame) < l4 + UDP_HEADER_LEN:
            return None
        sport, dport = struct.unpack_from("!HH", frame, l4)
        payload = max(0, total_len - ihl - UDP_HEADER_LEN)
        return PacketRecord(ts, src, dst, sport, dport, Protocol.UDP, TcpFlags.NONE, payload, total_len)
    payload = max(0, total_len - ihl)
    return PacketRecord(ts, src, dst, None, None, Protocol.OTHER, TcpFlags.NONE, payload, total_len)


def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def encode_packet(pkt: PacketRecord, ident: int = 0, payload: Optional[bytes] = None) -> bytes:
    """IPv4 datagram bytes for ``pkt`` (header-only fidelity: no options, zero checksums on L4)."""
    if pkt.protocol is Protocol.TCP:
        l4_len = TCP_HEADER_LEN
    elif pkt.protocol is Protocol.UDP:
        l4_len = UDP_HEADER_LEN
    else:
        l4_len = 0
    if pkt.total_len != IP_HEADER_LEN + l4_len + pkt.payload_len:
        raise ValueError(
            f"total_len {pkt.total_len} inconsistent with {pkt.protocol.value} header + {pkt.payload_len} payload"
        )
    if payload is None:
        payload = bytes(pkt.payload_len)
    elif len(payload) != pkt.payload_len:
        raise ValueError("payload length mismatch")

    ip = bytearray(
        struct.pack(
            "!BBHHHBBH4s4s",
            0x45,
            0,
            pkt.total_len,
            ident & 0xFFFF,
            0x4000,
            64,
            _IPPROTO[pkt.protocol],
            0,
            socket.inet_aton(pkt.src_ip),
            socket.inet_aton(pkt.dst_ip),
        )
    )
    struct.pack_into("!H", ip, 10, _ip_checksum(bytes(ip)))
    if pkt.protocol is Protocol.TCP:
        l4 = struct.pack(
            "!HHIIBBHHH", pkt.src_port, pkt.dst_port, 0, 0, 5 << 4, int(pkt.tcp_flags), 65535, 0, 0
        )
    elif pkt.protocol is Protocol.UDP:
        l4 = struct.pack("!HHHH", pkt.src_port, pkt.dst_port, UDP_HEADER_LEN + pkt.payload_len, 0)
    else:
        l4 = b""
    return bytes(ip) + l4 + payload


_ETH_PREFIX = bytes.fromhex("020000000002" "020000000001") + struct.pack("!H", _ETHERTYPE_IPV4)


def write_capture(
    path: str | Path,
    packets: Iterable[PacketRecord],
    link_type: int = LINKTYPE_ETHERNET,
    payload: Optional[Callable[[PacketRecord], bytes]] = None,
) -> int:
    """Write ``packets`` as a microsecond capture file. Returns the record count."""
    if link_type not in SUPPORTED_LINK_TYPES:
        raise CaptureError("UNSUPPORTED_LINK_TYPE", f"link type {link_type}")
    out = bytearray(struct.pack("<IHHiIII", MAGIC_USEC, 2, 4, 0, 0, 65535, link_type))
    n = 0
    for pkt in packets:
        datagram = encode_packet(pkt, n, payload(pkt) if payload else None)
        frame = _ETH_PREFIX + datagram if link_type == LINKTYPE_ETHERNET else datagram
        sec, usec = split_timestamp(pkt.timestamp)
        out += struct.pack("<IIII", sec, usec, len(frame), len(frame))
        out += frame
        n += 1
    Path(path).write_bytes(bytes(out))
    return n


def involves(pkt: PacketRecord, host_ip: str) -> bool:
    return pkt.src_ip == host_ip or pkt.dst_ip == host_ip


def packets_for_host(packets: Iterable[PacketRecord], host_ip: str) -> list[PacketRecord]:
    return [p for p in packets if p.src_ip == host_ip or p.dst_ip == host_ip]


def split_windows(packets: Sequence[PacketRecord], host_ip: str, duration_s: float) -> list[TraceWindow]:
    """Tile the capture span into fixed windows anchored at the first packet.

    Empty windows inside the span are kept so window indices stay aligned with time.
    """
    if not duration_s > 0:
        raise AptError("NONPOSITIVE_DURATION", f"duration_s={duration_s}")
    if not packets:
        return []
    ordered = sorted(packets, key=lambda p: p.timestamp)
    for p in ordered:
        if p.src_ip != host_ip and p.dst_ip != host_ip:
            raise AptError("FOREIGN_PACKET", f"{p.src_ip}->{p.dst_ip} does not involve {host_ip}")
    t0 = ordered[0].timestamp
    n_windows = int(math.floor((ordered[-1].timestamp - t0) / duration_s)) + 1
    buckets: list[list[PacketRecord]] = [[] for _ in range(n_windows)]
    for p in ordered:
        idx = min(int((p.timestamp - t0) // duration_s), n_windows - 1)
        buckets[idx].append(p)
    return [
        TraceWindow(host_ip, t0 + i * duration_s, duration_s, tuple(b)) for i, b in enumerate(buckets)
    ]


class Reject(NamedTuple):
    line_no: int
    text: str
    reason: str


class ParseResult(NamedTuple):
    records: list
    rejects: list[Reject]


def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text().splitlines()
    except OSError as exc:
        raise AptError("IO_ERROR", str(exc)) from exc


def _check_ip(text: str) -> str:
    return str(ipaddress.IPv4Address(text.strip()))


def _timestamp(text: str) -> float:
    ts = float(text)
    if not math.isfinite(ts) or ts < 0:
        raise ValueError(f"bad timestamp {text!r}")
    return ts


_SUCCESS = {"ok": True, "fail": False}
_METHODS = {"ssh": LoginMethod.SSH, "rdp": LoginMethod.RDP, "other": LoginMethod.OTHER}


def parse_auth_line(line: str) -> AuthLoginEvent:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 6:
        raise ValueError(f"expected 6 fields, got {len(parts)}")
    ts, src, dst, user, status, method = parts
    if status.lower() not in _SUCCESS:
        raise ValueError(f"status must be ok|fail, got {status!r}")
    if method.lower() not in _METHODS:
        raise ValueError(f"method must be ssh|rdp|other, got {method!r}")
    if not user:
        raise ValueError("empty username")
    return AuthLoginEvent(
        _timestamp(ts), _check_ip(src), _check_ip(dst), user, _SUCCESS[status.lower()], _METHODS[method.lower()]
    )


def parse_auth_log(path: str | Path) -> ParseResult:
    events, rejects = [], []
    for no, line in enumerate(_read_lines(path), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            events.append(parse_auth_line(line))
        except ValueError as exc:
            rejects.append(Reject(no, line, str(exc)))
    events.sort(key=lambda e: e.timestamp)
    return ParseResult(events, rejects)


def format_auth_event(ev: AuthLoginEvent) -> str:
    status = "ok" if ev.success else "fail"
    return f"{ev.timestamp:.6f},{ev.src_ip},{ev.dst_ip},{ev.username},{status},{ev.method.value.lower()}"


def write_auth_log(path: str | Path, events: Iterable[AuthLoginEvent]) -> None:
    lines = [format_auth_event(e) for e in sorted(events, key=lambda e: e.timestamp)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def parse_alert_line(line: str, sig_map: Mapping[int, StageHint]) -> IdsAlert:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 4:
        raise ValueError(f"expected 4 fields, got {len(parts)}")
    ts, sig, src, dst = parts
    sig_id = int(sig)
    return IdsAlert(_timestamp(ts), sig_id, _check_ip(src), _check_ip(dst), sig_map.get(sig_id, StageHint.NONE))


def parse_ids_alerts(path: str | Path, sig_map: Mapping[int, StageHint]) -> ParseResult:
    alerts, rejects = [], []
    for no, line in enumerate(_read_lines(path), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            alerts.append(parse_alert_line(line, sig_map))
        except ValueError as exc:
            rejects.append(Reject(no, line, str(exc)))
    alerts.sort(key=lambda a: a.timestamp)
    return ParseResult(alerts, rejects)


def write_ids_alerts(path: str | Path, alerts: Iterable[IdsAlert]) -> None:
    lines = [
        f"{a.timestamp:.6f},{a.signature_id},{a.src_ip},{a.dst_ip}"
        for a in sorted(alerts, key=lambda a: a.timestamp)
    ]
    Path(path).write_text("".join(line + "\n" for line in lines))
