"""Attack footprints: beacons, host scans and fieldbus enumeration."""

from __future__ import annotations

from typing import Collection, Optional, Sequence

import numpy as np

from ..model import DEFAULT_IA_PORTS, AptError, CeProtocol, PacketRecord, Protocol, ScanType
from .benign import FieldbusMode
from .packets import PSH_ACK, RST, RST_ACK, SYN, SYN_ACK, Emitter, rng_for

# Ports a default SYN scan tries first, most common first.
COMMON_PORTS = (
    80, 23, 443, 21, 22, 25, 3389, 110, 445, 139, 143, 53, 135, 3306, 8080, 1723, 111, 995, 993, 5900,
    1025, 587, 8888, 199, 1720, 465, 548, 113, 81, 6001, 10000, 514, 5060, 179, 1026, 2000, 8443, 8000,
    32768, 554, 26, 1433, 49152, 2001, 515, 8008, 49154, 1027, 5666, 646, 5000, 5631, 631, 49153, 8081,
    2049, 88, 79, 5800, 106, 2121, 1110, 49155, 6000, 513, 990, 5357, 427, 49156, 543, 544, 5101, 144,
    7, 389, 1883, 502, 102, 20000, 8883,
)

MODBUS_SLAVE_IDS = 247


def scan_ports(n: int, offset: int = 0) -> tuple[int, ...]:
    """``n`` distinct ports: the common list first (rotated by ``offset``), then high ports."""
    base = COMMON_PORTS[offset % len(COMMON_PORTS):] + COMMON_PORTS[: offset % len(COMMON_PORTS)]
    extra = tuple(40000 + i for i in range(max(0, n - len(base))))
    return (base + extra)[:n]


def gen_cnc(
    period_s: float,
    jitter_s: float,
    server_ip: str,
    host_ip: str,
    span_s: float,
    seed: int,
    start: float = 0.0,
    protocol: Protocol = Protocol.UDP,
) -> list[PacketRecord]:
    """One beacon every ``period_s`` +- uniform ``jitter_s``, host -> server, inside [start, start + span_s).

    UDP beacons go to port 53 from fresh source ports; the TCP variant sends
    PSH/ACK segments on one already-open connection to port 443.
    """
    if not period_s > 0:
        raise AptError("BAD_PERIOD", f"period_s={period_s}")
    if not 0 <= jitter_s < period_s / 2:
        raise AptError("JITTER_TOO_LARGE", f"jitter {jitter_s} s must stay below half of period {period_s} s")
    if protocol not in (Protocol.UDP, Protocol.TCP):
        raise AptError("BAD_PROTOCOL", protocol.value)
    rng = rng_for(seed, "beacon")
    em = Emitter(rng)
    nominal = start + period_s * np.arange(int(np.ceil(span_s / period_s)) + 1)
    offsets = rng.uniform(-jitter_s, jitter_s, nominal.size) if jitter_s > 0 else np.zeros(nominal.size)
    sizes = rng.integers(40, 90, nominal.size)
    tcp_port = em.port()
    for t, size in zip(nominal + offsets, sizes):
        t = float(t)
        if not start <= t < start + span_s:
            continue
        if protocol is Protocol.UDP:
            em.udp(t, host_ip, em.port(), server_ip, 53, int(size))
        else:
            em.tcp(t, host_ip, tcp_port, server_ip, 443, PSH_ACK, int(size))
    return em.packets


def gen_scan(
    mode: ScanType,
    src: str,
    targets: Sequence[str],
    ports_per_target: int,
    seed: int,
    start: float = 0.0,
    ports: Optional[Sequence[int]] = None,
    open_ports: Optional[Collection[tuple[str, int]]] = None,
    open_fraction: float = 0.05,
    probe_gap_s: Optional[float] = None,
) -> list[PacketRecord]:
    """SYN probes to every (target, port) in shuffled order.

    Open ports answer SYN-ACK and get reset by the scanner; everything else stays
    silent, leaving half-open attempts. ``open_ports`` fixes which pairs answer;
    otherwise each pair is open with probability ``open_fraction``.
    """
    rng = rng_for(seed, "scan", src)
    em = Emitter(rng)
    plist = tuple(ports) if ports is not None else scan_ports(ports_per_target)
    pairs = [(t, p) for t in targets for p in plist]
    order = rng.permutation(len(pairs))
    if probe_gap_s is None:
        probe_gap_s = 0.01 if mode is ScanType.NORMAL else 15.0
    lo, hi = probe_gap_s * 0.5, probe_gap_s * 1.5
    if mode is ScanType.SLOW:
        lo, hi = probe_gap_s - 1.0, probe_gap_s + 1.0
    sport = em.port()
    t = start
    for i in order:
        target, port = pairs[i]
        em.tcp(t, src, sport, target, port, SYN)
        is_open = (target, port) in open_ports if open_ports is not None else rng.random() < open_fraction
        if is_open:
            rtt = em.rtt()
            em.tcp(t + rtt, target, port, src, sport, SYN_ACK)
            em.tcp(t + rtt + 0.0001, src, sport, target, port, RST)
        t += float(rng.uniform(lo, hi))
    return em.packets


def _cycle(em: Emitter, t: float, gw: str, ce: str, port: int, req: int, resp: int, rtt: float) -> float:
    """connect -> one request/response -> reset. Returns the time of the reset."""
    cport = em.port()
    t = em.handshake(t, gw, cport, ce, port, rtt)
    t = em.request(t + 0.0005, gw, cport, ce, port, req, resp, rtt)
    t += 0.0005
    em.tcp(t, gw, cport, ce, port, RST_ACK)
    return t


def _failed_connects(em: Emitter, t: float, gw: str, ce: str, port: int, n: int) -> float:
    for _ in range(n):
        cport = em.port()
        em.tcp(t, gw, cport, ce, port, SYN)
        em.tcp(t + em.rtt(0.002, 0.005), ce, port, gw, cport, RST_ACK)
        t += float(em.rng.uniform(0.2, 0.6))
    return t


def gen_fieldbus_scan(
    protocol: CeProtocol,
    mode: FieldbusMode,
    gw_ip: str,
    ce_ip: str,
    seed: int,
    start: float = 0.0,
    port: Optional[int] = None,
    failed_connects: int = 2,
    responding_unit: int = 1,
) -> list[PacketRecord]:
    """Gateway-side enumeration of one CE.

    Modbus and DNP3: a few refused connects, then one connect/request/reset cycle
    per unit id; AGGRESSIVE walks all 247 ids, NON_AGGRESSIVE stops at
    ``responding_unit``. S7: identity probes over successive rack/slot
    connections; AGGRESSIVE keeps probing slots after the first answer.
    """
    if port is None:
        port = DEFAULT_IA_PORTS.get(protocol, 502)
    rng = rng_for(seed, "fieldbus", protocol.value, mode.value, ce_ip)
    em = Emitter(rng)
    t = _failed_connects(em, start, gw_ip, ce_ip, port, failed_connects)

    def gap() -> float:
        return float(rng.uniform(0.02, 0.06))

    if protocol is CeProtocol.S7:
        # First slot tried rejects the session, the next one answers identity reads.
        cport = em.port()
        rtt = em.rtt(0.002, 0.005)
        t = em.handshake(t, gw_ip, cport, ce_ip, port, rtt)
        em.tcp(t + 0.0005, gw_ip, cport, ce_ip, port, PSH_ACK, 22)
        t += 0.0005 + rtt
        em.tcp(t, ce_ip, port, gw_ip, cport, RST_ACK)
        t += gap()
        cport = em.port()
        t = em.handshake(t, gw_ip, cport, ce_ip, port, rtt)
        for req, resp in ((22, 22), (25, 27), (33, 125), (33, 98)):
            t = em.request(t + 0.0005, gw_ip, cport, ce_ip, port, req, resp, rtt)
        t = em.fin_close(t + 0.001, gw_ip, cport, ce_ip, port, rtt)
        if mode is FieldbusMode.AGGRESSIVE:
            for _ in range(3):
                t += gap()
                t = _cycle(em, t, gw_ip, ce_ip, port, 22, 22, rtt)
        return em.packets

    req, found, missing = (12, 20, 9) if protocol is not CeProtocol.DNP3 else (20, 42, 15)
    rtt = em.rtt(0.002, 0.005)
    # Device-identification query before walking unit ids.
    t = _cycle(em, t + gap(), gw_ip, ce_ip, port, req, found, rtt)
    last = MODBUS_SLAVE_IDS if mode is FieldbusMode.AGGRESSIVE else responding_unit
    for unit in range(1, last + 1):
        resp = found if unit == responding_unit else missing
        t = _cycle(em, t + gap(), gw_ip, ce_ip, port, req, resp, rtt)
    return em.packets
