"""Packet-level building blocks: header-consistent records and canned TCP exchanges."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..ingest import quantize_timestamp
from ..model import AuthLoginEvent, IdsAlert, PacketRecord, Protocol, TcpFlags

IP_HDR, TCP_HDR, UDP_HDR = 20, 20, 8

SYN = TcpFlags.SYN
SYN_ACK = TcpFlags.SYN | TcpFlags.ACK
ACK = TcpFlags.ACK
PSH_ACK = TcpFlags.PSH | TcpFlags.ACK
FIN_ACK = TcpFlags.FIN | TcpFlags.ACK
RST = TcpFlags.RST
RST_ACK = TcpFlags.RST | TcpFlags.ACK

EPHEMERAL_LO, EPHEMERAL_HI = 32768, 60999


def tcp_packet(ts: float, src: str, sport: int, dst: str, dport: int, flags: TcpFlags, payload: int = 0) -> PacketRecord:
    return PacketRecord(quantize_timestamp(ts), src, dst, sport, dport, Protocol.TCP, flags,
                        payload, IP_HDR + TCP_HDR + payload)


def udp_packet(ts: float, src: str, sport: int, dst: str, dport: int, payload: int) -> PacketRecord:
    return PacketRecord(quantize_timestamp(ts), src, dst, sport, dport, Protocol.UDP, TcpFlags.NONE,
                        payload, IP_HDR + UDP_HDR + payload)


def rng_for(seed: int, *tags: int | str) -> np.random.Generator:
    """Independent stream per (seed, tags) so adding one traffic source never shifts another."""
    words = [int(seed) & 0xFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            words.extend(t.encode())
        else:
            words.append(int(t) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


@dataclass
class Traffic:
    """Packets plus the log lines they imply. Merging keeps everything in one time order."""

    packets: list[PacketRecord] = field(default_factory=list)
    auth_events: list[AuthLoginEvent] = field(default_factory=list)
    alerts: list[IdsAlert] = field(default_factory=list)

    def extend(self, other: "Traffic") -> "Traffic":
        self.packets.extend(other.packets)
        self.auth_events.extend(other.auth_events)
        self.alerts.extend(other.alerts)
        return self

    def sorted(self) -> "Traffic":
        # Stable sort: equal timestamps keep generation order, which is causal order.
        return Traffic(
            sorted(self.packets, key=lambda p: p.timestamp),
            sorted(self.auth_events, key=lambda e: e.timestamp),
            sorted(self.alerts, key=lambda a: a.timestamp),
        )

    @staticmethod
    def merge(parts: Iterable["Traffic"]) -> "Traffic":
        out = Traffic()
        for p in parts:
            out.extend(p)
        return out.sorted()


class Emitter:
    """Appends packets for one traffic source, owning its RNG and source-port allocator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.packets: list[PacketRecord] = []
        self._port = int(rng.integers(EPHEMERAL_LO, EPHEMERAL_HI))

    def port(self) -> int:
        self._port += 1 + int(self.rng.integers(0, 7))
        if self._port > EPHEMERAL_HI:
            self._port = EPHEMERAL_LO + (self._port - EPHEMERAL_HI)
        return self._port

    def rtt(self, lo: float = 0.0003, hi: float = 0.002) -> float:
        return float(self.rng.uniform(lo, hi))

    def tcp(self, ts, src, sport, dst, dport, flags, payload=0):
        self.packets.append(tcp_packet(ts, src, sport, dst, dport, flags, payload))

    def udp(self, ts, src, sport, dst, dport, payload):
        self.packets.append(udp_packet(ts, src, sport, dst, dport, payload))

    def handshake(self, t: float, client: str, cport: int, server: str, sport: int, rtt: float) -> float:
        self.tcp(t, client, cport, server, sport, SYN)
        self.tcp(t + rtt, server, sport, client, cport, SYN_ACK)
        t += rtt + 0.0001
        self.tcp(t, client, cport, server, sport, ACK)
        return t

    def request(self, t: float, client: str, cport: int, server: str, sport: int,
                req: int, resp: int, rtt: float, ack_back: bool = True) -> float:
        """Client PSH/ACK, server reply, optional client ACK. Returns the time of the last packet."""
        self.tcp(t, client, cport, server, sport, PSH_ACK, req)
        t += rtt
        if resp:
            self.tcp(t, server, sport, client, cport, PSH_ACK, resp)
            if ack_back:
                t += 0.0001
                self.tcp(t, client, cport, server, sport, ACK)
        return t

    def fin_close(self, t: float, a: str, aport: int, b: str, bport: int, rtt: float) -> float:
        self.tcp(t, a, aport, b, bport, FIN_ACK)
        self.tcp(t + rtt, b, bport, a, aport, FIN_ACK)
        t += rtt + 0.0001
        self.tcp(t, a, aport, b, bport, ACK)
        return t

    def session(self, t: float, client: str, server: str, dport: int, exchanges: int,
                duration: float, req=(60, 400), resp=(80, 1400), close: str = "FIN",
                cport: Optional[int] = None) -> tuple[float, int]:
        """Full TCP session: handshake, ``exchanges`` request/response pairs spread over ``duration``."""
        cport = cport if cport is not None else self.port()
        rtt = self.rtt()
        t = self.handshake(t, client, cport, server, dport, rtt)
        offsets = np.sort(self.rng.uniform(0.001, max(duration, 0.002), exchanges))
        base = t
        for off in offsets:
            t = max(t + 0.0002, base + float(off))
            t = self.request(t, client, cport, server, dport,
                             int(self.rng.integers(*req)), int(self.rng.integers(*resp)), rtt)
        t += 0.001
        if close == "FIN":
            t = self.fin_close(t, client, cport, server, dport, rtt)
        elif close == "RST":
            self.tcp(t, client, cport, server, dport, RST_ACK)
        return t, cport
