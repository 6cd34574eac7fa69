"""Normal plant-network traffic: web chatter, name lookups, MQTT telemetry, CE polling, admin logins."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..ingest import quantize_timestamp
from ..model import AptError, AuthLoginEvent, CeProtocol, LoginMethod, ScanType
from .packets import ACK, PSH_ACK, Emitter, Traffic, rng_for
from .topology import BASE_EPOCH, Topology

MQTT_PORT = 1883
VPN_PORT = 1194
HTTPS_PORT = 443

# (request, response) payload sizes of one polling cycle.
_POLL_PAYLOAD = {
    CeProtocol.MODBUS: ((12, 12), (13, 49)),
    CeProtocol.S7: ((31, 31), (27, 90)),
    CeProtocol.DNP3: ((18, 24), (30, 80)),
    CeProtocol.OTHER: ((16, 32), (16, 64)),
}


class FieldbusMode(str, enum.Enum):
    AGGRESSIVE = "AGGRESSIVE"
    NON_AGGRESSIVE = "NON_AGGRESSIVE"


def _default_poll_intervals() -> dict[CeProtocol, float]:
    return {CeProtocol.MODBUS: 2.0, CeProtocol.S7: 2.0, CeProtocol.DNP3: 5.0, CeProtocol.OTHER: 3.0}


@dataclass(frozen=True)
class TrafficProfile:
    """Rates and shapes of generated traffic. Intervals are mean gaps in seconds."""

    # Per public server; browsing spreads over many servers, each visited rarely.
    web_session_interval_s: float = 600.0
    web_session_duration_s: tuple[float, float] = (0.3, 4.0)
    public_servers_per_host: int = 6
    dns_interval_s: float = 30.0
    internal_web_interval_s: float = 90.0
    mqtt_interval_s: float = 10.0
    mqtt_jitter_s: float = 1.0
    vpn_keepalive_s: float = 10.0
    poll_interval_s: Mapping[CeProtocol, float] = field(default_factory=_default_poll_intervals)
    poll_jitter_s: float = 0.05
    admin_login_interval_s: float = 600.0
    beacon_period_s: float = 5.0
    beacon_jitter_s: float = 0.2
    scan_speed: ScanType = ScanType.NORMAL
    normal_probe_gap_s: float = 0.01
    slow_probe_gap_s: float = 15.0
    fieldbus_mode: FieldbusMode = FieldbusMode.AGGRESSIVE
    fieldbus_protocol: CeProtocol = CeProtocol.MODBUS

    def __post_init__(self):
        rates = {
            "web_session_interval_s": self.web_session_interval_s,
            "dns_interval_s": self.dns_interval_s,
            "internal_web_interval_s": self.internal_web_interval_s,
            "mqtt_interval_s": self.mqtt_interval_s,
            "vpn_keepalive_s": self.vpn_keepalive_s,
            "admin_login_interval_s": self.admin_login_interval_s,
            "beacon_period_s": self.beacon_period_s,
            "normal_probe_gap_s": self.normal_probe_gap_s,
            "slow_probe_gap_s": self.slow_probe_gap_s,
            **{f"poll_interval_s[{k.value}]": v for k, v in self.poll_interval_s.items()},
        }
        for name, v in rates.items():
            if not v > 0:
                raise AptError("BAD_PROFILE", f"{name} must be > 0")
        if self.public_servers_per_host < 1:
            raise AptError("BAD_PROFILE", "public_servers_per_host must be >= 1")
        lo, hi = self.web_session_duration_s
        if not 0 < lo <= hi:
            raise AptError("BAD_PROFILE", "web_session_duration_s must be 0 < lo <= hi")
        if not 0 <= self.beacon_jitter_s < self.beacon_period_s / 2:
            raise AptError("JITTER_TOO_LARGE", "beacon jitter must stay below half the period")
        if not 0 <= self.mqtt_jitter_s < self.mqtt_interval_s / 2:
            raise AptError("JITTER_TOO_LARGE", "mqtt jitter must stay below half the interval")
        if any(not 0 <= self.poll_jitter_s < v / 2 for v in self.poll_interval_s.values()):
            raise AptError("JITTER_TOO_LARGE", "poll jitter must stay below half the poll interval")

    def poll_interval(self, protocol: CeProtocol) -> float:
        return self.poll_interval_s.get(protocol, 3.0)


def arrivals(rng: np.random.Generator, t0: float, t1: float, mean_gap: float) -> list[float]:
    """Poisson arrival times in [t0, t1)."""
    out = []
    t = t0 + float(rng.exponential(mean_gap))
    while t < t1:
        out.append(t)
        t += float(rng.exponential(mean_gap))
    return out


def ticks(rng: np.random.Generator, t0: float, t1: float, period: float, jitter: float) -> list[float]:
    """period +- jitter ticks in [t0, t1), first tick at a random phase."""
    k = np.arange(t0 + float(rng.uniform(0, period)), t1, period)
    if jitter > 0:
        k = k + rng.uniform(-jitter, jitter, k.size)
    return [float(x) for x in k if t0 <= x < t1]


def login_session(
    em: Emitter,
    t: float,
    client: str,
    server: str,
    username: str,
    method: LoginMethod = LoginMethod.SSH,
    success: bool = True,
    duration: float = 30.0,
    port: Optional[int] = None,
) -> tuple[AuthLoginEvent, float]:
    """Remote-login connection with the auth-log record it produces. Returns (event, end time)."""
    if port is None:
        port = 3389 if method is LoginMethod.RDP else 22
    cport = em.port()
    rtt = em.rtt()
    t = em.handshake(t, client, cport, server, port, rtt)
    # Key exchange / session setup burst.
    for _ in range(int(em.rng.integers(4, 9))):
        t = em.request(t + em.rtt(0.002, 0.02), client, cport, server, port,
                       int(em.rng.integers(40, 700)), int(em.rng.integers(40, 1100)), rtt)
    t += float(em.rng.uniform(0.3, 1.2))
    event = AuthLoginEvent(quantize_timestamp(t), client, server, username, success, method)
    if success:
        end = t + duration
        for off in np.sort(em.rng.uniform(0.05, duration, max(3, int(duration / 2)))):
            t = max(t + 0.0005, event.timestamp + float(off))
            t = em.request(t, client, cport, server, port,
                           int(em.rng.integers(36, 200)), int(em.rng.integers(36, 1400)), rtt)
        t = max(t, end)
    t = em.fin_close(t + 0.01, client, cport, server, port, rtt)
    return event, t


def _web_chatter(em: Emitter, host: str, servers: Sequence[str], t0: float, t1: float, p: TrafficProfile):
    lo, hi = p.web_session_duration_s
    for server in servers:
        for t in arrivals(em.rng, t0, t1, p.web_session_interval_s):
            em.session(t, host, server, HTTPS_PORT, int(em.rng.integers(3, 14)), float(em.rng.uniform(lo, hi)))


def _dns(em: Emitter, host: str, resolver: str, t0: float, t1: float, p: TrafficProfile):
    for t in arrivals(em.rng, t0, t1, p.dns_interval_s):
        sport = em.port()
        em.udp(t, host, sport, resolver, 53, int(em.rng.integers(30, 50)))
        em.udp(t + em.rtt(0.002, 0.02), resolver, 53, host, sport, int(em.rng.integers(60, 200)))


def _internal_web(em: Emitter, host: str, server: str, t0: float, t1: float, p: TrafficProfile):
    for t in arrivals(em.rng, t0, t1, p.internal_web_interval_s):
        em.session(t, host, server, HTTPS_PORT, int(em.rng.integers(2, 8)), float(em.rng.uniform(0.2, 2.0)))


def _vpn_keepalive(em: Emitter, host: str, vpn: str, t0: float, t1: float, p: TrafficProfile):
    for t in ticks(em.rng, t0, t1, p.vpn_keepalive_s, p.vpn_keepalive_s * 0.05):
        em.udp(t, host, VPN_PORT, vpn, VPN_PORT, 40)
        em.udp(t + em.rtt(0.01, 0.04), vpn, VPN_PORT, host, VPN_PORT, 40)


def _mqtt(em: Emitter, gateway: str, broker: str, subscribers: Sequence[str], t0: float, t1: float,
          p: TrafficProfile, include_gateway: bool):
    gw_port = em.port()
    sub_ports = {s: em.port() for s in subscribers}
    for t in ticks(em.rng, t0, t1, p.mqtt_interval_s, p.mqtt_jitter_s):
        size = int(em.rng.integers(40, 120))
        if include_gateway:
            em.tcp(t, gateway, gw_port, broker, MQTT_PORT, PSH_ACK, size)
            em.tcp(t + em.rtt(), broker, MQTT_PORT, gateway, gw_port, ACK)
        for s, port in sub_ports.items():
            ts = t + em.rtt(0.002, 0.01)
            em.tcp(ts, broker, MQTT_PORT, s, port, PSH_ACK, size)
            em.tcp(ts + em.rtt(), s, port, broker, MQTT_PORT, ACK)


def ce_polling(em: Emitter, gateway: str, ce_ip: str, ce_port: int, protocol: CeProtocol,
               t0: float, t1: float, p: TrafficProfile, cport: Optional[int] = None) -> int:
    """Request/response polling over one long-lived connection (already open at ``t0``)."""
    cport = cport if cport is not None else em.port()
    (rq_lo, rq_hi), (rs_lo, rs_hi) = _POLL_PAYLOAD[protocol]
    for t in ticks(em.rng, t0, t1, p.poll_interval(protocol), p.poll_jitter_s):
        em.request(t, gateway, cport, ce_ip, ce_port,
                   int(em.rng.integers(rq_lo, rq_hi + 1)), int(em.rng.integers(rs_lo, rs_hi + 1)),
                   em.rtt(0.002, 0.006))
    return cport


def gen_benign(
    profile: TrafficProfile,
    topology: Topology,
    span_s: float,
    seed: int,
    start: float = BASE_EPOCH,
    hosts: Optional[Sequence[str]] = None,
    login_pairs: Optional[Sequence[tuple[str, str]]] = None,
) -> Traffic:
    """Benign traffic for ``hosts`` (default: every captured host) over ``[start, start + span_s)``.

    ``login_pairs`` lists (client, server) pairs making periodic successful admin
    logins; by default the first operator workstation logs into the gateway.
    """
    if not span_s > 0:
        raise AptError("NONPOSITIVE_DURATION", f"span_s={span_s}")
    topo = topology
    hosts = tuple(hosts) if hosts is not None else topo.capture_hosts()
    t0, t1 = start, start + span_s
    parts: list[Traffic] = []

    def emitter(*tags) -> Emitter:
        em = Emitter(rng_for(seed, "benign", *tags))
        parts.append(Traffic(em.packets))
        return em

    # Every host speaks within its first second so capture windows anchor near ``start``.
    for h in hosts:
        em = emitter("hello", h)
        sport = em.port()
        t = t0 + float(em.rng.uniform(0.0, 0.5))
        em.udp(t, h, sport, topo.resolver, 53, 40)
        em.udp(t + em.rtt(0.002, 0.02), topo.resolver, 53, h, sport, 120)

    for h in hosts:
        if h == topo.gateway:
            continue
        _web_chatter(emitter("web", h), h, topo.public_servers_for(h, profile.public_servers_per_host), t0, t1, profile)
        _dns(emitter("dns", h), h, topo.resolver, t0, t1, profile)
        if h == topo.maintenance and topo.web_api != h:
            _internal_web(emitter("intranet", h), h, topo.web_api, t0, t1, profile)
        if h in topo.operators:
            _vpn_keepalive(emitter("vpn", h), h, topo.vpn_server, t0, t1, profile)

    subscribers = [h for h in topo.operators if h in hosts]
    if topo.gateway in hosts or subscribers:
        _mqtt(emitter("mqtt"), topo.gateway, topo.broker, subscribers, t0, t1, profile, topo.gateway in hosts)

    if topo.gateway in hosts:
        for ce in topo.ce_endpoints:
            ce_polling(emitter("poll", ce.ip, ce.port), topo.gateway, ce.ip, ce.port, ce.protocol, t0, t1, profile)

    pairs = login_pairs if login_pairs is not None else [(topo.admin_host, topo.gateway)]
    logins: list[AuthLoginEvent] = []
    for client, server in pairs:
        if client not in hosts and server not in hosts:
            continue
        em = emitter("admin", client, server)
        for t in arrivals(em.rng, t0, t1 - 120.0, profile.admin_login_interval_s):
            ev, _ = login_session(em, t, client, server, "operator",
                                  duration=float(em.rng.uniform(20, 90)))
            logins.append(ev)
    out = Traffic.merge(parts)
    out.auth_events.extend(sorted(logins, key=lambda e: e.timestamp))
    return out
