"""Three scripted intrusion campaigns over the benign background, with ground truth.

Times below are offsets from the bundle start. Captures are tiled into 60 s
windows anchored at each host's first packet (within the first second), so an
activity placed at ``k * 60 + 10`` lands well inside window ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..config import DEFAULT_SIGNATURE_MAP, SIG_MODBUS_ENUM, SIG_PORTSCAN, SIG_S7_ENUM
from ..model import (
    AptError,
    CeEndpoint,
    CeProtocol,
    HostInventory,
    IdsAlert,
    LoginMethod,
    PacketRecord,
    Protocol,
    ScanType,
    StageDetection,
    StageHint,
    StageKind,
)
from .attacks import gen_cnc, gen_fieldbus_scan, gen_scan, scan_ports
from .benign import FieldbusMode, TrafficProfile, ce_polling, gen_benign, login_session
from .bundle import ScenarioBundle
from .packets import RST_ACK, Emitter, Traffic, rng_for, tcp_packet
from .topology import BASE_EPOCH, DEFAULT_TOPOLOGY, Topology

CAMPAIGN_IDS = (1, 2, 3)

BEACON_AT = 120.0
SCAN_PASSES = (310.0, 370.0, 430.0, 490.0)
PORTS_PER_PASS = 20
LOGIN_AT = 640.0
FIELDBUS_PASSES = (730.0, 790.0, 850.0, 910.0)
# Two windows after the last scan pass, so vote smoothing cannot stretch the scan over it.
SPOOF_AT = 1040.0
SPANS = {1: 1200.0, 2: 900.0, 3: 1200.0}

_FIELDBUS_SIG = {CeProtocol.MODBUS: SIG_MODBUS_ENUM, CeProtocol.S7: SIG_S7_ENUM}


def _alert(ts: float, sig: int, src: str, dst: str) -> IdsAlert:
    return IdsAlert(ts, sig, src, dst, DEFAULT_SIGNATURE_MAP.get(sig, StageHint.NONE))


def _first(packets: list[PacketRecord], src: str) -> PacketRecord:
    return min((p for p in packets if p.src_ip == src and p.is_syn), key=lambda p: p.timestamp)


@dataclass
class _Script:
    topo: Topology
    seed: int
    profile: TrafficProfile
    start: float
    parts: list[Traffic] = field(default_factory=list)
    truth: list[StageDetection] = field(default_factory=list)
    narrative: list[dict] = field(default_factory=list)

    def at(self, offset: float) -> float:
        return self.start + offset

    def note(self, step: int, action: str, offset: Optional[float] = None, stage: Optional[StageKind] = None):
        self.narrative.append({
            "step": step,
            "action": action,
            "observable": stage is not None or offset is not None,
            "stage": stage.value if stage else None,
            "time": None if offset is None else self.at(offset),
        })

    def add(self, packets=(), auth=(), alerts=()):
        self.parts.append(Traffic(list(packets), list(auth), list(alerts)))

    def stage(self, kind: StageKind, t: float, src: str, dsts, **extras):
        self.truth.append(StageDetection(kind, True, t, src, tuple(dsts), extras, 1.0, {"timestamps": (t,)}))

    # Shared campaign phases ------------------------------------------------

    def beacon(self, step: int, protocol: Protocol, span: float):
        m, c2 = self.topo.maintenance, self.topo.cnc_server
        pk = gen_cnc(self.profile.beacon_period_s, self.profile.beacon_jitter_s, c2, m,
                     span - BEACON_AT, self.seed, start=self.at(BEACON_AT), protocol=protocol)
        self.add(pk)
        self.note(step, "implant beacons to external command server", BEACON_AT, StageKind.CNC)
        self.stage(StageKind.CNC, pk[0].timestamp, m, (c2,), cnc_server_ip=c2)

    def discovery(self, step: int):
        topo = self.topo
        m = topo.maintenance
        targets = sorted({topo.resolver, topo.broker, topo.gateway, *topo.internet_facing} - {m})
        listening = {(topo.gateway, 22), (topo.web_api, 443), (topo.broker, 1883), (topo.resolver, 53)}
        first = None
        for i, off in enumerate(SCAN_PASSES):
            ports = scan_ports(PORTS_PER_PASS, offset=i * PORTS_PER_PASS)
            pk = gen_scan(ScanType.NORMAL, m, targets, PORTS_PER_PASS, self.seed + i, start=self.at(off),
                          ports=ports, open_ports=listening, probe_gap_s=self.profile.normal_probe_gap_s)
            syn = _first(pk, m)
            self.add(pk, alerts=[_alert(syn.timestamp, SIG_PORTSCAN, m, syn.dst_ip)])
            first = first or syn
        self.note(step, "SYN scan of the IT and OT server subnets", SCAN_PASSES[0], StageKind.DISCOVERY)
        self.stage(StageKind.DISCOVERY, first.timestamp, m, targets,
                   scan_type=ScanType.NORMAL, list_target_host_IPs=tuple(targets))

    def login(self, step: int, target: str, user: str, method: LoginMethod, failures: int = 0, what: str = ""):
        em = Emitter(rng_for(self.seed, "login", target))
        auth = []
        t = self.at(LOGIN_AT - 15.0 * (failures + 1))
        for _ in range(failures):
            ev, _end = login_session(em, t, self.topo.maintenance, target, user, method, success=False)
            auth.append(ev)
            t += 15.0
        ev, _end = login_session(em, self.at(LOGIN_AT), self.topo.maintenance, target, user, method,
                                 duration=45.0)
        auth.append(ev)
        self.add(em.packets, auth=auth)
        self.note(step, what or f"{method.value} login into {target}", LOGIN_AT, StageKind.LATERAL_MOVEMENT)
        self.stage(StageKind.LATERAL_MOVEMENT, ev.timestamp, self.topo.maintenance, (target,),
                   username=user, method=method.value)

    def fieldbus(self, step: int, runs: list[tuple[float, CeEndpoint, FieldbusMode]]):
        gw = self.topo.gateway
        first, probed = None, set()
        for i, (off, ce, mode) in enumerate(runs):
            pk = gen_fieldbus_scan(ce.protocol, mode, gw, ce.ip, self.seed + i, start=self.at(off), port=ce.port)
            syn = _first(pk, gw)
            alerts = []
            if ce.protocol in _FIELDBUS_SIG:
                alerts.append(_alert(syn.timestamp + 0.5, _FIELDBUS_SIG[ce.protocol], gw, ce.ip))
            self.add(pk, alerts=alerts)
            probed.add(ce.ip)
            first = syn if first is None or syn.timestamp < first.timestamp else first
        self.note(step, "enumerate unit ids and device identity of the controllers", runs[0][0],
                  StageKind.FIELDBUS_SCAN)
        self.stage(StageKind.FIELDBUS_SCAN, first.timestamp, gw, sorted(probed))

    def extra_session(self, offset: float, ce: CeEndpoint, reads: int, writes: int = 0,
                      keep_polling_until: Optional[float] = None) -> float:
        """New gateway connection to ``ce``: reads, optional writes, then close or keep polling.

        Returns the time the connection became established."""
        em = Emitter(rng_for(self.seed, "spoof", ce.ip))
        gw = self.topo.gateway
        cport = em.port()
        rtt = em.rtt(0.002, 0.005)
        t = em.handshake(self.at(offset), gw, cport, ce.ip, ce.port, rtt)
        established = em.packets[-1].timestamp
        for _ in range(reads):
            t = em.request(t + float(em.rng.uniform(0.5, 3.0)), gw, cport, ce.ip, ce.port, 20, 60, rtt)
        for _ in range(writes):
            t = em.request(t + float(em.rng.uniform(0.05, 0.3)), gw, cport, ce.ip, ce.port,
                           int(em.rng.integers(400, 1200)), 12, rtt)
        if keep_polling_until is None:
            em.fin_close(t + 0.5, gw, cport, ce.ip, ce.port, rtt)
        else:
            ce_polling(em, gw, ce.ip, ce.port, ce.protocol, t + 1.0, self.at(keep_polling_until), self.profile, cport)
        self.add(em.packets)
        return established

    def traffic(self) -> Traffic:
        return Traffic.merge(self.parts)


def _campaign_1(s: _Script, span: float):
    topo = s.topo
    s.note(1, "spear-phishing mail with a malicious document reaches the maintenance engineer")
    s.note(2, "document macro drops and starts the implant")
    s.beacon(4, Protocol.UDP, span)
    s.note(5, "operator reads local files and shell history over the C&C channel")
    s.discovery(6)
    s.note(8, "attacker finds earlier SSH use towards the gateway")
    s.login(10, topo.gateway, "maint", LoginMethod.SSH, failures=2, what="password guessing, then SSH into the gateway")
    s.fieldbus(14, [
        (FIELDBUS_PASSES[0], topo.ce_for(CeProtocol.MODBUS), FieldbusMode.NON_AGGRESSIVE),
        (FIELDBUS_PASSES[1], topo.ce_for(CeProtocol.S7), FieldbusMode.AGGRESSIVE),
        (FIELDBUS_PASSES[2], topo.ce_for(CeProtocol.DNP3), FieldbusMode.AGGRESSIVE),
        (FIELDBUS_PASSES[3], topo.ce_for(CeProtocol.MODBUS), FieldbusMode.AGGRESSIVE),
    ])
    ce = topo.ce_for(CeProtocol.DNP3)
    t = s.extra_session(SPOOF_AT, ce, reads=6)
    s.note(16, "second session to a running controller dumps its configuration", SPOOF_AT, StageKind.CE_SPOOF)
    s.stage(StageKind.CE_SPOOF, t, topo.gateway, (ce.ip,), ce_port=ce.port, condition="concurrent")


def _campaign_2(s: _Script, span: float):
    topo = s.topo
    s.note(1, "malicious update installs the implant on the maintenance machine")
    s.beacon(2, Protocol.UDP, span)
    s.discovery(4)
    s.note(6, "credentials for the API server recovered from a config file")
    s.login(7, topo.web_api, "svc-api", LoginMethod.RDP, what="RDP into the external API server")
    em = Emitter(rng_for(s.seed, "api-call"))
    em.session(s.at(LOGIN_AT + 70.0), topo.web_api, topo.gateway, 1880, 4, 2.0)
    s.add(em.packets)
    s.note(8, "API server queries the gateway's flow editor", LOGIN_AT + 70.0)


def _campaign_3(s: _Script, span: float):
    topo = s.topo
    s.note(1, "watering-hole site serves an exploit to the maintenance engineer")
    s.beacon(4, Protocol.TCP, span)
    s.discovery(6)
    s.note(8, "implant waits for the engineer to open an SSH session")
    s.login(9, topo.gateway, "engineer", LoginMethod.SSH, what="hijack of the engineer's SSH session to the gateway")
    ce = topo.ce_for(CeProtocol.DNP3)
    s.fieldbus(12, [
        (FIELDBUS_PASSES[0], topo.ce_for(CeProtocol.MODBUS), FieldbusMode.NON_AGGRESSIVE),
        (FIELDBUS_PASSES[0] + 20.0, topo.ce_for(CeProtocol.S7), FieldbusMode.NON_AGGRESSIVE),
        (FIELDBUS_PASSES[1], ce, FieldbusMode.AGGRESSIVE),
        (FIELDBUS_PASSES[2], ce, FieldbusMode.AGGRESSIVE),
        (FIELDBUS_PASSES[3], topo.ce_for(CeProtocol.MODBUS), FieldbusMode.AGGRESSIVE),
    ])
    s.note(14, "legitimate polling process on the gateway is killed", FIELDBUS_PASSES[1] - 5.0)
    t = s.extra_session(SPOOF_AT, ce, reads=3, writes=10, keep_polling_until=span)
    s.note(17, "new session reads controller state and uploads a modified program", SPOOF_AT, StageKind.CE_SPOOF)
    s.stage(StageKind.CE_SPOOF, t, topo.gateway, (ce.ip,), ce_port=ce.port, condition="reconnect")


def _kill_polling(traffic: Traffic, gw: str, ce: CeEndpoint, at: float) -> None:
    """Drop the benign polling of ``ce`` after ``at`` and end its connection with a reset."""
    def polling(p: PacketRecord) -> bool:
        return p.protocol is Protocol.TCP and {(p.src_ip, p.src_port), (p.dst_ip, p.dst_port)} >= {(ce.ip, ce.port)}

    conn = next(p for p in traffic.packets if polling(p) and p.src_ip == gw)
    traffic.packets[:] = [p for p in traffic.packets if not (polling(p) and p.timestamp >= at)]
    traffic.packets.append(tcp_packet(at, gw, conn.src_port, ce.ip, ce.port, RST_ACK))


def gen_campaign(
    campaign_id: int,
    inventory: Optional[HostInventory] = None,
    seed: int = 0,
    profile: Optional[TrafficProfile] = None,
    start: float = BASE_EPOCH,
) -> ScenarioBundle:
    if campaign_id not in CAMPAIGN_IDS:
        raise AptError("UNKNOWN_CAMPAIGN_ID", f"campaign {campaign_id!r}; expected one of {CAMPAIGN_IDS}")
    topo = Topology.from_inventory(inventory) if inventory is not None else DEFAULT_TOPOLOGY
    profile = profile or TrafficProfile()
    span = SPANS[campaign_id]
    script = _Script(topo, seed, profile, start)
    {1: _campaign_1, 2: _campaign_2, 3: _campaign_3}[campaign_id](script, span)

    background = gen_benign(profile, topo, span, seed, start)
    if campaign_id == 3:
        _kill_polling(background, topo.gateway, topo.ce_for(CeProtocol.DNP3), script.at(FIELDBUS_PASSES[1] - 5.0))
    traffic = Traffic.merge([background, script.traffic()])
    return ScenarioBundle.from_traffic(traffic, topo.inventory(), topo.capture_hosts(), script.truth,
                                       sorted(script.narrative, key=lambda n: n["step"]), seed, campaign_id)


def gen_benign_bundle(
    inventory: Optional[HostInventory] = None,
    seed: int = 0,
    span_s: float = 1200.0,
    profile: Optional[TrafficProfile] = None,
    start: float = BASE_EPOCH,
) -> ScenarioBundle:
    topo = Topology.from_inventory(inventory) if inventory is not None else DEFAULT_TOPOLOGY
    traffic = gen_benign(profile or TrafficProfile(), topo, span_s, seed, start)
    return ScenarioBundle.from_traffic(traffic, topo.inventory(), topo.capture_hosts(), seed=seed)
