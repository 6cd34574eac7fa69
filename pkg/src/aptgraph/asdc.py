"""Stage correlation engine and campaign graph construction/export.

The engine walks the kill chain from every internet-facing host: periodic
C&C, then discovery, then logins into discovered hosts, and at the edge
gateway the fieldbus scan and CE spoofing checks. Each accepted stage must
correlate with an already accepted one, so a false positive can only ever
extend a chain that was already open.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .config import DetectorConfig
from .ml.trained import TrainedModel
from .model import (
    STAGE_ORDER,
    AptError,
    AuthLoginEvent,
    HostInventory,
    IasmState,
    IdsAlert,
    StageDetection,
    StageKind,
    TraceWindow,
    iasm_enter,
    iasm_next,
)
from .stages import (
    check_ce_comm_stage,
    check_cnc_stage,
    check_discovery_stage,
    check_fieldbus_scan_stage,
    check_lateral_movement_stage,
)


class DetStatus(str, enum.Enum):
    APT_DET_START = "APT_DET_START"
    APT_DET_STOP = "APT_DET_STOP"


class NodeRole(str, enum.Enum):
    ENTRY_HOST = "entry-host"
    INTERMEDIATE = "intermediate"
    EDGE_GATEWAY = "edge-gateway"
    CE = "CE"
    CNC_SERVER = "cnc-server"
    HOST = "host"


# Higher wins when one address plays several roles.
_ROLE_RANK = {
    NodeRole.HOST: 0,
    NodeRole.INTERMEDIATE: 1,
    NodeRole.CNC_SERVER: 2,
    NodeRole.CE: 3,
    NodeRole.ENTRY_HOST: 4,
    NodeRole.EDGE_GATEWAY: 5,
}


def correlate_pair(a: StageDetection, b: StageDetection) -> bool:
    """True when ``b`` can follow ``a``: same source host, or ``a`` moved the attacker onto ``b``'s source; and ``a`` came first."""
    same_host = a.src_ip == b.src_ip
    moved = a.kind is StageKind.LATERAL_MOVEMENT and b.src_ip in a.dst_ips
    return (same_host or moved) and a.time_det < b.time_det


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    # Earliest detection time per stage kind; the key set is the edge's stage set.
    stage_times: Mapping[StageKind, float]

    @property
    def stages(self) -> frozenset[StageKind]:
        return frozenset(self.stage_times)

    @property
    def first_time(self) -> float:
        return min(self.stage_times.values())


@dataclass(frozen=True)
class CampaignGraph:
    nodes: Mapping[str, NodeRole] = field(default_factory=dict)
    edges: Mapping[tuple[str, str], Edge] = field(default_factory=dict)
    det_status: DetStatus = DetStatus.APT_DET_START

    def edge_sets(self) -> dict[tuple[str, str], frozenset[StageKind]]:
        return {k: e.stages for k, e in self.edges.items()}

    def same_shape(self, other: "CampaignGraph") -> bool:
        """Equal node sets, edge sets and per-edge stage sets (timestamps ignored)."""
        return set(self.nodes) == set(other.nodes) and self.edge_sets() == other.edge_sets()

    def is_empty(self) -> bool:
        return not self.nodes and not self.edges


def _stage_edges(s: StageDetection) -> list[tuple[str, str]]:
    if s.kind is StageKind.CNC:
        server = s.extras.get("cnc_server_ip") or (s.dst_ips[0] if s.dst_ips else None)
        return [(s.src_ip, server)] if server else []
    return [(s.src_ip, d) for d in s.dst_ips]


def _roles_for(s: StageDetection) -> list[tuple[str, NodeRole]]:
    out: list[tuple[str, NodeRole]] = []
    if s.kind is StageKind.CNC:
        out.append((s.src_ip, NodeRole.ENTRY_HOST))
        out += [(d, NodeRole.CNC_SERVER) for _, d in _stage_edges(s)]
    elif s.kind is StageKind.DISCOVERY:
        out.append((s.src_ip, NodeRole.HOST))
        out += [(d, NodeRole.HOST) for d in s.dst_ips]
    elif s.kind is StageKind.LATERAL_MOVEMENT:
        out.append((s.src_ip, NodeRole.HOST))
        out += [(d, NodeRole.INTERMEDIATE) for d in s.dst_ips]
    else:
        out.append((s.src_ip, NodeRole.EDGE_GATEWAY))
        out += [(d, NodeRole.CE) for d in s.dst_ips]
    return out


def build_graph(stages: Sequence[StageDetection], det_status: Optional[DetStatus] = None) -> CampaignGraph:
    """One node per address, one edge per host pair with the stage kinds merged.

    Every stage other than C&C must correlate with some earlier stage in the list.
    """
    accepted: list[StageDetection] = []
    for s in stages:
        if not s.detected:
            continue
        if s.kind is not StageKind.CNC and not any(correlate_pair(p, s) for p in accepted):
            raise AptError("INCONSISTENT_CHAIN", f"{s.kind.value} at {s.src_ip} t={s.time_det} has no correlated predecessor")
        accepted.append(s)

    roles: dict[str, NodeRole] = {}
    times: dict[tuple[str, str], dict[StageKind, float]] = {}
    for s in accepted:
        for ip, role in _roles_for(s):
            if ip not in roles or _ROLE_RANK[role] > _ROLE_RANK[roles[ip]]:
                roles[ip] = role
        for key in _stage_edges(s):
            slot = times.setdefault(key, {})
            slot[s.kind] = min(slot.get(s.kind, s.time_det), s.time_det)
    edges = {k: Edge(k[0], k[1], dict(v)) for k, v in times.items()}
    if det_status is None:
        done = any(s.kind is StageKind.CE_SPOOF for s in accepted)
        det_status = DetStatus.APT_DET_STOP if done else DetStatus.APT_DET_START
    return CampaignGraph(roles, edges, det_status)


def temporally_consistent(g: CampaignGraph) -> bool:
    """No edge leaves a node before the attacker first reached it.

    Every edge's stage times must be >= the earliest time over the edges
    entering its source. Merged chains from several entry hosts can reach one
    node at different times; only the first arrival bounds what follows.
    """
    for e in g.edges.values():
        # A two-node back-and-forth has no ordering to check.
        incoming = [inc.first_time for inc in g.edges.values() if inc.dst == e.src and inc.src != e.dst]
        if incoming and e.first_time < min(incoming):
            return False
    return True


def _stage_sort_key(kind: StageKind) -> int:
    return STAGE_ORDER.index(kind)


def export_graph(g: CampaignGraph, fmt: str = "dot") -> str:
    fmt = fmt.lower()
    if fmt == "dot":
        return _to_dot(g)
    if fmt == "structured":
        return _to_structured(g)
    raise AptError("BAD_FORMAT", f"unknown export format {fmt!r}")


def _to_dot(g: CampaignGraph) -> str:
    lines = ["digraph campaign {", f'  label="{g.det_status.value}";', "  rankdir=LR;"]
    for ip in sorted(g.nodes):
        lines.append(f'  "{ip}" [label="{ip}\\n{g.nodes[ip].value}"];')
    for (src, dst) in sorted(g.edges):
        kinds = sorted(g.edges[(src, dst)].stages, key=_stage_sort_key)
        lines.append(f'  "{src}" -> "{dst}" [label="{",".join(k.value for k in kinds)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


GRAPH_SCHEMA = "aptgraph.campaign-graph"
GRAPH_SCHEMA_VERSION = 1


def _to_structured(g: CampaignGraph) -> str:
    doc = {
        "schema": GRAPH_SCHEMA,
        "version": GRAPH_SCHEMA_VERSION,
        "det_status": g.det_status.value,
        "nodes": [{"ip": ip, "role": g.nodes[ip].value} for ip in sorted(g.nodes)],
        "edges": [
            {
                "src": src,
                "dst": dst,
                "stages": [k.value for k in sorted(g.edges[(src, dst)].stages, key=_stage_sort_key)],
                "timestamps": {k.value: t for k, t in sorted(g.edges[(src, dst)].stage_times.items(), key=lambda kv: _stage_sort_key(kv[0]))},
            }
            for (src, dst) in sorted(g.edges)
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_structured(text: str) -> CampaignGraph:
    doc = json.loads(text)
    if doc.get("schema") != GRAPH_SCHEMA or doc.get("version") != GRAPH_SCHEMA_VERSION:
        raise AptError("BAD_GRAPH_DOCUMENT", "unrecognised graph schema or version")
    nodes = {n["ip"]: NodeRole(n["role"]) for n in doc["nodes"]}
    edges = {}
    for e in doc["edges"]:
        st = {StageKind(k): float(t) for k, t in e["timestamps"].items()}
        edges[(e["src"], e["dst"])] = Edge(e["src"], e["dst"], st)
    return CampaignGraph(nodes, edges, DetStatus(doc["det_status"]))


@dataclass(frozen=True)
class Rejection:
    kind: StageKind
    host: str
    target: Optional[str]
    reason: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "host": self.host, "target": self.target, "reason": self.reason}


@dataclass
class AsdcInputs:
    windows: Mapping[str, Sequence[TraceWindow]]
    auth_events: Sequence[AuthLoginEvent]
    alerts: Sequence[IdsAlert]
    discovery_model: TrainedModel
    fieldbus_model: TrainedModel
    inventory: HostInventory
    config: DetectorConfig = field(default_factory=DetectorConfig)


@dataclass
class AsdcResult:
    det_status: DetStatus
    graph: CampaignGraph
    stages: list[StageDetection]
    rejections: list[Rejection]
    # Final machine state per entry host.
    states: dict[str, IasmState]


_STATE_ORDER = list(IasmState)


class _Chain:
    """Kill-chain walk from one entry host. The machine state travels with each branch."""

    def __init__(self, inp: AsdcInputs, accepted: list[StageDetection], rejections: list[Rejection]):
        self.inp = inp
        self.accepted = accepted
        self.rejections = rejections
        self.furthest = IasmState.READY_FOR_ATTACK
        self.visited: set[str] = set()
        self.gateway_done = False

    def _accept(self, s: StageDetection, prev: Optional[StageDetection], state: IasmState,
                target_is_gateway: bool = False) -> Optional[IasmState]:
        if prev is not None and not correlate_pair(prev, s):
            self._reject(s.kind, s.src_ip, None, "correlation conditions not met")
            return None
        nxt = iasm_next(state, s.kind, target_is_gateway)
        self.accepted.append(s)
        if _STATE_ORDER.index(nxt) > _STATE_ORDER.index(self.furthest):
            self.furthest = nxt
        return nxt

    def _reject(self, kind: StageKind, host: str, target: Optional[str], reason: str):
        self.rejections.append(Rejection(kind, host, target, reason))

    def run(self, host: str) -> None:
        inp = self.inp
        cnc = check_cnc_stage(host, inp.windows.get(host, ()), inp.inventory, inp.config)
        if not cnc.detected:
            self._reject(StageKind.CNC, host, None, "no periodic public-server traffic")
            return
        state = self._accept(cnc, None, iasm_enter())
        self.visited.add(host)
        self._from_host(host, cnc, state)

    def _from_host(self, host: str, prev: StageDetection, state: IasmState) -> None:
        inp = self.inp
        windows = inp.windows.get(host)
        if not windows:
            self._reject(StageKind.DISCOVERY, host, None, "no traffic captured at host")
            return
        disc = check_discovery_stage(host, windows, inp.discovery_model, inp.alerts, inp.config,
                                     inp.inventory, not_before=prev.time_det)
        if not disc.detected:
            self._reject(StageKind.DISCOVERY, host, None, f"aggregate score {disc.score:.3f} below threshold")
            return
        state = self._accept(disc, prev, state)
        if state is None:
            return
        gw = inp.inventory.edge_gateway_ip
        # Gateway first, so the fieldbus branch is reached even when other targets fan out.
        for target in sorted(disc.dst_ips, key=lambda t: (t != gw, t)):
            if target in self.visited:
                continue
            lm = check_lateral_movement_stage(host, target, inp.auth_events, self.accepted,
                                              windows, inp.config, after=disc.time_det)
            if not lm.detected:
                self._reject(StageKind.LATERAL_MOVEMENT, host, target, "no suspicious successful login")
                continue
            branch = self._accept(lm, disc, state, target_is_gateway=(target == gw))
            if branch is None:
                continue
            self.visited.add(target)
            if target == gw:
                self._at_gateway(lm, branch)
            else:
                self._from_host(target, lm, branch)

    def _at_gateway(self, lm: StageDetection, state: IasmState) -> None:
        if self.gateway_done:
            return
        self.gateway_done = True
        inp = self.inp
        gw = inp.inventory.edge_gateway_ip
        gw_windows = inp.windows.get(gw, ())
        fb = check_fieldbus_scan_stage(gw_windows, inp.fieldbus_model, inp.alerts, inp.config,
                                       inp.inventory, not_before=lm.time_det)
        if not fb.detected:
            self._reject(StageKind.FIELDBUS_SCAN, gw, None, f"aggregate score {fb.score:.3f} below threshold")
            return
        state = self._accept(fb, lm, state)
        if state is None:
            return
        if not inp.inventory.ce_endpoints:
            self._reject(StageKind.CE_SPOOF, gw, None, "inventory lists no CE endpoints")
            return
        # Wait for the scan to finish so its own connect/reset cycles are not read as spoofing.
        ce = check_ce_comm_stage(gw_windows, inp.inventory, not_before=fb.evidence.get("active_until", fb.time_det),
                                 cfg=inp.config)
        if not ce.detected:
            self._reject(StageKind.CE_SPOOF, gw, None, "no duplicate or re-established CE connection")
            return
        self._accept(ce, fb, state)


def run_asdc(inp: AsdcInputs) -> AsdcResult:
    accepted: list[StageDetection] = []
    rejections: list[Rejection] = []
    states: dict[str, IasmState] = {}
    for host in inp.inventory.internet_facing_hosts:
        chain = _Chain(inp, accepted, rejections)
        chain.run(host)
        states[host] = chain.furthest
    graph = build_graph(accepted)
    return AsdcResult(graph.det_status, graph, accepted, rejections, states)


def rejections_to_jsonl(rejections: Iterable[Rejection]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in rejections)
