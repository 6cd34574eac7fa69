"""Per-stage detection entry points and the weighted multi-source score.

Each check returns a ``StageDetection`` whose ``detected`` flag is the
thresholded aggregate of one optimal-source verdict and any secondary ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .cnc import check_cnc_stage as _check_cnc_periodicity
from .config import DetectorConfig
from .features import discovery_features, fieldbus_features, track_connections, track_packets
from .ml.evaluate import smooth_predictions
from .ml.trained import TrainedModel
from .model import (
    OPTIMAL_SOURCE,
    AptError,
    AuthLoginEvent,
    DataSource,
    HostInventory,
    IdsAlert,
    Protocol,
    ScanType,
    ScoreConfig,
    StageDetection,
    StageHint,
    StageKind,
    TraceWindow,
)


@dataclass(frozen=True)
class SourceVerdict:
    source: DataSource
    is_optimal: bool
    d: int
    weight: float

    def __post_init__(self):
        if self.d not in (0, 1):
            raise AptError("BAD_VERDICT", "d must be 0 or 1")
        if not self.weight > 0:
            raise AptError("BAD_WEIGHT", "verdict weight must be > 0")


@dataclass(frozen=True)
class AggregateScore:
    d_a: float
    tau: float
    detected: bool


def aggregate_score(verdicts: Sequence[SourceVerdict], cfg: ScoreConfig) -> AggregateScore:
    """Weighted mean of binary verdicts; detected when it reaches ``cfg.tau``."""
    optimal = [v for v in verdicts if v.is_optimal]
    if len(optimal) != 1:
        raise AptError("NO_OPTIMAL_SOURCE", f"need exactly one optimal verdict, got {len(optimal)}")
    opt = optimal[0]
    secondary = [v for v in verdicts if not v.is_optimal]
    for v in secondary:
        if not opt.weight > v.weight:
            raise AptError("WEIGHT_ORDER_VIOLATION", f"{v.source.value} weight {v.weight} >= optimal {opt.weight}")
    num = opt.weight * opt.d + sum(v.weight * v.d for v in secondary)
    den = opt.weight + sum(v.weight for v in secondary)
    d_a = num / den
    return AggregateScore(d_a, cfg.tau, d_a >= cfg.tau)


def score_stage(stage: StageKind, decisions: dict[DataSource, bool], cfg: ScoreConfig) -> AggregateScore:
    """Build verdicts for ``stage`` from per-source booleans and aggregate them."""
    opt_src = OPTIMAL_SOURCE[stage]
    verdicts = [
        SourceVerdict(src, src is opt_src, int(bool(hit)), cfg.weight(stage, src))
        for src, hit in decisions.items()
    ]
    return aggregate_score(verdicts, cfg)


def _not_detected(kind: StageKind, src_ip: str, score: float = 0.0, **evidence) -> StageDetection:
    return StageDetection(kind=kind, detected=False, time_det=0.0, src_ip=src_ip, score=score, evidence=evidence)


def check_cnc_stage(host_ip: str, windows: Sequence[TraceWindow], inv: HostInventory, cfg: DetectorConfig) -> StageDetection:
    """Periodicity check, expressed through the aggregate score (traffic is the only source)."""
    raw = _check_cnc_periodicity(host_ip, windows, inv, cfg.periodicity)
    agg = score_stage(StageKind.CNC, {DataSource.TRAFFIC: raw.detected}, cfg.score)
    return replace(raw, detected=agg.detected, score=agg.d_a)


def _after(windows: Sequence[TraceWindow], t: Optional[float]) -> list[TraceWindow]:
    ws = sorted(windows, key=lambda w: w.start_time)
    if t is None:
        return ws
    return [w for w in ws if w.end_time > t]


def _matching_alerts(alerts: Iterable[IdsAlert], hint: StageHint, src_ip: str, not_before: Optional[float]):
    return sorted(
        (a for a in alerts if a.stage_hint is hint and a.src_ip == src_ip and (not_before is None or a.timestamp > not_before)),
        key=lambda a: a.timestamp,
    )


def _voted_positive(model: TrainedModel, windows: Sequence[TraceWindow], extractor, vote_n: int) -> np.ndarray:
    if not windows:
        return np.zeros(0, dtype=int)
    X = np.array([extractor(w).values for w in windows], dtype=float)
    return smooth_predictions(model.predict(X), vote_n)


def _probe_packets(window: TraceWindow, host_ip: str, not_before: Optional[float]):
    for p in window.packets:
        if p.src_ip != host_ip or (not_before is not None and p.timestamp <= not_before):
            continue
        if p.is_syn or p.protocol is Protocol.UDP:
            yield p


def _scan_targets(windows: Sequence[TraceWindow], host_ip: str, inv: Optional[HostInventory]) -> list[str]:
    """Private destinations that left at least one SYN unanswered-by-handshake or a UDP probe unanswered."""
    targets: set[str] = set()
    for w in windows:
        summary = track_connections(w)
        for c in summary.connections:
            if c.client_ip == host_ip and not c.pre_existing and not c.handshake_done:
                targets.add(c.server_ip)
        answered = {p.src_ip for p in w.packets if p.protocol is Protocol.UDP and p.dst_ip == host_ip}
        for p in w.packets:
            if p.protocol is Protocol.UDP and p.src_ip == host_ip and p.dst_ip not in answered:
                targets.add(p.dst_ip)
    if inv is not None:
        targets = {t for t in targets if inv.is_private(t)}
    targets.discard(host_ip)
    return sorted(targets)


def check_discovery_stage(
    host_ip: str,
    windows: Sequence[TraceWindow],
    model: TrainedModel,
    alerts: Iterable[IdsAlert],
    cfg: DetectorConfig,
    inv: Optional[HostInventory] = None,
    not_before: Optional[float] = None,
) -> StageDetection:
    """Mode-voted window classification (optimal) plus matching IDS alerts (secondary).

    ``not_before`` confines the search to evidence strictly later than that time.
    """
    kind = StageKind.DISCOVERY
    ws = _after(windows, not_before)
    voted = _voted_positive(model, ws, discovery_features, cfg.vote_n)
    positive = [w for w, v in zip(ws, voted) if v]
    probes = [p for w in positive for p in _probe_packets(w, host_ip, not_before)]
    hits = _matching_alerts(alerts, StageHint.DISCOVERY, host_ip, not_before)
    agg = score_stage(kind, {DataSource.TRAFFIC: bool(probes), DataSource.IDS_ALERTS: bool(hits)}, cfg.score)
    if not agg.detected:
        return _not_detected(kind, host_ip, agg.d_a, positive_windows=len(positive), alerts=len(hits))

    if probes:
        time_det = probes[0].timestamp
        targets = _scan_targets(positive, host_ip, inv)
        minutes = sum(w.duration_s for w in positive) / 60.0
        rate = len(probes) / minutes
    else:  # only reachable with non-default weights
        time_det = hits[0].timestamp
        targets = sorted({a.dst_ip for a in hits})
        rate = 0.0
    scan_type = ScanType.NORMAL if rate >= cfg.normal_scan_rate_per_min else ScanType.SLOW
    return StageDetection(
        kind=kind,
        detected=True,
        time_det=time_det,
        src_ip=host_ip,
        dst_ips=tuple(targets),
        extras={"scan_type": scan_type, "list_target_host_IPs": tuple(targets)},
        score=agg.d_a,
        evidence={
            "timestamps": tuple(p.timestamp for p in probes[:1]) + tuple(a.timestamp for a in hits[:1]),
            "windows": tuple(w.start_time for w in positive),
            "active_until": max((w.end_time for w in positive), default=time_det),
            "probe_rate_per_min": rate,
            "alerts": len(hits),
        },
    )


def _prior_supports(prior: Iterable[StageDetection], src_ip: str, before: float) -> Optional[StageDetection]:
    """Earliest detected stage putting ``src_ip`` in the campaign before ``before``."""
    best = None
    for s in prior:
        if not s.detected or s.time_det >= before:
            continue
        at_src = s.src_ip == src_ip and s.kind in (StageKind.CNC, StageKind.DISCOVERY)
        moved_in = s.kind is StageKind.LATERAL_MOVEMENT and src_ip in s.dst_ips
        if (at_src or moved_in) and (best is None or s.time_det < best.time_det):
            best = s
    return best


def check_lateral_movement_stage(
    src_ip: str,
    dst_ip: str,
    auth_events: Iterable[AuthLoginEvent],
    prior: Iterable[StageDetection],
    windows: Sequence[TraceWindow],
    cfg: DetectorConfig,
    after: Optional[float] = None,
) -> StageDetection:
    """Successful remote login from a host already tied to the campaign (optimal),
    backed by remote-access traffic around that login (secondary)."""
    kind = StageKind.LATERAL_MOVEMENT
    prior = list(prior)
    logins = sorted(
        (e for e in auth_events
         if e.success and e.src_ip == src_ip and e.dst_ip == dst_ip and (after is None or e.timestamp > after)),
        key=lambda e: e.timestamp,
    )
    login = next((e for e in logins if _prior_supports(prior, src_ip, e.timestamp)), None)

    ports = set(cfg.remote_access_ports)

    def remote_access(p) -> bool:
        if p.protocol is not Protocol.TCP:
            return False
        fwd = p.src_ip == src_ip and p.dst_ip == dst_ip and p.dst_port in ports
        rev = p.src_ip == dst_ip and p.dst_ip == src_ip and p.src_port in ports
        return fwd or rev

    if login is not None:
        lo, hi = login.timestamp - cfg.window_s, login.timestamp + cfg.window_s
    else:
        lo, hi = (after if after is not None else -np.inf), np.inf
    traffic = [p.timestamp for w in windows for p in w.packets if lo <= p.timestamp <= hi and remote_access(p)]

    agg = score_stage(kind, {DataSource.AUTH_LOGS: login is not None, DataSource.TRAFFIC: bool(traffic)}, cfg.score)
    if not agg.detected or login is None:
        return replace(_not_detected(kind, src_ip, agg.d_a, logins=len(logins), traffic=len(traffic)), dst_ips=(dst_ip,))
    support = _prior_supports(prior, src_ip, login.timestamp)
    return StageDetection(
        kind=kind,
        detected=True,
        time_det=login.timestamp,
        src_ip=src_ip,
        dst_ips=(dst_ip,),
        extras={"username": login.username, "method": login.method.value},
        score=agg.d_a,
        evidence={
            "timestamps": (login.timestamp,) + tuple(sorted(traffic)[:1]),
            "supporting_stage": support.kind.value,
            "remote_access_packets": len(traffic),
        },
    )


def fieldbus_view(window: TraceWindow, inv: Optional[HostInventory]) -> TraceWindow:
    """The part of a gateway window exchanged with the CE-side networks."""
    if inv is None:
        return window
    keep = tuple(p for p in window.packets if inv.in_fieldbus_network(p.peer_of(window.host_ip)))
    return TraceWindow(window.host_ip, window.start_time, window.duration_s, keep)


def check_fieldbus_scan_stage(
    gateway_windows: Sequence[TraceWindow],
    model: TrainedModel,
    alerts: Iterable[IdsAlert],
    cfg: DetectorConfig,
    inv: Optional[HostInventory] = None,
    not_before: Optional[float] = None,
) -> StageDetection:
    kind = StageKind.FIELDBUS_SCAN
    ws = [fieldbus_view(w, inv) for w in _after(gateway_windows, not_before)]
    gw = ws[0].host_ip if ws else (inv.edge_gateway_ip if inv else "")
    voted = _voted_positive(model, ws, fieldbus_features, cfg.vote_n)
    positive = [w for w, v in zip(ws, voted) if v]
    probes = [p for w in positive for p in _probe_packets(w, gw, not_before)]
    hits = _matching_alerts(alerts, StageHint.FIELDBUS_SCAN, gw, not_before)
    agg = score_stage(kind, {DataSource.TRAFFIC: bool(probes), DataSource.IDS_ALERTS: bool(hits)}, cfg.score)
    if not agg.detected:
        return _not_detected(kind, gw, agg.d_a, positive_windows=len(positive), alerts=len(hits))
    if probes:
        time_det = probes[0].timestamp
        targets = sorted({p.dst_ip for p in probes})
    else:
        time_det = hits[0].timestamp
        targets = sorted({a.dst_ip for a in hits})
    return StageDetection(
        kind=kind,
        detected=True,
        time_det=time_det,
        src_ip=gw,
        dst_ips=tuple(targets),
        score=agg.d_a,
        evidence={
            "timestamps": tuple(p.timestamp for p in probes[:1]) + tuple(a.timestamp for a in hits[:1]),
            "windows": tuple(w.start_time for w in positive),
            "active_until": max((w.end_time for w in positive), default=time_det),
            "alerts": len(hits),
        },
    )


def check_ce_comm_stage(
    gateway_windows: Sequence[TraceWindow],
    inv: HostInventory,
    not_before: Optional[float] = None,
    cfg: Optional[DetectorConfig] = None,
) -> StageDetection:
    """Second live connection to a CE endpoint, or a fresh one after the old one was torn down.

    Only triggers strictly later than ``not_before`` count.
    """
    kind = StageKind.CE_SPOOF
    if not inv.ce_endpoints:
        raise AptError("NO_CE_ENDPOINTS", "inventory lists no CE endpoints")
    gw = inv.edge_gateway_ip
    endpoints = {(e.ip, e.port) for e in inv.ce_endpoints}
    packets = sorted(
        (p for w in gateway_windows for p in w.packets
         if p.protocol is Protocol.TCP and ((p.dst_ip, p.dst_port) in endpoints or (p.src_ip, p.src_port) in endpoints)),
        key=lambda p: p.timestamp,
    )
    conns = [c for c in track_packets(packets).connections
             if c.client_ip == gw and (c.server_ip, c.server_port) in endpoints and c.live]

    best = None  # (trigger time, endpoint, condition)
    for ep in sorted(endpoints):
        mine = sorted((c for c in conns if (c.server_ip, c.server_port) == ep), key=lambda c: c.established_at)
        for i, newer in enumerate(mine):
            t = newer.established_at
            if not_before is not None and t <= not_before:
                continue
            for older in mine[:i]:
                o_start, o_end = older.live_interval()
                if o_start <= t < o_end:
                    cond = "concurrent"
                elif older.closed_by in ("RST", "FIN") and o_end <= t:
                    cond = "reconnect"
                else:
                    continue
                if best is None or t < best[0]:
                    best = (t, ep, cond)
                break
    decisions = {DataSource.TRAFFIC: best is not None}
    score_cfg = cfg.score if cfg is not None else ScoreConfig()
    agg = score_stage(kind, decisions, score_cfg)
    if not agg.detected or best is None:
        return _not_detected(kind, gw, agg.d_a, connections=len(conns))
    t, (ip, port), cond = best
    return StageDetection(
        kind=kind,
        detected=True,
        time_det=t,
        src_ip=gw,
        dst_ips=(ip,),
        extras={"ce_port": port, "condition": cond},
        score=agg.d_a,
        evidence={"timestamps": (t,), "connections": len(conns)},
    )


def detections_to_jsonl(stages: Iterable[StageDetection]) -> str:
    return "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in stages)


def detections_from_jsonl(text: str) -> list[StageDetection]:
    return [StageDetection.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
