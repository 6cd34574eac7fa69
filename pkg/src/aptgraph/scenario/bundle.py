"""On-disk scenario bundles: per-host captures, logs, inventory and ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ..asdc import CampaignGraph, build_graph, export_graph, parse_structured
from ..config import DEFAULT_SIGNATURE_MAP
from ..ingest import (
    packets_for_host,
    parse_auth_log,
    parse_ids_alerts,
    read_capture,
    split_windows,
    write_auth_log,
    write_capture,
    write_ids_alerts,
)
from ..model import (
    AptError,
    AuthLoginEvent,
    HostInventory,
    IdsAlert,
    PacketRecord,
    StageDetection,
    TraceWindow,
)
from .packets import Traffic

CAPTURE_DIR = "captures"
AUTH_LOG = "auth.log"
ALERT_LOG = "alerts.log"
INVENTORY = "inventory.json"
TRUTH_DIR = "truth"
TRUTH_STAGES = "stages.json"
TRUTH_GRAPH = "graph.json"
TRUTH_NARRATIVE = "narrative.json"
BUNDLE_INDEX = "bundle.json"


@dataclass
class ScenarioBundle:
    captures: dict[str, list[PacketRecord]]
    auth_events: list[AuthLoginEvent]
    alerts: list[IdsAlert]
    inventory: HostInventory
    truth_stages: list[StageDetection] = field(default_factory=list)
    truth_graph: CampaignGraph = field(default_factory=CampaignGraph)
    narrative: list[dict] = field(default_factory=list)
    seed: int = 0
    campaign: Optional[int] = None

    @classmethod
    def from_traffic(
        cls,
        traffic: Traffic,
        inventory: HostInventory,
        hosts: Sequence[str],
        truth_stages: Sequence[StageDetection] = (),
        narrative: Sequence[dict] = (),
        seed: int = 0,
        campaign: Optional[int] = None,
    ) -> "ScenarioBundle":
        t = traffic.sorted()
        stages = list(truth_stages)
        return cls(
            captures={h: packets_for_host(t.packets, h) for h in hosts},
            auth_events=t.auth_events,
            alerts=t.alerts,
            inventory=inventory,
            truth_stages=stages,
            truth_graph=build_graph(stages),
            narrative=list(narrative),
            seed=seed,
            campaign=campaign,
        )

    def windows(self, window_s: float = 60.0) -> dict[str, list[TraceWindow]]:
        return {h: split_windows(p, h, window_s) for h, p in self.captures.items()}


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_bundle(bundle: ScenarioBundle, out_dir) -> list[Path]:
    """Write every bundle file under ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    try:
        (out / CAPTURE_DIR).mkdir(parents=True, exist_ok=True)
        (out / TRUTH_DIR).mkdir(exist_ok=True)
        written = []
        for host in sorted(bundle.captures):
            p = out / CAPTURE_DIR / f"{host}.pcap"
            write_capture(p, bundle.captures[host])
            written.append(p)
        write_auth_log(out / AUTH_LOG, bundle.auth_events)
        write_ids_alerts(out / ALERT_LOG, bundle.alerts)
        _dump(out / INVENTORY, bundle.inventory.to_dict())
        _dump(out / TRUTH_DIR / TRUTH_STAGES, [s.to_dict() for s in bundle.truth_stages])
        (out / TRUTH_DIR / TRUTH_GRAPH).write_text(export_graph(bundle.truth_graph, "structured"))
        _dump(out / TRUTH_DIR / TRUTH_NARRATIVE, bundle.narrative)
        written += [out / AUTH_LOG, out / ALERT_LOG, out / INVENTORY,
                    out / TRUTH_DIR / TRUTH_STAGES, out / TRUTH_DIR / TRUTH_GRAPH, out / TRUTH_DIR / TRUTH_NARRATIVE]
        _dump(out / BUNDLE_INDEX, {
            "seed": bundle.seed,
            "campaign": bundle.campaign,
            "hosts": sorted(bundle.captures),
            "files": sorted(str(p.relative_to(out)) for p in written),
        })
    except OSError as exc:
        raise AptError("IO_ERROR", f"{out}: {exc}") from exc
    return [*written, out / BUNDLE_INDEX]


def load_bundle(in_dir, sig_map=None) -> ScenarioBundle:
    root = Path(in_dir)
    try:
        index = json.loads((root / BUNDLE_INDEX).read_text())
        inventory = HostInventory.from_dict(json.loads((root / INVENTORY).read_text()))
    except OSError as exc:
        raise AptError("IO_ERROR", f"{root}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise AptError("BAD_BUNDLE", f"{root}: {exc}") from exc
    captures = {h: read_capture(root / CAPTURE_DIR / f"{h}.pcap")[0] for h in index["hosts"]}
    auth = parse_auth_log(root / AUTH_LOG).records
    alerts = parse_ids_alerts(root / ALERT_LOG, sig_map or DEFAULT_SIGNATURE_MAP).records
    truth_dir = root / TRUTH_DIR
    stages, graph, narrative = [], CampaignGraph(), []
    if (truth_dir / TRUTH_STAGES).exists():
        stages = [StageDetection.from_dict(d) for d in json.loads((truth_dir / TRUTH_STAGES).read_text())]
        graph = parse_structured((truth_dir / TRUTH_GRAPH).read_text())
        narrative = json.loads((truth_dir / TRUTH_NARRATIVE).read_text())
    return ScenarioBundle(captures, auth, alerts, inventory, stages, graph, narrative,
                          int(index.get("seed", 0)), index.get("campaign"))
