"""Labeled window corpora for the classifiers and the C&C detector.

Benign and attack windows come from separate generated traces, and every attack
window carries attack traffic, so labels are clean by construction.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..features import FeatureVector, Label, discovery_features, fieldbus_features
from ..ingest import packets_for_host, split_windows
from ..model import CeProtocol, Protocol, ScanType, TraceWindow
from ..stages import fieldbus_view
from .attacks import gen_cnc, gen_fieldbus_scan, gen_scan
from .benign import FieldbusMode, TrafficProfile, gen_benign
from .packets import Traffic, rng_for
from .topology import BASE_EPOCH, DEFAULT_TOPOLOGY, Topology

WINDOW_S = 60.0


def _windows(traffic: Traffic, host: str, n: int) -> list[TraceWindow]:
    ws = split_windows(packets_for_host(traffic.packets, host), host, WINDOW_S)
    if len(ws) < n:
        raise AssertionError(f"generated {len(ws)} windows, wanted {n}")
    return ws[:n]


def _background(topo: Topology, host: str, n: int, seed: int, tag: str, profile: TrafficProfile) -> Traffic:
    # One spare window so the n-th window is complete.
    return gen_benign(profile, topo, (n + 1) * WINDOW_S, hash_seed(seed, tag), BASE_EPOCH, hosts=(host,),
                      login_pairs=())


def hash_seed(seed: int, tag: str) -> int:
    return int(rng_for(seed, tag).integers(0, 2**31 - 1))


def _random_private_hosts(rng: np.random.Generator, k: int, exclude: str) -> list[str]:
    out: set[str] = set()
    while len(out) < k:
        ip = f"10.0.{int(rng.integers(1, 4))}.{int(rng.integers(2, 255))}"
        if ip != exclude:
            out.add(ip)
    return sorted(out)


def discovery_windows(
    speed: ScanType,
    n_benign: int = 1000,
    n_attack: int = 1000,
    seed: int = 0,
    profile: Optional[TrafficProfile] = None,
    topology: Topology = DEFAULT_TOPOLOGY,
) -> list[FeatureVector]:
    """Discovery feature vectors: ``n_benign`` NORMAL windows, then ``n_attack`` SCANNING windows."""
    profile = profile or TrafficProfile()
    host = topology.maintenance
    benign = _windows(_background(topology, host, n_benign, seed, "disc-benign", profile), host, n_benign)

    attack = _background(topology, host, n_attack, seed, "disc-attack", profile)
    rng = rng_for(seed, "disc-scans", speed.value)
    if speed is ScanType.NORMAL:
        for w in range(n_attack):
            targets = _random_private_hosts(rng, int(rng.integers(2, 26)), host)
            ppt = int(rng.integers(2, 26))
            t = BASE_EPOCH + w * WINDOW_S + float(rng.uniform(5.0, 45.0))
            attack.packets += gen_scan(ScanType.NORMAL, host, targets, ppt, hash_seed(seed, f"scan{w}"),
                                       start=t, probe_gap_s=profile.normal_probe_gap_s)
    else:
        # One sneaky scan running through the whole trace, a few probes per window.
        targets = _random_private_hosts(rng, 20, host)
        need = math.ceil(n_attack * WINDOW_S / (profile.slow_probe_gap_s - 1.0)) + 20
        attack.packets += gen_scan(ScanType.SLOW, host, targets, math.ceil(need / len(targets)),
                                   hash_seed(seed, "slow"), start=BASE_EPOCH + 2.0,
                                   probe_gap_s=profile.slow_probe_gap_s)
    attack = attack.sorted()
    scans = _windows(attack, host, n_attack)
    return ([discovery_features(w, Label.NORMAL) for w in benign]
            + [discovery_features(w, Label.SCANNING) for w in scans])


_MIXED_RUNS = [(p, m) for p in (CeProtocol.MODBUS, CeProtocol.S7, CeProtocol.DNP3) for m in FieldbusMode]


def fieldbus_windows(
    protocol: Optional[CeProtocol],
    mode: Optional[FieldbusMode],
    n_benign: int = 1000,
    n_attack: int = 1000,
    seed: int = 0,
    profile: Optional[TrafficProfile] = None,
    topology: Topology = DEFAULT_TOPOLOGY,
) -> list[FeatureVector]:
    """Fieldbus feature vectors over the gateway's CE-side traffic.

    ``protocol``/``mode`` of None draws each attack window's run from every
    protocol and mode, for a general-purpose model.
    """
    profile = profile or TrafficProfile()
    gw = topology.gateway
    inv = topology.inventory()
    benign = _windows(_background(topology, gw, n_benign, seed, "fb-benign", profile), gw, n_benign)

    attack = _background(topology, gw, n_attack, seed, "fb-attack", profile)
    rng = rng_for(seed, "fb-scans")
    for w in range(n_attack):
        if protocol is None or mode is None:
            p, m = _MIXED_RUNS[int(rng.integers(len(_MIXED_RUNS)))]
            p, m = protocol or p, mode or m
        else:
            p, m = protocol, mode
        ce = topology.ce_for(p)
        t = BASE_EPOCH + w * WINDOW_S + float(rng.uniform(3.0, 30.0))
        attack.packets += gen_fieldbus_scan(p, m, gw, ce.ip, hash_seed(seed, f"fb{w}"), start=t,
                                            port=ce.port if ce.protocol is p else None)
    attack = attack.sorted()
    scans = _windows(attack, gw, n_attack)
    return ([fieldbus_features(fieldbus_view(w, inv), Label.NORMAL) for w in benign]
            + [fieldbus_features(fieldbus_view(w, inv), Label.SCANNING) for w in scans])


def cnc_windows(
    n: int,
    beacon: bool,
    seed: int = 0,
    profile: Optional[TrafficProfile] = None,
    protocol: Protocol = Protocol.UDP,
    topology: Topology = DEFAULT_TOPOLOGY,
) -> list[TraceWindow]:
    """``n`` windows of the maintenance host's traffic, with or without a beacon throughout."""
    profile = profile or TrafficProfile()
    host = topology.maintenance
    traffic = _background(topology, host, n, seed, "cnc-beacon" if beacon else "cnc-benign", profile)
    if beacon:
        traffic.packets += gen_cnc(profile.beacon_period_s, profile.beacon_jitter_s, topology.cnc_server, host,
                                   (n + 1) * WINDOW_S, hash_seed(seed, "beacon"), start=BASE_EPOCH + 1.0,
                                   protocol=protocol)
        traffic = traffic.sorted()
    return _windows(traffic, host, n)

