"""Deterministic synthetic plant traffic, attack footprints and labeled datasets."""

from .attacks import COMMON_PORTS, gen_cnc, gen_fieldbus_scan, gen_scan, scan_ports
from .benign import FieldbusMode, TrafficProfile, gen_benign, login_session
from .bundle import ScenarioBundle, load_bundle, write_bundle
from .campaigns import CAMPAIGN_IDS, gen_benign_bundle, gen_campaign
from .packets import Emitter, Traffic, rng_for, tcp_packet, udp_packet
from .topology import BASE_EPOCH, DEFAULT_TOPOLOGY, Topology, default_inventory
from .datasets import cnc_windows, discovery_windows, fieldbus_windows

__all__ = [
    "BASE_EPOCH", "CAMPAIGN_IDS", "COMMON_PORTS", "DEFAULT_TOPOLOGY", "Emitter", "FieldbusMode",
    "ScenarioBundle", "Topology", "Traffic", "TrafficProfile", "cnc_windows", "default_inventory",
    "discovery_windows", "fieldbus_windows", "gen_benign", "gen_benign_bundle", "gen_campaign", "gen_cnc",
    "gen_fieldbus_scan", "gen_scan", "load_bundle", "login_session", "rng_for", "scan_ports", "tcp_packet",
    "udp_packet", "write_bundle",
]
