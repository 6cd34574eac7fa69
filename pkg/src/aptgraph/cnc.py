"""Command-and-control detection from packet timing.

Candidate packets exchanged with each public server are binned into a binary
signal, autocorrelated, and the retained ACF peaks are tested for evenly spaced
lags. Each server is analysed on its own, so chatter with other public servers
cannot mask or fake a beacon.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .model import (
    AptError,
    HostInventory,
    PacketRecord,
    Protocol,
    StageDetection,
    StageKind,
    TcpFlags,
    TraceWindow,
)

_ACK = TcpFlags.ACK
_PSH_ACK = TcpFlags.PSH | TcpFlags.ACK


@dataclass(frozen=True)
class PeriodicityConfig:
    # Samples per second; 1 s bins. See README "Calibration" for why not 0.1.
    sampling_frequency: float = 1.0
    min_peak_fraction: float = 0.7
    # Tallest non-zero-lag peak must reach this ACF height; weak, chance
    # peaks from random arrivals otherwise pass the gap test. 0 disables.
    min_peak_height: float = 0.5
    gap_variance_threshold: float = 0.01
    min_packets: int = 4
    # Bin-grid offsets (fractions of one bin) tried in turn; guards against
    # jitter straddling a bin edge.
    phase_offsets: tuple[float, ...] = (0.0, 0.5)

    def __post_init__(self):
        if not self.sampling_frequency > 0:
            raise AptError("BAD_CONFIG", "sampling_frequency must be > 0")
        if not 0 < self.min_peak_fraction <= 1:
            raise AptError("BAD_CONFIG", "min_peak_fraction must lie in (0, 1]")
        if not 0 <= self.min_peak_height <= 1:
            raise AptError("BAD_CONFIG", "min_peak_height must lie in [0, 1]")
        if not self.gap_variance_threshold > 0:
            raise AptError("BAD_CONFIG", "gap_variance_threshold must be > 0")
        if self.min_packets < 1:
            raise AptError("BAD_CONFIG", "min_packets must be >= 1")
        if not self.phase_offsets or any(not 0 <= o < 1 for o in self.phase_offsets):
            raise AptError("BAD_CONFIG", "phase_offsets must be non-empty fractions in [0, 1)")


class Periodicity(NamedTuple):
    periodic: bool
    period_bins: Optional[int]


def is_cnc_candidate(pkt: PacketRecord) -> bool:
    if pkt.protocol is Protocol.UDP:
        return True
    return pkt.protocol is Protocol.TCP and pkt.tcp_flags in (_ACK, _PSH_ACK)


def filter_cnc_candidates(window: TraceWindow, host_ip: str, inv: HostInventory) -> dict[str, list[float]]:
    """Public peer -> ascending timestamps of its candidate packets with ``host_ip``."""
    if window.host_ip != host_ip:
        raise AptError("HOST_MISMATCH", f"window is for {window.host_ip}, not {host_ip}")
    out: dict[str, list[float]] = defaultdict(list)
    public_cache: dict[str, bool] = {}
    for pkt in window.packets:
        if pkt.src_ip == host_ip:
            peer = pkt.dst_ip
        elif pkt.dst_ip == host_ip:
            peer = pkt.src_ip
        else:
            continue
        if not is_cnc_candidate(pkt):
            continue
        public = public_cache.get(peer)
        if public is None:
            public = public_cache[peer] = inv.is_public(peer)
        if public:
            out[peer].append(pkt.timestamp)
    for ts in out.values():
        ts.sort()
    return dict(out)


def encode_signal(
    timestamps: Sequence[float],
    cfg: PeriodicityConfig,
    span: float,
    start: float = 0.0,
    phase: float = 0.0,
) -> np.ndarray:
    """Binary occupancy signal: sample i is 1 iff some timestamp lands in bin i.

    ``phase`` shifts the bin grid left by that fraction of a bin.
    """
    if len(timestamps) == 0:
        raise AptError("EMPTY_TIMESTAMPS", "no timestamps to encode")
    n = max(1, math.ceil(span * cfg.sampling_frequency - 1e-9))
    rel = (np.asarray(timestamps, dtype=float) - start) * cfg.sampling_frequency + phase
    idx = np.floor(rel).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < n)]
    signal = np.zeros(n, dtype=np.int8)
    signal[idx] = 1
    return signal


def autocorrelate(signal: Sequence[float]) -> np.ndarray:
    """Mean-removed, biased ACF for lags 0..len-1, scaled so ACF(0) == 1."""
    x = np.asarray(signal, dtype=float)
    if x.size < 2:
        raise AptError("SIGNAL_TOO_SHORT", "need at least 2 samples")
    x = x - x.mean()
    energy = float(np.dot(x, x))
    if energy <= 1e-12 * x.size:
        raise AptError("ZERO_VARIANCE", "constant signal")
    full = np.correlate(x, x, mode="full")
    return full[x.size - 1 :] / energy


def acf_peaks(acf: Sequence[float]) -> list[int]:
    """Strict local maxima at lags >= 1; a plateau reports its first lag."""
    a = np.asarray(acf, dtype=float)
    peaks = []
    k, n = 1, a.size
    while k < n - 1:
        if a[k] > a[k - 1]:
            j = k
            while j + 1 < n and a[j + 1] == a[k]:
                j += 1
            if j + 1 < n and a[j + 1] < a[k]:
                peaks.append(k)
            k = j + 1
        else:
            k += 1
    return peaks


def detect_periodicity(acf: Sequence[float], cfg: PeriodicityConfig) -> Periodicity:
    """Evenly spaced dominant ACF peaks => periodic.

    The tallest non-zero-lag peak must reach ``min_peak_height``; peaks within
    ``min_peak_fraction`` of it are kept. Gaps are measured along lag 0 followed by the kept lags; the test
    passes when at least two peaks were kept and the gap variance, divided by
    the squared mean gap, stays within ``gap_variance_threshold``.
    """
    a = np.asarray(acf, dtype=float)
    peaks = acf_peaks(a)
    if not peaks:
        return Periodicity(False, None)
    tallest = max(a[k] for k in peaks)
    if tallest <= 0 or tallest < cfg.min_peak_height:
        return Periodicity(False, None)
    kept = [k for k in peaks if a[k] >= cfg.min_peak_fraction * tallest]
    if len(kept) < 2:
        return Periodicity(False, None)
    gaps = np.diff(np.array([0, *kept], dtype=float))
    mean_gap = gaps.mean()
    if gaps.var() / mean_gap**2 > cfg.gap_variance_threshold:
        return Periodicity(False, None)
    return Periodicity(True, int(round(mean_gap)))


def timestamps_periodic(
    timestamps: Sequence[float], cfg: PeriodicityConfig, span: float, start: float = 0.0
) -> Periodicity:
    """encode -> ACF -> detect, over every configured bin phase; first hit wins."""
    for phase in cfg.phase_offsets:
        signal = encode_signal(timestamps, cfg, span, start, phase)
        try:
            acf = autocorrelate(signal)
        except AptError as exc:
            if exc.code in ("ZERO_VARIANCE", "SIGNAL_TOO_SHORT"):
                continue
            raise
        result = detect_periodicity(acf, cfg)
        if result.periodic:
            return result
    return Periodicity(False, None)


def check_cnc_stage(
    host_ip: str,
    windows: Iterable[TraceWindow],
    inv: HostInventory,
    cfg: PeriodicityConfig,
) -> StageDetection:
    for window in sorted(windows, key=lambda w: w.start_time):
        candidates = filter_cnc_candidates(window, host_ip, inv)
        for server in sorted(candidates):
            ts = candidates[server]
            if len(ts) < cfg.min_packets:
                continue
            verdict = timestamps_periodic(ts, cfg, window.duration_s, window.start_time)
            if verdict.periodic:
                return StageDetection(
                    kind=StageKind.CNC,
                    detected=True,
                    time_det=ts[0],
                    src_ip=host_ip,
                    dst_ips=(server,),
                    extras={"cnc_server_ip": server},
                    score=1.0,
                    evidence={
                        "timestamps": tuple(ts),
                        "window_start": window.start_time,
                        "period_s": verdict.period_bins / cfg.sampling_frequency,
                    },
                )
    return StageDetection(kind=StageKind.CNC, detected=False, time_det=0.0, src_ip=host_ip, score=0.0)
