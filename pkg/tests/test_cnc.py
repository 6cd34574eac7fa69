import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aptgraph.cnc import (
    PeriodicityConfig,
    acf_peaks,
    autocorrelate,
    check_cnc_stage,
    detect_periodicity,
    encode_signal,
    filter_cnc_candidates,
    timestamps_periodic,
)
from aptgraph.ingest import split_windows
from aptgraph.model import AptError, PacketRecord, Protocol, TcpFlags, TraceWindow
from aptgraph.scenario import DEFAULT_TOPOLOGY, gen_benign, gen_cnc, rng_for, TrafficProfile
from oracles import acf_double_loop

HOST = "10.0.1.10"
INV = DEFAULT_TOPOLOGY.inventory()
CFG = PeriodicityConfig()


def _udp(t, dst, src=HOST):
    return PacketRecord(t, src, dst, 40000, 53, Protocol.UDP, TcpFlags.NONE, 40, 68)


def _tcp(t, dst, flags):
    return PacketRecord(t, HOST, dst, 40000, 443, Protocol.TCP, flags, 0, 40)


def _window(pkts, start=0.0, dur=60.0):
    return TraceWindow(HOST, start, dur, tuple(sorted(pkts, key=lambda p: p.timestamp)))


def test_private_only_window_has_no_candidates():
    w = _window([_udp(t, "10.0.0.9") for t in range(0, 60, 5)])
    assert filter_cnc_candidates(w, HOST, INV) == {}


def test_udp_beacon_to_public_server_is_collected():
    w = _window([_udp(t, "8.8.4.4") for t in range(0, 60, 5)])
    got = filter_cnc_candidates(w, HOST, INV)
    assert list(got) == ["8.8.4.4"] and got["8.8.4.4"] == [float(t) for t in range(0, 60, 5)]


def test_tcp_flag_filter():
    w = _window([_tcp(1, "8.8.4.4", TcpFlags.SYN), _tcp(2, "8.8.4.4", TcpFlags.ACK),
                 _tcp(3, "8.8.4.4", TcpFlags.PSH | TcpFlags.ACK), _tcp(4, "8.8.4.4", TcpFlags.FIN | TcpFlags.ACK)])
    assert filter_cnc_candidates(w, HOST, INV) == {"8.8.4.4": [2.0, 3.0]}


def test_vpn_server_is_not_public():
    w = _window([_udp(t, INV.vpn_server_ip) for t in range(0, 60, 5)])
    assert filter_cnc_candidates(w, HOST, INV) == {}


def test_window_host_mismatch():
    with pytest.raises(AptError):
        filter_cnc_candidates(_window([]), "10.0.1.99", INV)


def test_encode_ten_second_bins():
    cfg = PeriodicityConfig(sampling_frequency=0.1)
    assert encode_signal([0, 10, 20], cfg, 60).tolist() == [1, 1, 1, 0, 0, 0]


def test_encode_is_binary():
    assert encode_signal([0.1, 0.2, 3.5], CFG, 5).tolist() == [1, 0, 0, 1, 0]
    with pytest.raises(AptError) as e:
        encode_signal([], CFG, 5)
    assert e.value.code == "EMPTY_TIMESTAMPS"


def test_encode_phase_shifts_grid():
    assert encode_signal([0.6, 2.6], CFG, 4, phase=0.5).tolist() == [0, 1, 0, 1]


def test_acf_alternating_signal():
    acf = autocorrelate([1, 0] * 8)
    assert acf[2] > acf[1]
    assert all(k % 2 == 0 for k in acf_peaks(acf))
    np.testing.assert_allclose(acf, acf_double_loop([1, 0] * 8), atol=1e-12)


def test_acf_constant_signal_rejected():
    with pytest.raises(AptError) as e:
        autocorrelate([1] * 10)
    assert e.value.code == "ZERO_VARIANCE"
    with pytest.raises(AptError) as e:
        autocorrelate([1])
    assert e.value.code == "SIGNAL_TOO_SHORT"


def test_impulse_train_period_five_peaks():
    s = np.zeros(60)
    s[::5] = 1
    acf = autocorrelate(s)
    peaks = acf_peaks(acf)
    assert peaks[:3] == [5, 10, 15]
    top = sorted(peaks, key=lambda k: -acf[k])[:3]
    assert sorted(top) == [5, 10, 15]


def test_period_six_train_is_periodic():
    s = np.zeros(60)
    s[::6] = 1
    assert detect_periodicity(autocorrelate(s), CFG) == (True, 6)


def test_single_retained_peak_is_not_periodic():
    acf = np.array([1.0, 0.1, 0.9, 0.1, 0.2, 0.1])
    assert detect_periodicity(acf, CFG) == (False, None)


def test_plateau_reports_first_lag():
    assert acf_peaks([1.0, 0.2, 0.5, 0.5, 0.1, 0.0]) == [2]


def test_random_arrivals_are_not_periodic():
    rng = np.random.default_rng(7)
    ts = np.sort(rng.uniform(0, 60, 20))
    assert not timestamps_periodic(ts, CFG, 60).periodic


def test_weak_acf_peaks_are_not_periodic():
    # Kept peaks at lags 10 and 20 are evenly spaced, but too low to be a beacon.
    acf = np.array([1.0] + [0.0] * 9 + [0.3] + [0.0] * 9 + [0.25] + [0.0] * 9)
    assert detect_periodicity(acf, CFG) == (False, None)
    assert detect_periodicity(acf, PeriodicityConfig(min_peak_height=0.0)) == (True, 10)


def test_jittered_beacon_seed_three_is_periodic():
    pk = gen_cnc(5.0, 0.2, "203.0.113.66", HOST, 60, seed=3)
    assert timestamps_periodic([p.timestamp for p in pk], CFG, 60).periodic


def test_check_cnc_picks_beacon_server_among_chatter():
    prof = TrafficProfile()
    traffic = gen_benign(prof, DEFAULT_TOPOLOGY, 300, seed=11, start=0.0, hosts=(HOST,), login_pairs=())
    traffic.packets += gen_cnc(5.0, 0.2, "203.0.113.66", HOST, 300, seed=11, start=1.0)
    pkts = sorted((p for p in traffic.packets if HOST in (p.src_ip, p.dst_ip)), key=lambda p: p.timestamp)
    det = check_cnc_stage(HOST, split_windows(pkts, HOST, 60), INV, CFG)
    assert det.detected and det.extras["cnc_server_ip"] == "203.0.113.66"
    beacon_ts = [p.timestamp for p in pkts if p.dst_ip == "203.0.113.66"]
    assert det.time_det == beacon_ts[0]
    assert det.time_det in det.evidence["timestamps"]


def test_check_cnc_benign_host_not_detected():
    traffic = gen_benign(TrafficProfile(), DEFAULT_TOPOLOGY, 600, seed=4, start=0.0, hosts=(HOST,), login_pairs=())
    pkts = [p for p in traffic.sorted().packets if HOST in (p.src_ip, p.dst_ip)]
    det = check_cnc_stage(HOST, split_windows(pkts, HOST, 60), INV, CFG)
    assert not det.detected and det.score == 0.0


def test_too_few_public_packets():
    w = _window([_udp(t, "8.8.4.4") for t in (0, 5, 10)])
    assert not check_cnc_stage(HOST, [w], INV, CFG).detected


def test_config_validation():
    with pytest.raises(AptError):
        PeriodicityConfig(min_peak_fraction=0)
    with pytest.raises(AptError):
        PeriodicityConfig(sampling_frequency=0)
    with pytest.raises(AptError):
        PeriodicityConfig(phase_offsets=(1.0,))


_signals = st.lists(st.integers(0, 1), min_size=2, max_size=120).filter(lambda s: 0 < sum(s) < len(s))


@given(_signals)
def test_acf_lag_zero_is_unit_global_maximum(signal):
    acf = autocorrelate(signal)
    assert acf[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(acf[1:] <= acf[0] + 1e-12)


@given(st.integers(min_value=8, max_value=240), st.data())
def test_impulse_train_detected_with_its_period(length, data):
    period = data.draw(st.integers(min_value=2, max_value=max(2, length // 4)))
    s = np.zeros(length)
    s[::period] = 1
    assert detect_periodicity(autocorrelate(s), CFG) == (True, period)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.45), st.floats(2.0, 12.0))
def test_tcp_and_udp_beacons_give_same_verdict(seed, jitter_frac, period):
    rng = rng_for(seed, "mix")
    udp = gen_cnc(period, jitter_frac * period / 2 * 0.99, "203.0.113.66", HOST, 180, seed, start=0.0)
    tcp = [PacketRecord(p.timestamp, p.src_ip, p.dst_ip, 41000, 443, Protocol.TCP, TcpFlags.PSH | TcpFlags.ACK,
                        p.payload_len, 40 + p.payload_len) for p in udp]
    noise = [_udp(float(t), "198.51.100.10") for t in np.sort(rng.uniform(0, 180, 6))]
    a = check_cnc_stage(HOST, split_windows(sorted(udp + noise, key=lambda p: p.timestamp), HOST, 60), INV, CFG)
    b = check_cnc_stage(HOST, split_windows(sorted(tcp + noise, key=lambda p: p.timestamp), HOST, 60), INV, CFG)
    assert (a.detected, a.time_det, a.dst_ips, a.score) == (b.detected, b.time_det, b.dst_ips, b.score)


@given(st.integers(0, 2**31 - 1))
def test_check_cnc_is_deterministic(seed):
    pk = gen_cnc(5.0, 0.2, "203.0.113.66", HOST, 120, seed, start=0.0)
    ws = split_windows(pk, HOST, 60)
    assert check_cnc_stage(HOST, ws, INV, CFG) == check_cnc_stage(HOST, ws, INV, CFG)
