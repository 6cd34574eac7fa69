import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aptgraph.config import DetectorConfig
from aptgraph.features import FeatureStage
from aptgraph.ingest import split_windows
from aptgraph.ml import Dataset, ModelKind, train_pipeline
from aptgraph.model import (
    AptError,
    AuthLoginEvent,
    CeEndpoint,
    CeProtocol,
    DataSource,
    IdsAlert,
    LoginMethod,
    ScanType,
    ScoreConfig,
    StageDetection,
    StageHint,
    StageKind,
)
from aptgraph.scenario import (
    BASE_EPOCH,
    DEFAULT_TOPOLOGY,
    FieldbusMode,
    TrafficProfile,
    discovery_windows,
    gen_benign,
    gen_fieldbus_scan,
    gen_scan,
    tcp_packet,
)
from aptgraph.stages import (
    AggregateScore,
    SourceVerdict,
    aggregate_score,
    check_ce_comm_stage,
    check_discovery_stage,
    check_fieldbus_scan_stage,
    check_lateral_movement_stage,
    detections_from_jsonl,
    detections_to_jsonl,
    score_stage,
)
from helpers import asdc_on
from oracles import weighted_score

TOPO = DEFAULT_TOPOLOGY
INV = TOPO.inventory()
CFG = DetectorConfig()
M, GW = TOPO.maintenance, TOPO.gateway
T0 = BASE_EPOCH

SECONDARY_SOURCES = (DataSource.IDS_ALERTS, DataSource.AUTH_LOGS)


def aggregate_sweep():
    """Every (d_opt, d_1, d_2) in {0,1}^3 with weights 0.5/0.25/0.25 against hand arithmetic.

    Returns (case, got, expected) triples.
    """
    cfg = ScoreConfig(tau=0.5)
    rows = []
    for d_opt, d1, d2 in itertools.product((0, 1), repeat=3):
        vs = [SourceVerdict(DataSource.TRAFFIC, True, d_opt, 0.5),
              SourceVerdict(SECONDARY_SOURCES[0], False, d1, 0.25),
              SourceVerdict(SECONDARY_SOURCES[1], False, d2, 0.25)]
        want_da = weighted_score(0.5, d_opt, [(0.25, d1), (0.25, d2)])
        rows.append(((d_opt, d1, d2), aggregate_score(vs, cfg), AggregateScore(want_da, 0.5, want_da >= 0.5)))
    return rows


def test_aggregate_sweep_matches_hand_values():
    rows = aggregate_sweep()
    assert len(rows) == 8
    for case, got, want in rows:
        assert got == want, case
    hand = {(0, 0, 0): 0.0, (0, 0, 1): 0.25, (0, 1, 1): 0.5, (1, 0, 0): 0.5, (1, 1, 1): 1.0}
    for case, got, _ in rows:
        if case in hand:
            assert got.d_a == hand[case]


def test_optimal_only():
    got = aggregate_score([SourceVerdict(DataSource.TRAFFIC, True, 1, 0.5)], ScoreConfig())
    assert got == AggregateScore(1.0, 0.5, True)


def test_secondary_alone_is_not_enough():
    got = score_stage(StageKind.DISCOVERY, {DataSource.TRAFFIC: False, DataSource.IDS_ALERTS: True}, ScoreConfig())
    assert got.d_a == pytest.approx(0.25 / 0.75) and not got.detected


def test_optimal_without_secondary_support():
    got = score_stage(StageKind.DISCOVERY, {DataSource.TRAFFIC: True, DataSource.IDS_ALERTS: False}, ScoreConfig())
    assert got.d_a == pytest.approx(0.5 / 0.75) and got.detected


def test_verdict_errors():
    with pytest.raises(AptError) as e:
        aggregate_score([SourceVerdict(DataSource.TRAFFIC, False, 1, 0.25)], ScoreConfig())
    assert e.value.code == "NO_OPTIMAL_SOURCE"
    with pytest.raises(AptError) as e:
        aggregate_score([SourceVerdict(DataSource.TRAFFIC, True, 1, 0.5),
                         SourceVerdict(DataSource.IDS_ALERTS, False, 1, 0.5)], ScoreConfig())
    assert e.value.code == "WEIGHT_ORDER_VIOLATION"
    with pytest.raises(AptError):
        SourceVerdict(DataSource.TRAFFIC, True, 2, 0.5)


_w = st.floats(min_value=0.01, max_value=10.0, allow_nan=False)


@st.composite
def _verdicts(draw):
    w_opt = draw(_w)
    n = draw(st.integers(0, 2))
    secondary = [(draw(st.floats(min_value=w_opt * 0.01, max_value=w_opt * 0.99)), draw(st.integers(0, 1)))
                 for _ in range(n)]
    return (w_opt, draw(st.integers(0, 1))), secondary


def _build(opt, secondary, scale=1.0):
    return ([SourceVerdict(DataSource.TRAFFIC, True, opt[1], opt[0] * scale)]
            + [SourceVerdict(SECONDARY_SOURCES[i], False, d, w * scale) for i, (w, d) in enumerate(secondary)])


@given(_verdicts(), st.floats(min_value=0.01, max_value=100.0))
def test_aggregate_score_is_scale_invariant(vs, c):
    opt, secondary = vs
    a = aggregate_score(_build(opt, secondary), ScoreConfig()).d_a
    b = aggregate_score(_build(opt, secondary, c), ScoreConfig()).d_a
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@given(_verdicts())
def test_aggregate_score_bounds(vs):
    opt, secondary = vs
    d_a = aggregate_score(_build(opt, secondary), ScoreConfig()).d_a
    ds = [opt[1]] + [d for _, d in secondary]
    assert 0.0 <= d_a <= 1.0
    assert (d_a == 1.0) == all(ds)
    assert (d_a == 0.0) == (not any(ds))


# Discovery ---------------------------------------------------------------


def test_campaign_one_discovery_targets(campaigns, stage_models):
    b = campaigns[1]
    det = check_discovery_stage(M, b.windows()[M], stage_models[0], b.alerts, CFG, INV)
    assert det.detected and det.extras["scan_type"] is ScanType.NORMAL
    assert {GW, TOPO.broker, TOPO.web_api} <= set(det.extras["list_target_host_IPs"])
    assert det.time_det in det.evidence["timestamps"]


def _benign_windows(host, span=900.0, seed=2):
    traffic = gen_benign(TrafficProfile(), TOPO, span, seed, start=T0, hosts=(host,), login_pairs=())
    return traffic, [p for p in traffic.sorted().packets if host in (p.src_ip, p.dst_ip)]


def test_benign_traffic_with_one_alert_is_not_discovery(stage_models):
    _, pkts = _benign_windows(M)
    alert = IdsAlert(T0 + 100.0, 2000001, M, GW, StageHint.DISCOVERY)
    det = check_discovery_stage(M, split_windows(pkts, M, 60), stage_models[0], [alert], CFG, INV)
    assert not det.detected and det.score == pytest.approx(0.25 / 0.75)


@pytest.fixture(scope="module")
def slow_model():
    ds = Dataset.from_vectors(discovery_windows(ScanType.SLOW, 300, 300, seed=3), FeatureStage.DISCOVERY)
    return train_pipeline(ds, ModelKind.RANDOM_FOREST, seed=0, k=5)[0]


def test_slow_scan_is_detected_as_slow(slow_model):
    _, pkts = _benign_windows(M)
    targets = [f"10.0.3.{i}" for i in range(1, 21)]
    pkts = sorted(pkts + gen_scan(ScanType.SLOW, M, targets, 2, seed=4, start=T0 + 60.0), key=lambda p: p.timestamp)
    det = check_discovery_stage(M, split_windows(pkts, M, 60), slow_model, [], CFG, INV)
    assert det.detected and det.extras["scan_type"] is ScanType.SLOW
    assert set(det.dst_ips) <= set(targets) and len(det.dst_ips) >= 10


# Lateral movement --------------------------------------------------------

DISC = StageDetection(StageKind.DISCOVERY, True, T0 + 100.0, M, (GW,), {}, 1.0, {"timestamps": (T0 + 100.0,)})


def _login(t, ok=True, src=M, dst=GW):
    return AuthLoginEvent(t, src, dst, "maint", ok, LoginMethod.SSH)


def test_login_after_discovery_is_lateral_movement():
    ssh = [tcp_packet(T0 + 200.1, M, 40000, GW, 22, 0x02)]
    det = check_lateral_movement_stage(M, GW, [_login(T0 + 200.0)], [DISC], split_windows(ssh, M, 60), CFG)
    assert det.detected and det.time_det == T0 + 200.0 and det.score == 1.0
    assert det.time_det in det.evidence["timestamps"]


def test_login_without_prior_stage_is_not_lateral_movement():
    det = check_lateral_movement_stage(M, GW, [_login(T0 + 200.0)], [], [], CFG)
    assert not det.detected
    early = check_lateral_movement_stage(M, GW, [_login(T0 + 50.0)], [DISC], [], CFG)
    assert not early.detected


def test_failed_logins_are_not_lateral_movement():
    det = check_lateral_movement_stage(M, GW, [_login(T0 + 200.0, ok=False)], [DISC], [], CFG)
    assert not det.detected


# Fieldbus scan -----------------------------------------------------------


def _gateway_with_scan(protocol, mode, passes=(120.0, 180.0, 240.0, 300.0)):
    _, pkts = _benign_windows(GW, span=600.0, seed=6)
    ce = TOPO.ce_for(protocol)
    for i, off in enumerate(passes):
        pkts += gen_fieldbus_scan(protocol, mode, GW, ce.ip, seed=10 + i, start=T0 + off, port=ce.port)
    return split_windows(sorted(pkts, key=lambda p: p.timestamp), GW, 60)


@pytest.mark.parametrize("protocol, mode", [(CeProtocol.MODBUS, FieldbusMode.AGGRESSIVE),
                                            (CeProtocol.S7, FieldbusMode.AGGRESSIVE)])
def test_fieldbus_scan_fixtures_are_detected(stage_models, protocol, mode):
    det = check_fieldbus_scan_stage(_gateway_with_scan(protocol, mode), stage_models[1], [], CFG, INV)
    assert det.detected and TOPO.ce_for(protocol).ip in det.dst_ips
    assert det.time_det in det.evidence["timestamps"]


def test_benign_polling_is_not_a_fieldbus_scan(stage_models):
    det = check_fieldbus_scan_stage(_gateway_with_scan(CeProtocol.MODBUS, FieldbusMode.AGGRESSIVE, passes=()),
                                    stage_models[1], [], CFG, INV)
    assert not det.detected


# CE communication --------------------------------------------------------

CE = CeEndpoint("192.168.50.10", 502, CeProtocol.MODBUS)
CE_INV = INV


def _session(t, cport, ce=CE, close=None):
    pk = [tcp_packet(t, GW, cport, ce.ip, ce.port, 0x02),
          tcp_packet(t + 0.01, ce.ip, ce.port, GW, cport, 0x12),
          tcp_packet(t + 0.02, GW, cport, ce.ip, ce.port, 0x10),
          tcp_packet(t + 0.5, GW, cport, ce.ip, ce.port, 0x18, 12),
          tcp_packet(t + 0.51, ce.ip, ce.port, GW, cport, 0x18, 20)]
    if close is not None:
        pk.append(tcp_packet(close, GW, cport, ce.ip, ce.port, 0x14))
    return pk


def _gw_windows(pkts):
    return split_windows(sorted(pkts, key=lambda p: p.timestamp), GW, 60)


def test_overlapping_connections_are_spoofing():
    det = check_ce_comm_stage(_gw_windows(_session(T0, 40001) + _session(T0 + 30, 40002)), CE_INV)
    assert det.detected and det.extras["condition"] == "concurrent"
    assert det.time_det == T0 + 30.02 and det.dst_ips == (CE.ip,)


def test_single_long_lived_connection_is_not_spoofing():
    pkts = _session(T0, 40001) + [tcp_packet(T0 + k, GW, 40001, CE.ip, CE.port, 0x18, 12) for k in range(2, 600, 2)]
    assert not check_ce_comm_stage(_gw_windows(pkts), CE_INV).detected


def test_reset_then_new_session_to_s7_is_spoofing():
    s7 = TOPO.ce_for(CeProtocol.S7)
    pkts = _session(T0, 40001, s7, close=T0 + 100.0) + _session(T0 + 200.0, 40002, s7)
    det = check_ce_comm_stage(_gw_windows(pkts), CE_INV)
    assert det.detected and det.extras == {"ce_port": 102, "condition": "reconnect"}
    assert det.time_det == T0 + 200.02


def test_trigger_before_not_before_is_ignored():
    pkts = _session(T0, 40001) + _session(T0 + 30, 40002)
    assert not check_ce_comm_stage(_gw_windows(pkts), CE_INV, not_before=T0 + 40).detected


def test_no_ce_endpoints():
    from dataclasses import replace

    with pytest.raises(AptError) as e:
        check_ce_comm_stage([], replace(INV, ce_endpoints=()))
    assert e.value.code == "NO_CE_ENDPOINTS"


@given(st.integers(0, 2**31 - 1))
def test_benign_gateway_never_looks_like_spoofing(seed):
    traffic = gen_benign(TrafficProfile(), TOPO, 600.0, seed, start=T0, hosts=(GW,), login_pairs=())
    pkts = [p for p in traffic.sorted().packets if GW in (p.src_ip, p.dst_ip)]
    assert not check_ce_comm_stage(split_windows(pkts, GW, 60), INV).detected


# Evidence ----------------------------------------------------------------


@pytest.mark.parametrize("cid", [1, 2, 3])
def test_detection_times_come_from_evidence(campaigns, stage_models, cid):
    res = asdc_on(campaigns[cid], stage_models)
    assert res.stages
    for s in res.stages:
        assert s.detected and s.time_det in s.evidence["timestamps"]


def test_detections_jsonl_round_trip(campaigns, stage_models):
    stages = asdc_on(campaigns[1], stage_models).stages
    back = detections_from_jsonl(detections_to_jsonl(stages))
    assert [(s.kind, s.time_det, s.src_ip, s.dst_ips) for s in back] == \
           [(s.kind, s.time_det, s.src_ip, s.dst_ips) for s in stages]
