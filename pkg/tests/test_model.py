import pytest
from hypothesis import given
from hypothesis import strategies as st

from aptgraph.model import (
    STAGE_ORDER,
    AptError,
    CeEndpoint,
    CeProtocol,
    DataSource,
    HostInventory,
    IasmState,
    InventoryError,
    PacketRecord,
    Protocol,
    ScanType,
    ScoreConfig,
    StageDetection,
    StageKind,
    TcpFlags,
    iasm_conclude,
    iasm_enter,
    iasm_next,
    validate_inventory,
)
from aptgraph.scenario import gen_campaign

S, K = IasmState, StageKind


def _inv(**kw):
    base = dict(
        internet_facing_hosts=("10.0.1.10", "10.0.1.20"),
        edge_gateway_ip="10.0.2.1",
        ce_endpoints=(CeEndpoint("192.168.50.10", 502, CeProtocol.MODBUS),),
        vpn_server_ip="198.51.100.200",
    )
    base.update(kw)
    return HostInventory(**base)


def test_packet_record_rejects_negative_time_and_udp_flags():
    with pytest.raises(ValueError):
        PacketRecord(-1.0, "10.0.0.1", "10.0.0.2", 1, 2, Protocol.TCP)
    with pytest.raises(ValueError):
        PacketRecord(0.0, "10.0.0.1", "10.0.0.2", 1, 2, Protocol.UDP, TcpFlags.SYN)
    with pytest.raises(ValueError):
        PacketRecord(0.0, "10.0.0.1", "10.0.0.2", 1, 2, Protocol.UDP, payload_len=30, total_len=20)


def test_syn_and_synack_predicates():
    syn = PacketRecord(1.0, "10.0.0.1", "10.0.0.2", 40000, 80, Protocol.TCP, TcpFlags.SYN, 0, 40)
    synack = PacketRecord(1.1, "10.0.0.2", "10.0.0.1", 80, 40000, Protocol.TCP, TcpFlags.SYN | TcpFlags.ACK, 0, 40)
    assert syn.is_syn and not syn.is_synack
    assert synack.is_synack and not synack.is_syn
    assert syn.peer_of("10.0.0.1") == "10.0.0.2"


def test_five_stage_kinds_in_kill_chain_order():
    assert [k.value for k in STAGE_ORDER] == ["CNC", "DISCOVERY", "LATERAL_MOVEMENT", "FIELDBUS_SCAN", "CE_SPOOF"]


def test_stage_detection_round_trips_through_dict():
    s = StageDetection(K.DISCOVERY, True, 12.5, "10.0.1.10", ("10.0.1.1", "10.0.2.1"),
                       {"scan_type": ScanType.SLOW, "list_target_host_IPs": ("10.0.1.1", "10.0.2.1")},
                       0.75, {"timestamps": (12.5,)})
    back = StageDetection.from_dict(s.to_dict())
    assert back.extras["scan_type"] is ScanType.SLOW
    assert back.extras["list_target_host_IPs"] == ("10.0.1.1", "10.0.2.1")
    assert back.dst_ips == s.dst_ips and back.score == s.score and back.time_det == s.time_det


def test_stage_detection_score_bounds():
    with pytest.raises(ValueError):
        StageDetection(K.CNC, True, 1.0, "10.0.0.1", score=1.5)
    with pytest.raises(ValueError):
        StageDetection(K.CNC, True, -1.0, "10.0.0.1")


def test_score_config_defaults_and_weights():
    cfg = ScoreConfig()
    assert (cfg.w_opt, cfg.tau) == (0.5, 0.5)
    assert cfg.weight(K.DISCOVERY, DataSource.TRAFFIC) == 0.5
    assert cfg.weight(K.DISCOVERY, DataSource.IDS_ALERTS) == 0.25
    assert cfg.weight(K.LATERAL_MOVEMENT, DataSource.AUTH_LOGS) == 0.5
    assert cfg.weight(K.LATERAL_MOVEMENT, DataSource.TRAFFIC) == 0.25


def test_score_config_rejects_secondary_at_or_above_optimal():
    with pytest.raises(AptError) as e:
        ScoreConfig(w_opt=0.5, secondary_weights={(K.DISCOVERY, DataSource.IDS_ALERTS): 0.5})
    assert e.value.code == "WEIGHT_ORDER_VIOLATION"
    with pytest.raises(AptError) as e:
        ScoreConfig(tau=0.0)
    assert e.value.code == "BAD_THRESHOLD"
    with pytest.raises(AptError) as e:
        ScoreConfig(w_opt=1.5)
    assert e.value.code == "BAD_WEIGHT"


_weights = st.floats(min_value=0.0, max_value=1.2, allow_nan=False)


@given(w_opt=_weights, secondary=st.lists(_weights, min_size=0, max_size=3))
def test_accepted_score_configs_keep_optimal_weight_on_top(w_opt, secondary):
    keys = [(K.DISCOVERY, DataSource.IDS_ALERTS), (K.FIELDBUS_SCAN, DataSource.IDS_ALERTS),
            (K.LATERAL_MOVEMENT, DataSource.TRAFFIC)]
    weights = dict(zip(keys, secondary))
    try:
        cfg = ScoreConfig(w_opt=w_opt, secondary_weights=weights)
    except AptError:
        return
    if cfg.secondary_weights:
        assert min(cfg.w_opt - w for w in cfg.secondary_weights.values()) > 0


def test_public_excludes_private_ranges_and_vpn():
    inv = _inv()
    assert inv.is_public("8.8.4.4")
    assert not inv.is_public("10.9.9.9")
    assert not inv.is_public("192.168.1.1")
    assert not inv.is_public("198.51.100.200")
    assert inv.is_public("198.51.100.201")


def test_fieldbus_network_defaults_to_ce_slash24():
    inv = _inv()
    assert inv.in_fieldbus_network("192.168.50.77")
    assert not inv.in_fieldbus_network("192.168.51.10")
    assert _inv(ce_subnets=("192.168.0.0/16",)).in_fieldbus_network("192.168.51.10")


def test_inventory_dict_round_trip():
    inv = _inv(ce_subnets=("192.168.50.0/24",))
    assert HostInventory.from_dict(inv.to_dict()) == inv


def test_validate_inventory_edge_in_facing_set():
    with pytest.raises(InventoryError) as e:
        validate_inventory(_inv(internet_facing_hosts=("10.0.1.10", "10.0.2.1")))
    assert e.value.code == "EDGE_IN_FACING_SET"


def test_validate_inventory_empty_facing_set():
    with pytest.raises(InventoryError) as e:
        validate_inventory(_inv(internet_facing_hosts=()))
    assert e.value.code == "EMPTY_FACING_SET"


def test_validate_inventory_lists_every_violation():
    bad = _inv(private_ranges=("10.0.0.0/33",), ce_endpoints=(CeEndpoint("192.168.50.10", 70000),))
    with pytest.raises(InventoryError) as e:
        validate_inventory(bad)
    codes = {c for c, _ in e.value.violations}
    assert codes == {"BAD_CIDR", "BAD_PORT"}


def test_generated_campaign_inventory_is_valid():
    inv = gen_campaign(1, seed=42).inventory
    assert validate_inventory(inv) is inv


def test_iasm_examples():
    assert iasm_next(S.INFECTED_ENTRY_HOST, K.CNC, False) is S.ESTABLISH_FOOTHOLD
    assert iasm_next(S.INFECTED_NEW_HOST, K.LATERAL_MOVEMENT, False) is S.INFECTED_NEW_HOST
    with pytest.raises(AptError) as e:
        iasm_next(S.ESTABLISH_FOOTHOLD, K.CE_SPOOF, False)
    assert e.value.code == "ILLEGAL_TRANSITION"


def test_iasm_lateral_movement_into_gateway():
    assert iasm_next(S.ESTABLISH_FOOTHOLD, K.LATERAL_MOVEMENT, True) is S.INFECTED_EDGE_GATEWAY
    assert iasm_next(S.INFECTED_NEW_HOST, K.LATERAL_MOVEMENT, True) is S.INFECTED_EDGE_GATEWAY


def test_iasm_enter_and_conclude():
    assert iasm_enter() is S.INFECTED_ENTRY_HOST
    with pytest.raises(AptError):
        iasm_enter(S.ESTABLISH_FOOTHOLD)
    done = iasm_conclude(S.INFECTED_NEW_HOST)
    with pytest.raises(AptError):
        iasm_next(done, K.CNC)


def test_iasm_has_a_full_path_using_every_stage():
    state = iasm_enter()
    path = [(K.CNC, False), (K.DISCOVERY, False), (K.LATERAL_MOVEMENT, False), (K.DISCOVERY, False),
            (K.LATERAL_MOVEMENT, True), (K.FIELDBUS_SCAN, False), (K.CE_SPOOF, False), (K.CE_SPOOF, False)]
    for stage, gw in path:
        state = iasm_next(state, stage, gw)
    assert state is S.EXECUTE_CE_COMMANDS
    assert {k for k, _ in path} == set(StageKind)


@given(st.sampled_from(list(IasmState)), st.sampled_from(list(StageKind)), st.booleans())
def test_iasm_next_is_pure(state, stage, gw):
    def attempt():
        try:
            return iasm_next(state, stage, gw)
        except AptError as exc:
            return exc.code

    assert attempt() == attempt()
