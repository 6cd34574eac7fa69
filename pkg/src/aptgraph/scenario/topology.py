"""Addresses of the simulated plant network and the inventory derived from them."""

from __future__ import annotations

from dataclasses import dataclass

from ..model import AptError, CeEndpoint, CeProtocol, HostInventory, validate_inventory

# Capture clocks start here so timestamps look like real epoch seconds.
BASE_EPOCH = 1_700_000_000.0


@dataclass(frozen=True)
class Topology:
    """Who is who on the simulated network.

    The first internet-facing host is the maintenance workstation (campaign entry
    point), the second serves the external web API, and any others are operator
    workstations.
    """

    internet_facing: tuple[str, ...]
    gateway: str
    ce_endpoints: tuple[CeEndpoint, ...]
    resolver: str = "10.0.1.1"
    broker: str = "10.0.2.5"
    cnc_server: str = "203.0.113.66"
    vpn_server: str = "198.51.100.200"
    public_servers: tuple[str, ...] = tuple(f"198.51.100.{i}" for i in range(10, 30))
    private_ranges: tuple[str, ...] = ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16")
    ce_subnets: tuple[str, ...] = ()

    @property
    def maintenance(self) -> str:
        return self.internet_facing[0]

    @property
    def web_api(self) -> str:
        return self.internet_facing[1] if len(self.internet_facing) > 1 else self.internet_facing[0]

    @property
    def operators(self) -> tuple[str, ...]:
        return self.internet_facing[2:]

    @property
    def admin_host(self) -> str:
        """Host whose staff log into the gateway during normal operations."""
        return self.operators[0] if self.operators else self.web_api

    def ce_for(self, protocol: CeProtocol) -> CeEndpoint:
        for e in self.ce_endpoints:
            if e.protocol is protocol:
                return e
        return self.ce_endpoints[0]

    def public_servers_for(self, host: str, k: int = 6) -> tuple[str, ...]:
        hosts = list(self.internet_facing) + [self.gateway]
        i = hosts.index(host) if host in hosts else 0
        n = len(self.public_servers)
        return tuple(self.public_servers[(k * i + j) % n] for j in range(min(k, n)))

    def capture_hosts(self) -> tuple[str, ...]:
        return (*self.internet_facing, self.gateway)

    def inventory(self) -> HostInventory:
        return HostInventory(
            internet_facing_hosts=self.internet_facing,
            edge_gateway_ip=self.gateway,
            ce_endpoints=self.ce_endpoints,
            vpn_server_ip=self.vpn_server,
            private_ranges=self.private_ranges,
            ce_subnets=self.ce_subnets,
        )

    @classmethod
    def from_inventory(cls, inv: HostInventory, **infra) -> "Topology":
        validate_inventory(inv)
        if not inv.internet_facing_hosts:
            raise AptError("BAD_INVENTORY", "need at least one internet-facing host")
        if not inv.ce_endpoints:
            raise AptError("BAD_INVENTORY", "need at least one CE endpoint")
        if inv.vpn_server_ip is not None:
            infra.setdefault("vpn_server", inv.vpn_server_ip)
        return cls(
            internet_facing=tuple(inv.internet_facing_hosts),
            gateway=inv.edge_gateway_ip,
            ce_endpoints=tuple(inv.ce_endpoints),
            private_ranges=tuple(inv.private_ranges),
            ce_subnets=tuple(inv.ce_subnets),
            **infra,
        )


DEFAULT_TOPOLOGY = Topology(
    internet_facing=("10.0.1.10", "10.0.1.20", "10.0.1.30"),
    gateway="10.0.2.1",
    ce_endpoints=(
        CeEndpoint("192.168.50.10", 502, CeProtocol.MODBUS),
        CeEndpoint("192.168.50.11", 20000, CeProtocol.DNP3),
        CeEndpoint("192.168.50.12", 102, CeProtocol.S7),
    ),
)


def default_inventory() -> HostInventory:
    return DEFAULT_TOPOLOGY.inventory()
