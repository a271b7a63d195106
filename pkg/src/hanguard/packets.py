from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .control_proto import FlowId


class Zone(Enum):
    LAN = "lan"
    WAN_IN = "wan-in"
    WAN_OUT = "wan-out"


class PacketKind(Enum):
    DATA = "data"
    REPLY = "reply"
    FIN = "fin"


@dataclass(frozen=True)
class Packet:
    """A data-plane packet at flow granularity; payloads are not modeled.

    ``app_id`` and ``seq`` are simulator bookkeeping. The router never reads
    them; only the per-app tunnel on the phone may use ``app_id``.
    """

    src_mac: str
    dst_mac: str
    flow: FlowId
    kind: PacketKind = PacketKind.DATA
    app_id: str = ""
    seq: int = 0
    zone: Zone = Zone.LAN

    @property
    def src_ip(self) -> str:
        return str(self.flow.src_ip)

    @property
    def dst_ip(self) -> str:
        return str(self.flow.dst_ip)

    def reply(self, src_mac: str, dst_mac: str) -> "Packet":
        f = self.flow
        back = FlowId(f.dst_ip, f.dst_port, f.src_ip, f.src_port, f.protocol)
        zone = {Zone.WAN_IN: Zone.WAN_OUT, Zone.WAN_OUT: Zone.WAN_IN}.get(self.zone, Zone.LAN)
        return replace(self, src_mac=src_mac, dst_mac=dst_mac, flow=back, kind=PacketKind.REPLY, zone=zone)
