"""Rendering and parsing of the ``/proc/net/{tcp,tcp6,udp,udp6}`` line subset.

Linux prints each 32-bit address word in host (little-endian) byte order as
8 hex digits, and ports big-endian as 4 hex digits. IPv4 peers of an IPv6
socket show up IPv4-mapped in the ``*6`` files.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from enum import IntEnum

from .control_proto import FlowId, IPAddress, Protocol

MAPPED_PREFIX = "0000000000000000FFFF0000"

HEADER = {
    False: "  sl  local_address rem_address   st tx_queue rx_queue tr tm->when retrnsmt   uid  timeout inode",
    True: "  sl  local_address                         remote_address                        st tx_queue rx_queue tr tm->when retrnsmt   uid  timeout inode",
}

FILE_NAMES = ("tcp", "tcp6", "udp", "udp6")


class TcpState(IntEnum):
    ESTABLISHED = 0x01
    SYN_SENT = 0x02
    SYN_RECV = 0x03
    FIN_WAIT1 = 0x04
    FIN_WAIT2 = 0x05
    TIME_WAIT = 0x06
    CLOSE = 0x07
    CLOSE_WAIT = 0x08
    LAST_ACK = 0x09
    LISTEN = 0x0A
    CLOSING = 0x0B


CLOSING_STATES = frozenset(
    {
        TcpState.FIN_WAIT1,
        TcpState.FIN_WAIT2,
        TcpState.TIME_WAIT,
        TcpState.CLOSE,
        TcpState.CLOSE_WAIT,
        TcpState.LAST_ACK,
        TcpState.CLOSING,
    }
)


class ProcParseError(ValueError):
    def __init__(self, column: int, message: str):
        super().__init__(f"column {column}: {message}")
        self.column = column


class NotMapped(ValueError):
    """The 32-digit address is native IPv6, not IPv4-mapped."""


def _hex(text: str, width: int) -> bytes:
    if len(text) != width:
        raise ValueError(f"expected {width} hex digits, got {len(text)}: {text!r}")
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise ValueError(f"not hex: {text!r}") from None


def hex_to_ipv4(hex8: str) -> ipaddress.IPv4Address:
    return ipaddress.IPv4Address(_hex(hex8, 8)[::-1])


def hex_to_ipv6(hex32: str) -> ipaddress.IPv6Address:
    raw = _hex(hex32, 32)
    return ipaddress.IPv6Address(b"".join(raw[i : i + 4][::-1] for i in range(0, 16, 4)))


def mapped6_to_ipv4(hex32: str) -> ipaddress.IPv4Address:
    _hex(hex32, 32)
    if hex32[:24].upper() != MAPPED_PREFIX:
        raise NotMapped(hex32)
    return hex_to_ipv4(hex32[24:])


def ipv4_to_hex(addr) -> str:
    return ipaddress.IPv4Address(addr).packed[::-1].hex().upper()


def ipv6_to_hex(addr) -> str:
    packed = ipaddress.IPv6Address(addr).packed
    return "".join(packed[i : i + 4][::-1].hex() for i in range(0, 16, 4)).upper()


def address_to_hex(addr: IPAddress, six: bool) -> str:
    if six:
        if isinstance(addr, ipaddress.IPv4Address):
            return MAPPED_PREFIX + ipv4_to_hex(addr)
        return ipv6_to_hex(addr)
    if not isinstance(addr, ipaddress.IPv4Address):
        raise ValueError(f"{addr} cannot appear in a v4 procfs file")
    return ipv4_to_hex(addr)


def hex_to_address(text: str) -> IPAddress:
    if len(text) == 8:
        return hex_to_ipv4(text)
    try:
        return mapped6_to_ipv4(text)
    except NotMapped:
        return hex_to_ipv6(text)


@dataclass(frozen=True)
class ProcNetLine:
    slot: int
    local_ip: IPAddress
    local_port: int
    remote_ip: IPAddress
    remote_port: int
    state: int
    uid: int

    @property
    def local(self) -> tuple[IPAddress, int]:
        return self.local_ip, self.local_port

    @property
    def remote(self) -> tuple[IPAddress, int]:
        return self.remote_ip, self.remote_port

    def flow(self, protocol: Protocol) -> FlowId:
        return FlowId(self.local_ip, self.local_port, self.remote_ip, self.remote_port, protocol)


def _endpoint(text: str, column: int) -> tuple[IPAddress, int]:
    addr, sep, port = text.partition(":")
    if not sep:
        raise ProcParseError(column, f"expected ADDR:PORT, got {text!r}")
    if len(addr) not in (8, 32):
        raise ProcParseError(column, f"address must be 8 or 32 hex digits, got {len(addr)}")
    try:
        return hex_to_address(addr), int.from_bytes(_hex(port, 4), "big")
    except ValueError as exc:
        raise ProcParseError(column, str(exc)) from None


def parse_line(text: str) -> ProcNetLine:
    cols = text.split()
    if len(cols) < 10:
        raise ProcParseError(len(cols), f"expected at least 10 columns, got {len(cols)}")
    slot_text = cols[0]
    if not slot_text.endswith(":") or not slot_text[:-1].isdigit():
        raise ProcParseError(0, f"bad slot {slot_text!r}")
    local_ip, local_port = _endpoint(cols[1], 1)
    remote_ip, remote_port = _endpoint(cols[2], 2)
    if len(cols[1]) != len(cols[2]):
        raise ProcParseError(2, "local and remote address widths differ")
    try:
        state = _hex(cols[3], 2)[0]
    except ValueError as exc:
        raise ProcParseError(3, str(exc)) from None
    if not cols[7].isdigit():
        raise ProcParseError(7, f"bad uid {cols[7]!r}")
    return ProcNetLine(int(slot_text[:-1]), local_ip, local_port, remote_ip, remote_port, state, int(cols[7]))


def render_line(flow: FlowId, uid: int, state: int, slot: int = 0, six: bool = False) -> str:
    local = f"{address_to_hex(flow.src_ip, six)}:{flow.src_port:04X}"
    remote = f"{address_to_hex(flow.dst_ip, six)}:{flow.dst_port:04X}"
    # Columns after uid are filler: timeout, inode, refcount, sk pointer, etc.
    return (
        f"{slot:4d}: {local} {remote} {state:02X} 00000000:00000000 00:00000000 00000000 "
        f"{uid:5d}        0 {100000 + slot} 1 0000000000000000 100 0 0 10 0"
    )


@dataclass
class ProcFile:
    """One simulated procfs table. ``mtime`` moves exactly when content does."""

    name: str
    entries: list[tuple[FlowId, int, int]] = field(default_factory=list)
    mtime: int = 0

    @property
    def six(self) -> bool:
        return self.name.endswith("6")

    @property
    def protocol(self) -> Protocol:
        return Protocol.TCP if self.name.startswith("tcp") else Protocol.UDP

    @property
    def lines(self) -> list[str]:
        return [render_line(f, uid, st, slot, self.six) for slot, (f, uid, st) in enumerate(self.entries)]

    def text(self) -> str:
        return "\n".join([HEADER[self.six], *self.lines]) + "\n"

    def write(self, entries: list[tuple[FlowId, int, int]], now: int) -> bool:
        if entries == self.entries:
            return False
        self.entries = list(entries)
        # Strictly increasing, so two writes in one tick stay distinguishable.
        self.mtime = max(now, self.mtime + 1)
        return True

    def upsert(self, flow: FlowId, uid: int, state: int, now: int) -> bool:
        entries = [e for e in self.entries if e[0] != flow]
        idx = next((i for i, e in enumerate(self.entries) if e[0] == flow), len(entries))
        entries.insert(idx, (flow, uid, state))
        return self.write(entries, now)

    def remove(self, flow: FlowId, now: int) -> bool:
        return self.write([e for e in self.entries if e[0] != flow], now)


def parse_table(text: str) -> tuple[list[ProcNetLine], list[tuple[int, str]]]:
    """Parse a whole file; returns rows and ``(lineno, error)`` pairs. The header is skipped."""
    rows, errors = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("sl"):
            continue
        try:
            rows.append(parse_line(line))
        except ProcParseError as exc:
            errors.append((lineno, str(exc)))
    return rows, errors
