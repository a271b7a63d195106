"""Framed binary codec for control-channel messages.

Frame: 4-byte big-endian payload length, then::

    msg_type(1) | credential_hash(32) | phone_mac(6) | src_ip(16) | src_port(2)
    | dst_ip(16) | dst_port(2) | protocol(1) | app_id_len(1) | app_id
    | app_sig(32) | policy_version(8) | flag(1) [| body_len(4) | body]

Integers are big-endian. IPv4 addresses travel IPv4-mapped. The trailing
body is present only for PolicyUpdate, PolicyPush (policy or delta text) and
Ack (empty, or the rejection reason).
"""

from __future__ import annotations

import hmac
import ipaddress
import struct
from dataclasses import dataclass
from enum import Enum, IntEnum

from .policy import Policy, mac_bytes, normalize_mac

IPAddress = ipaddress.IPv4Address | ipaddress.IPv6Address

_HEAD = struct.Struct(">B32s6s16sH16sHBB")
_TAIL = struct.Struct(">32sQB")
_LEN = struct.Struct(">I")
MAX_APP_ID = 255


class Protocol(IntEnum):
    TCP = 6
    UDP = 17


class MsgType(IntEnum):
    FLOW_DECISION = 1
    POLICY_UPDATE = 2
    POLICY_PUSH = 3
    ACK = 4
    VERSION_QUERY = 5


class Flag(IntEnum):
    INVALIDATE = 0
    VALIDATE = 1


class AuthResult(Enum):
    OK = "Ok"
    UNKNOWN_PHONE = "UnknownPhone"
    BAD_CREDENTIALS = "BadCredentials"
    CERT_MISMATCH = "CertMismatch"
    STALE_VERSION = "StaleVersion"


class EncodeError(ValueError):
    pass


class Malformed(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"malformed frame at byte {offset}: {message}")
        self.offset = offset


def as_ip(value) -> IPAddress:
    """Canonical address: IPv4-mapped IPv6 collapses to IPv4."""
    addr = ipaddress.ip_address(value)
    if isinstance(addr, ipaddress.IPv6Address) and addr.ipv4_mapped is not None:
        return addr.ipv4_mapped
    return addr


def pack_ip(addr: IPAddress) -> bytes:
    if isinstance(addr, ipaddress.IPv4Address):
        return b"\x00" * 10 + b"\xff\xff" + addr.packed
    return addr.packed


@dataclass(frozen=True, order=False)
class FlowId:
    src_ip: IPAddress
    src_port: int
    dst_ip: IPAddress
    dst_port: int
    protocol: Protocol = Protocol.TCP

    def __post_init__(self):
        object.__setattr__(self, "src_ip", as_ip(self.src_ip))
        object.__setattr__(self, "dst_ip", as_ip(self.dst_ip))
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 0xFFFF:
                raise ValueError(f"port out of range: {port}")

    def key(self) -> bytes:
        """Wire bytes of the 5-tuple; the lexicographic order used for tie-breaks."""
        return (
            pack_ip(self.src_ip)
            + self.src_port.to_bytes(2, "big")
            + pack_ip(self.dst_ip)
            + self.dst_port.to_bytes(2, "big")
            + bytes([self.protocol])
        )

    def __str__(self) -> str:
        return f"{self.protocol.name.lower()}:{self.src_ip}:{self.src_port}->{self.dst_ip}:{self.dst_port}"


NULL_FLOW = FlowId("0.0.0.0", 0, "0.0.0.0", 0, Protocol.TCP)


@dataclass(frozen=True)
class ControlMessage:
    msg_type: MsgType
    credential_hash: bytes
    phone_mac: str
    flow: FlowId = NULL_FLOW
    app_id: str = ""
    app_sig: bytes = bytes(32)
    policy_version: int = 0
    flag: Flag = Flag.VALIDATE
    body: str = ""


def _has_body(msg_type: int) -> bool:
    return msg_type in (MsgType.POLICY_UPDATE, MsgType.POLICY_PUSH, MsgType.ACK)


def encode(msg: ControlMessage) -> bytes:
    app_id = msg.app_id.encode("utf-8")
    if len(app_id) > MAX_APP_ID:
        raise EncodeError(f"app_id is {len(app_id)} bytes; limit is {MAX_APP_ID}")
    if len(msg.credential_hash) != 32 or len(msg.app_sig) != 32:
        raise EncodeError("credential hash and app signature must be 32 bytes")
    if not 0 <= msg.policy_version < 2**64:
        raise EncodeError("policy version out of range")
    if msg.body and not _has_body(msg.msg_type):
        raise EncodeError(f"{MsgType(msg.msg_type).name} carries no body")
    flow = msg.flow
    payload = (
        _HEAD.pack(
            MsgType(msg.msg_type),
            msg.credential_hash,
            mac_bytes(msg.phone_mac),
            pack_ip(flow.src_ip),
            flow.src_port,
            pack_ip(flow.dst_ip),
            flow.dst_port,
            flow.protocol,
            len(app_id),
        )
        + app_id
        + _TAIL.pack(msg.app_sig, msg.policy_version, Flag(msg.flag))
    )
    if _has_body(msg.msg_type):
        body = msg.body.encode("utf-8")
        payload += _LEN.pack(len(body)) + body
    return _LEN.pack(len(payload)) + payload


def decode(frame: bytes) -> ControlMessage:
    frame = bytes(frame)
    if len(frame) < _LEN.size:
        raise Malformed(0, "truncated length prefix")
    (length,) = _LEN.unpack_from(frame, 0)
    if len(frame) - _LEN.size < length:
        raise Malformed(len(frame), f"truncated frame: declared {length} payload bytes")
    if len(frame) - _LEN.size > length:
        raise Malformed(_LEN.size + length, "trailing data after frame")
    end = _LEN.size + length

    off = _LEN.size
    if end - off < _HEAD.size:
        raise Malformed(end, "truncated header")
    mtype, cred, mac, src, sport, dst, dport, proto, id_len = _HEAD.unpack_from(frame, off)
    if mtype not in MsgType._value2member_map_:
        raise Malformed(off, f"bad msg_type {mtype}")
    if proto not in Protocol._value2member_map_:
        raise Malformed(off + 75, f"bad protocol {proto}")
    off += _HEAD.size
    if end - off < id_len + _TAIL.size:
        raise Malformed(end, "truncated app_id or trailer")
    try:
        app_id = frame[off : off + id_len].decode("utf-8")
    except UnicodeDecodeError:
        raise Malformed(off, "app_id is not UTF-8") from None
    off += id_len
    sig, version, flag = _TAIL.unpack_from(frame, off)
    if flag not in Flag._value2member_map_:
        raise Malformed(off + _TAIL.size - 1, f"bad flag {flag}")
    off += _TAIL.size
    body = ""
    if _has_body(mtype):
        if end - off < _LEN.size:
            raise Malformed(end, "truncated body length")
        (blen,) = _LEN.unpack_from(frame, off)
        off += _LEN.size
        if end - off != blen:
            raise Malformed(off, f"body length {blen} does not match {end - off} remaining bytes")
        try:
            body = frame[off:end].decode("utf-8")
        except UnicodeDecodeError:
            raise Malformed(off, "body is not UTF-8") from None
        off = end
    if off != end:
        raise Malformed(off, "length mismatch: payload longer than its fields")
    flow = FlowId(
        ipaddress.IPv6Address(src), sport, ipaddress.IPv6Address(dst), dport, Protocol(proto)
    )
    return ControlMessage(
        MsgType(mtype), cred, normalize_mac(mac), flow, app_id, sig, version, Flag(flag), body
    )


def authenticate(
    msg: ControlMessage, channel_cert: str, policy: Policy, check_version: bool = True
) -> AuthResult:
    """Checks run in order and the first failure is reported.

    ``check_version=False`` is for version queries and policy pulls, which a
    Monitor with a stale replica must still be able to send.
    """
    phone = policy.phones.get(normalize_mac(msg.phone_mac))
    if phone is None:
        return AuthResult.UNKNOWN_PHONE
    if not hmac.compare_digest(phone.credential_hash, msg.credential_hash):
        return AuthResult.BAD_CREDENTIALS
    if channel_cert != phone.cert_id:
        return AuthResult.CERT_MISMATCH
    if check_version and msg.policy_version != policy.version:
        return AuthResult.STALE_VERSION
    return AuthResult.OK
