import ipaddress
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hanguard.control_proto import (
    AuthResult,
    ControlMessage,
    EncodeError,
    Flag,
    FlowId,
    Malformed,
    MsgType,
    Protocol,
    authenticate,
    decode,
    encode,
)
from hanguard.policy import credential_hash

from conftest import GUEST_MAC, MCN_MAC, USER_MAC

CRED = bytes(range(32))
SIG = bytes(range(0xA0, 0xC0))
FLOW = FlowId("192.168.1.189", 40000, "192.168.2.32", 49153, Protocol.TCP)

# Frozen frame for the message built by golden_message(); typed in from the
# layout table, field by field.
GOLDEN_HEX = (
    "00000077"  # payload length 119
    "01"  # msg_type FlowDecision
    "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f"  # credential hash
    "020000000001"  # phone mac
    "00000000000000000000ffffc0a801bd"  # src_ip ::ffff:192.168.1.189
    "9c40"  # src_port 40000
    "00000000000000000000ffffc0a80220"  # dst_ip ::ffff:192.168.2.32
    "c001"  # dst_port 49153
    "06"  # protocol TCP
    "01"  # app_id_len
    "61"  # "a"
    "a0a1a2a3a4a5a6a7a8a9aaabacadaeafb0b1b2b3b4b5b6b7b8b9babbbcbdbebf"  # app_sig
    "0000000000000007"  # policy_version
    "01"  # flag Validate
)


def golden_message(app_id="a"):
    return ControlMessage(MsgType.FLOW_DECISION, CRED, MCN_MAC, FLOW, app_id, SIG, 7, Flag.VALIDATE)


def test_golden_vector_bytes():
    assert encode(golden_message()).hex() == GOLDEN_HEX


def test_golden_vector_offsets():
    frame = encode(golden_message())
    p = frame[4:]
    assert int.from_bytes(frame[:4], "big") == len(p) == 119
    assert p[0] == 1
    assert p[1:33] == CRED
    assert p[33:39] == bytes.fromhex("020000000001")
    assert p[39:55] == ipaddress.IPv6Address("::ffff:192.168.1.189").packed
    assert p[55:57] == (40000).to_bytes(2, "big")
    assert p[57:73] == ipaddress.IPv6Address("::ffff:192.168.2.32").packed
    assert p[73:75] == (49153).to_bytes(2, "big")
    assert p[75] == 6
    assert p[76] == 1
    assert p[77:78] == b"a"
    assert p[78:110] == SIG
    assert p[110:118] == (7).to_bytes(8, "big")
    assert p[118] == 1


def test_golden_decodes_back():
    assert decode(bytes.fromhex(GOLDEN_HEX)) == golden_message()


@pytest.mark.parametrize("n", range(1, 256))
def test_frame_length_per_app_id_length(n):
    frame = encode(golden_message("x" * n))
    assert len(frame) == 4 + 119 + (n - 1)


def test_app_id_over_limit():
    with pytest.raises(EncodeError):
        encode(golden_message("x" * 256))
    # 128 two-byte characters is 256 bytes
    with pytest.raises(EncodeError):
        encode(golden_message("é" * 128))


def test_random_ten_bytes_rejected():
    rng = random.Random(10)
    for _ in range(200):
        with pytest.raises(Malformed):
            decode(bytes(rng.randrange(256) for _ in range(10)))


def test_trailing_byte_rejected():
    frame = encode(golden_message())
    with pytest.raises(Malformed) as exc:
        decode(frame + b"\x00")
    assert exc.value.offset == len(frame)


def test_truncation_rejected_everywhere():
    frame = encode(golden_message())
    for cut in range(len(frame)):
        with pytest.raises(Malformed):
            decode(frame[:cut])


def test_length_prefix_lies():
    frame = bytearray(encode(golden_message()))
    frame[3] -= 1
    with pytest.raises(Malformed):
        decode(bytes(frame))


@pytest.mark.parametrize(
    "offset,value",
    [(4, 0), (4, 9), (4 + 75, 7), (4 + 118, 2)],
    ids=["type0", "type9", "protocol", "flag"],
)
def test_bad_enum_values(offset, value):
    frame = bytearray(encode(golden_message()))
    frame[offset] = value
    with pytest.raises(Malformed) as exc:
        decode(bytes(frame))
    assert exc.value.offset == offset


def test_bad_utf8_app_id():
    frame = bytearray(encode(golden_message()))
    frame[4 + 77] = 0xFF
    with pytest.raises(Malformed):
        decode(bytes(frame))


def test_body_only_on_carrying_types():
    with pytest.raises(EncodeError):
        encode(ControlMessage(MsgType.FLOW_DECISION, CRED, MCN_MAC, body="x"))
    msg = ControlMessage(MsgType.POLICY_PUSH, CRED, MCN_MAC, policy_version=3, body="policy version=3\n")
    assert decode(encode(msg)) == msg


def _random_ip(rng):
    if rng.random() < 0.7:
        return ipaddress.IPv4Address(rng.getrandbits(32))
    addr = ipaddress.IPv6Address(rng.getrandbits(128))
    # A v6 address that happens to look mapped would canonicalize to v4.
    return addr if addr.ipv4_mapped is None else ipaddress.IPv6Address(1)


def _random_message(rng):
    mtype = rng.choice(list(MsgType))
    alphabet = "abcdefghijklmnopqrstuvwxyz.0123456789_é"
    body = ""
    if mtype in (MsgType.POLICY_UPDATE, MsgType.POLICY_PUSH, MsgType.ACK):
        body = "".join(rng.choice(alphabet + "\n ") for _ in range(rng.randrange(40)))
    return ControlMessage(
        mtype,
        rng.randbytes(32),
        ":".join(f"{rng.randrange(256):02X}" for _ in range(6)),
        FlowId(_random_ip(rng), rng.randrange(1, 65536), _random_ip(rng), rng.randrange(1, 65536), rng.choice(list(Protocol))),
        "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 60))),
        rng.randbytes(32),
        rng.getrandbits(64),
        rng.choice(list(Flag)),
        body,
    )


def test_round_trip_ten_thousand_random():
    rng = random.Random(2024)
    for _ in range(10_000):
        msg = _random_message(rng)
        assert decode(encode(msg)) == msg


@settings(max_examples=300, deadline=None)
@given(
    app_id=st.text(min_size=1, max_size=60).filter(lambda s: len(s.encode("utf-8", "surrogatepass")) <= 255),
    version=st.integers(0, 2**64 - 1),
    ports=st.tuples(st.integers(1, 65535), st.integers(1, 65535)),
)
def test_round_trip_hypothesis(app_id, version, ports):
    try:
        app_id.encode("utf-8")
    except UnicodeEncodeError:
        return
    flow = FlowId("10.0.0.1", ports[0], "fe80::1", ports[1], Protocol.UDP)
    msg = ControlMessage(MsgType.FLOW_DECISION, CRED, USER_MAC, flow, app_id, SIG, version, Flag.INVALIDATE)
    assert decode(encode(msg)) == msg


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_decode_never_crashes(data):
    try:
        decode(data)
    except Malformed:
        pass


# -- authenticate -----------------------------------------------------------------


def _auth_msg(policy, mac=MCN_MAC, cred=None, version=None):
    cred = credential_hash("alice", "pw-a") if cred is None else cred
    version = policy.version if version is None else version
    return ControlMessage(MsgType.FLOW_DECISION, cred, mac, FLOW, "com.wemo", SIG, version)


def test_auth_ok(policy):
    assert authenticate(_auth_msg(policy), "cert-alice", policy) is AuthResult.OK


def test_auth_stale_version(policy):
    msg = _auth_msg(policy, version=policy.version - 1)
    assert authenticate(msg, "cert-alice", policy) is AuthResult.STALE_VERSION
    assert authenticate(msg, "cert-alice", policy, check_version=False) is AuthResult.OK


def test_auth_unknown_phone(policy):
    assert authenticate(_auth_msg(policy, mac=GUEST_MAC), "cert-alice", policy) is AuthResult.UNKNOWN_PHONE


def test_auth_bad_credentials(policy):
    msg = _auth_msg(policy, cred=credential_hash("alice", "wrong"))
    assert authenticate(msg, "cert-alice", policy) is AuthResult.BAD_CREDENTIALS


def test_auth_cert_mismatch(policy):
    assert authenticate(_auth_msg(policy), "cert-bob", policy) is AuthResult.CERT_MISMATCH


def test_auth_first_failure_wins(policy):
    msg = _auth_msg(policy, cred=bytes(32), version=0)
    assert authenticate(msg, "cert-bob", policy) is AuthResult.BAD_CREDENTIALS
    msg = _auth_msg(policy, version=0)
    assert authenticate(msg, "cert-bob", policy) is AuthResult.CERT_MISMATCH


def test_auth_is_pure(policy):
    msg = _auth_msg(policy, version=0)
    results = {authenticate(msg, "cert-alice", policy) for _ in range(5)}
    assert results == {AuthResult.STALE_VERSION}


def test_flow_id_canonicalizes_mapped():
    a = FlowId("::ffff:192.168.1.2", 1, "192.168.1.3", 2)
    b = FlowId("192.168.1.2", 1, "::ffff:192.168.1.3", 2)
    assert a == b and a.key() == b.key()
    with pytest.raises(ValueError):
        FlowId("1.2.3.4", 70000, "1.2.3.5", 1)
