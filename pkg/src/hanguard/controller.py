"""Router-side Controller.

Holds the master policy replica and the per-flow decision cache (PFDC),
takes FlowDecisions off the control channel through an in-order queue,
and gives every data packet exactly one Verdict.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol as TypingProtocol

from .control_proto import (
    AuthResult,
    ControlMessage,
    Flag,
    FlowId,
    Malformed,
    MsgType,
    authenticate,
    decode,
    encode,
)
from .packets import Packet, Zone
from .policy import (
    Policy,
    PolicyError,
    PolicyUpdate,
    UpdateRejected,
    apply_update,
    format_policy,
    normalize_mac,
    parse_update,
    te_check,
)

log = logging.getLogger(__name__)

SECOND_US = 1_000_000


class Action(Enum):
    FORWARD = "Forward"
    DROP = "Drop"


class Reason(Enum):
    NOT_INTERESTING = "NotInteresting"
    VALID = "Valid"
    NO_DECISION = "NoDecision"
    PHONE_LEVEL_DENY = "PhoneLevelDeny"
    PENALIZED = "Penalized"
    SPOOF_SUSPECTED = "SpoofSuspected"
    NAT_BLOCKED = "NatBlocked"


@dataclass(frozen=True)
class Verdict:
    action: Action
    reason: Reason

    def __post_init__(self):
        if self.action is Action.FORWARD and self.reason not in (Reason.NOT_INTERESTING, Reason.VALID):
            raise ValueError(f"Forward cannot carry {self.reason}")

    @property
    def forwarded(self) -> bool:
        return self.action is Action.FORWARD


FORWARD_PLAIN = Verdict(Action.FORWARD, Reason.NOT_INTERESTING)
FORWARD_VALID = Verdict(Action.FORWARD, Reason.VALID)


def drop(reason: Reason) -> Verdict:
    return Verdict(Action.DROP, reason)


@dataclass
class ControllerConfig:
    capacity: int = 1024
    per_phone_limit: int = 64
    rate_window_us: int = 10 * SECOND_US
    rate_threshold: int = 100
    penalty_us: int = 300 * SECOND_US
    vanilla: bool = False


# --------------------------------------------------------------------------
# Per-flow decision cache
# --------------------------------------------------------------------------


@dataclass
class PfdcEntry:
    flow: FlowId
    flag: Flag
    requesting_app: str
    last_seen: int
    owner_phone: str

    def touch(self, now: int) -> None:
        self.last_seen = max(self.last_seen, now)


@dataclass
class Pfdc:
    capacity: int = 1024
    per_phone_limit: int = 64
    entries: dict[FlowId, PfdcEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, flow: FlowId) -> PfdcEntry | None:
        return self.entries.get(flow)

    def owned_by(self, phone: str) -> dict[FlowId, PfdcEntry]:
        phone = normalize_mac(phone)
        return {f: e for f, e in self.entries.items() if e.owner_phone == phone}

    def remove(self, flow: FlowId) -> bool:
        return self.entries.pop(flow, None) is not None


def _oldest(entries) -> PfdcEntry:
    return min(entries, key=lambda e: (e.last_seen, e.flow.key()))


def gc_run(pfdc: Pfdc, now: int) -> list[FlowId]:
    """Evict oldest-last-seen entries until every limit holds.

    Per-phone overflow evicts from that phone only; global overflow evicts
    globally. Ties go to the lexicographically smallest flow key.
    """
    evicted = []
    counts = Counter(e.owner_phone for e in pfdc.entries.values())
    for phone in sorted(counts):
        while counts[phone] > pfdc.per_phone_limit:
            victim = _oldest(e for e in pfdc.entries.values() if e.owner_phone == phone)
            del pfdc.entries[victim.flow]
            counts[phone] -= 1
            evicted.append(victim.flow)
    while len(pfdc.entries) > pfdc.capacity:
        victim = _oldest(pfdc.entries.values())
        del pfdc.entries[victim.flow]
        evicted.append(victim.flow)
    return evicted


# --------------------------------------------------------------------------
# Rate limiting, NAT, spoofing
# --------------------------------------------------------------------------


@dataclass
class PenaltyBox:
    until: dict[str, int] = field(default_factory=dict)

    def penalize(self, phone: str, until: int) -> None:
        phone = normalize_mac(phone)
        self.until[phone] = max(until, self.until.get(phone, 0))

    def active(self, phone: str, now: int) -> bool:
        phone = normalize_mac(phone)
        until = self.until.get(phone)
        if until is None:
            return False
        if now >= until:
            del self.until[phone]
            return False
        return True


@dataclass
class InsertWindow:
    """Sliding window of decision-insert timestamps per phone."""

    window_us: int
    threshold: int
    times: dict[str, deque] = field(default_factory=dict)

    def record(self, phone: str, now: int) -> int:
        q = self.times.setdefault(normalize_mac(phone), deque())
        q.append(now)
        while q and q[0] <= now - self.window_us:
            q.popleft()
        return len(q)


def rate_limit(
    phone: str, now: int, window: InsertWindow, penalty: PenaltyBox, penalty_us: int
) -> int | None:
    """Count one insert; past the threshold, penalize and return the expiry."""
    if window.record(phone, now) > window.threshold:
        until = now + penalty_us
        penalty.penalize(phone, until)
        return until
    return None


@dataclass
class NatTable:
    """Port-restricted cone: inbound needs an exact (local, remote) pair."""

    pairs: set[tuple[str, int, str, int]] = field(default_factory=set)

    def record_outbound(self, packet: Packet) -> None:
        f = packet.flow
        self.pairs.add((str(f.src_ip), f.src_port, str(f.dst_ip), f.dst_port))

    def admits(self, packet: Packet) -> bool:
        f = packet.flow
        return (str(f.dst_ip), f.dst_port, str(f.src_ip), f.src_port) in self.pairs


def nat_filter(packet: Packet, nat: NatTable) -> Verdict:
    if packet.zone is Zone.WAN_OUT:
        nat.record_outbound(packet)
        return FORWARD_PLAIN
    if nat.admits(packet):
        return FORWARD_PLAIN
    return drop(Reason.NAT_BLOCKED)


def spoof_check(src_mac: str, src_ip: str, policy: Policy) -> str | None:
    """Return a description of an IP/MAC reservation mismatch, or None."""
    mac = normalize_mac(src_mac)
    reserved: dict[str, str] = {d.ip: d.mac for d in policy.devices.values()}
    reserved.update({p.reserved_ip: p.mac for p in policy.phones.values()})
    owner_ip = None
    if mac in policy.phones:
        owner_ip = policy.phones[mac].reserved_ip
    elif mac in policy.devices:
        owner_ip = policy.devices[mac].ip
    if owner_ip is not None and owner_ip != src_ip:
        return f"MAC {mac} reserved for {owner_ip} claims {src_ip}"
    holder = reserved.get(src_ip)
    if holder is not None and holder != mac:
        return f"IP {src_ip} reserved for {holder} claimed by {mac}"
    return None


# --------------------------------------------------------------------------
# Enforcement
# --------------------------------------------------------------------------


def enforce(
    packet: Packet,
    policy: Policy,
    pfdc: Pfdc,
    penalty: PenaltyBox,
    now: int,
    counters: Counter | None = None,
    vanilla: bool = False,
) -> Verdict:
    counters = counters if counters is not None else Counter()
    if penalty.active(packet.src_mac, now):
        return drop(Reason.PENALIZED)
    if vanilla:
        return FORWARD_PLAIN
    device = policy.devices.get(normalize_mac(packet.dst_mac))
    if device is None or not device.protected:
        return FORWARD_PLAIN
    if not te_check(policy, policy.role_of(packet.src_mac), device.mac):
        return drop(Reason.PHONE_LEVEL_DENY)
    counters["pfdc_lookups"] += 1
    entry = pfdc.get(packet.flow)
    if entry is not None and entry.flag is Flag.VALIDATE:
        entry.touch(now)
        return FORWARD_VALID
    return drop(Reason.NO_DECISION)


# --------------------------------------------------------------------------
# Event log
# --------------------------------------------------------------------------

ADMIN_CHANNEL = "admin-oob"


@dataclass(frozen=True)
class LogRecord:
    time: int
    component: str
    event: str
    detail: str


@dataclass
class EventLog:
    records: list[LogRecord] = field(default_factory=list)

    def record(self, now: int, component: str, event: str, detail: str = "") -> LogRecord:
        rec = LogRecord(now, component, event, detail)
        self.records.append(rec)
        return rec

    def notifications(self) -> list[LogRecord]:
        return [r for r in self.records if r.component == ADMIN_CHANNEL]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "component", "event", "detail"])
        for r in self.records:
            w.writerow([r.time, r.component, r.event, r.detail])
        return buf.getvalue()


# --------------------------------------------------------------------------
# Controller
# --------------------------------------------------------------------------


class DecisionRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class PersistenceError(OSError):
    pass


class MonitorEndpoint(TypingProtocol):
    reachable: bool

    def deliver(self, frame: bytes, now: int) -> None: ...


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Controller:
    def __init__(
        self,
        policy: Policy,
        config: ControllerConfig | None = None,
        persist: Callable[[str], None] | str | os.PathLike | None = None,
        event_log: EventLog | None = None,
    ):
        self.config = config or ControllerConfig()
        self.policy = policy
        self.pfdc = Pfdc(self.config.capacity, self.config.per_phone_limit)
        self.penalty = PenaltyBox()
        self.window = InsertWindow(self.config.rate_window_us, self.config.rate_threshold)
        self.nat = NatTable()
        self.log = event_log if event_log is not None else EventLog()
        self.counters: Counter = Counter()
        self.verdicts: Counter = Counter()
        self.queue: deque[ControlMessage] = deque()
        self.decision_stored: dict[FlowId, int] = {}
        self.monitors: dict[str, MonitorEndpoint] = {}
        if persist is None or callable(persist):
            self._persist = persist
        else:
            target = persist
            self._persist = lambda text: atomic_write(target, text)

    @property
    def vanilla(self) -> bool:
        return self.config.vanilla

    def notify_admin(self, event: str, detail: str, now: int) -> LogRecord:
        log.warning("admin notification: %s %s", event, detail)
        return self.log.record(now, ADMIN_CHANNEL, event, detail)

    def register_monitor(self, phone_mac: str, endpoint: MonitorEndpoint) -> None:
        self.monitors[normalize_mac(phone_mac)] = endpoint

    # -- control plane --------------------------------------------------------

    def _reject(self, reason: str, detail: str, now: int) -> DecisionRejected:
        self.counters[f"rejected_{reason}"] += 1
        self.notify_admin(f"decision-rejected-{reason}", detail, now)
        return DecisionRejected(reason, detail)

    def receive_decision(self, frame: bytes, channel_cert: str, now: int) -> ControlMessage:
        """Decode, authenticate and enqueue one FlowDecision; raise DecisionRejected otherwise."""
        try:
            msg = decode(frame)
        except Malformed as exc:
            raise self._reject("Malformed", str(exc), now) from None
        if msg.msg_type is not MsgType.FLOW_DECISION:
            raise self._reject("Malformed", f"expected FlowDecision, got {msg.msg_type.name}", now)
        auth = authenticate(msg, channel_cert, self.policy)
        if auth is not AuthResult.OK:
            raise self._reject(auth.value, f"{msg.phone_mac} {msg.flow} v{msg.policy_version}", now)
        if self.penalty.active(msg.phone_mac, now):
            raise self._reject(Reason.PENALIZED.value, f"{msg.phone_mac} {msg.flow}", now)
        if msg.flag is Flag.VALIDATE:
            phone = self.policy.phone(msg.phone_mac)
            if str(msg.flow.src_ip) != phone.reserved_ip:
                raise self._reject(
                    Reason.SPOOF_SUSPECTED.value, f"{phone.mac} reserved {phone.reserved_ip} claims flow {msg.flow}", now
                )
            device = self.policy.device_by_ip(str(msg.flow.dst_ip))
            if device is None or not device.protected:
                raise self._reject(Reason.NOT_INTERESTING.value, f"{msg.flow} targets no protected device", now)
            if not te_check(self.policy, phone.role, device.mac):
                raise self._reject(Reason.PHONE_LEVEL_DENY.value, f"{phone.mac} role {phone.role} -> {device.mac}", now)
        self.queue.append(msg)
        return msg

    def drain(self, now: int) -> list[tuple[FlowId, Flag]]:
        """Apply queued decisions in arrival order."""
        applied = []
        while self.queue:
            msg = self.queue.popleft()
            if msg.flag is Flag.INVALIDATE:
                entry = self.pfdc.get(msg.flow)
                if entry is not None and entry.owner_phone == msg.phone_mac:
                    self.pfdc.remove(msg.flow)
                    self.counters["pfdc_removals"] += 1
                applied.append((msg.flow, msg.flag))
                continue
            entry = self.pfdc.get(msg.flow)
            if entry is not None:
                if entry.owner_phone == msg.phone_mac:
                    entry.touch(now)
                    applied.append((msg.flow, msg.flag))
                continue
            if self.penalty.active(msg.phone_mac, now):
                continue
            until = rate_limit(msg.phone_mac, now, self.window, self.penalty, self.config.penalty_us)
            if until is not None:
                self.counters["penalties"] += 1
                self.notify_admin("pfdc-flood-penalty", f"{msg.phone_mac} penalized until {until}", now)
                continue
            self.pfdc.entries[msg.flow] = PfdcEntry(msg.flow, Flag.VALIDATE, msg.app_id, now, msg.phone_mac)
            self.counters["pfdc_inserts"] += 1
            self.decision_stored.setdefault(msg.flow, now)
            for flow in gc_run(self.pfdc, now):
                self.counters["pfdc_evictions"] += 1
                self.log.record(now, "gc", "evict", str(flow))
            applied.append((msg.flow, msg.flag))
        return applied

    def _reply(self, req: ControlMessage, ok: bool, body: str = "", msg_type=MsgType.ACK) -> bytes:
        return encode(
            ControlMessage(
                msg_type,
                bytes(32),
                req.phone_mac,
                policy_version=self.policy.version,
                flag=Flag.VALIDATE if ok else Flag.INVALIDATE,
                body=body,
            )
        )

    def handle_request(self, frame: bytes, channel_cert: str, now: int) -> bytes:
        """Synchronous control-channel exchange; always answers with a frame."""
        try:
            msg = decode(frame)
        except Malformed as exc:
            self.notify_admin("malformed-request", str(exc), now)
            return encode(ControlMessage(MsgType.ACK, bytes(32), "00:00:00:00:00:00", flag=Flag.INVALIDATE, body=str(exc)))
        if msg.msg_type is MsgType.FLOW_DECISION:
            try:
                self.receive_decision(frame, channel_cert, now)
            except DecisionRejected as exc:
                return self._reply(msg, False, str(exc))
            return self._reply(msg, True)
        if msg.msg_type in (MsgType.VERSION_QUERY, MsgType.POLICY_PUSH):
            auth = authenticate(msg, channel_cert, self.policy, check_version=False)
            if auth is not AuthResult.OK:
                self.notify_admin(f"sync-rejected-{auth.value}", msg.phone_mac, now)
                return self._reply(msg, False, auth.value)
            if msg.msg_type is MsgType.VERSION_QUERY:
                return self._reply(msg, True)
            return self._reply(msg, True, format_policy(self.policy), MsgType.POLICY_PUSH)
        if msg.msg_type is MsgType.POLICY_UPDATE:
            auth = authenticate(msg, channel_cert, self.policy)
            if auth is not AuthResult.OK:
                self.notify_admin(f"update-rejected-{auth.value}", msg.phone_mac, now)
                return self._reply(msg, False, auth.value)
            try:
                update = parse_update(msg.body)
            except PolicyError as exc:
                self.notify_admin(UpdateRejected.INVALID, str(exc), now)
                return self._reply(msg, False, f"{UpdateRejected.INVALID}: {exc}")
            try:
                self.policy_update_service(update, msg.phone_mac, now)
            except (UpdateRejected, PersistenceError) as exc:
                return self._reply(msg, False, str(exc))
            return self._reply(msg, True)
        return self._reply(msg, False, f"unexpected {msg.msg_type.name}")

    def policy_update_service(self, update: PolicyUpdate, actor: str, now: int) -> int:
        """Apply, persist, then push to every other reachable Monitor (write-through)."""
        actor = normalize_mac(actor)
        new = apply_update(self.policy, update, actor, notify=lambda ev, detail: self.notify_admin(ev, f"{actor}: {detail}", now))
        text = format_policy(new)
        if self._persist is not None:
            try:
                self._persist(text)
            except OSError as exc:
                self.notify_admin("persist-failed", str(exc), now)
                raise PersistenceError(f"policy not persisted: {exc}") from exc
        self.policy = new
        self.log.record(now, "policy", "updated", f"v{new.version} by {actor}")
        push = encode(ControlMessage(MsgType.POLICY_PUSH, bytes(32), actor, policy_version=new.version, body=text))
        for mac in sorted(self.monitors):
            endpoint = self.monitors[mac]
            if mac == actor or not endpoint.reachable:
                continue
            endpoint.deliver(push, now)
        return new.version

    # -- data plane -----------------------------------------------------------

    def enforce(self, packet: Packet, now: int) -> Verdict:
        return enforce(packet, self.policy, self.pfdc, self.penalty, now, self.counters, self.vanilla)

    def handle_packet(self, packet: Packet, now: int) -> Verdict:
        """Full ingress pipeline: spoof and NAT checks around ``enforce``."""
        verdict = self._classify(packet, now)
        self.verdicts[(verdict.action.value, verdict.reason.value)] += 1
        if verdict.forwarded and packet.zone is Zone.WAN_OUT:
            self.nat.record_outbound(packet)
        return verdict

    def _classify(self, packet: Packet, now: int) -> Verdict:
        if packet.zone is Zone.WAN_IN:
            # Remote traffic answers to the NAT only; HAN roles govern LAN senders.
            if self.vanilla:
                return FORWARD_PLAIN
            return nat_filter(packet, self.nat)
        if not self.vanilla:
            problem = spoof_check(packet.src_mac, packet.src_ip, self.policy)
            if problem is not None:
                self.notify_admin("spoof-suspected", problem, now)
                return drop(Reason.SPOOF_SUSPECTED)
        return self.enforce(packet, now)
