"""Phone-side Monitor.

Finds interesting flows (destination is a protected device in the local
replica), attributes them to an app, checks the replica, and emits
FlowDecision messages for the router. Situation comes from either procfs
polling or a per-app tunnel.
"""

from __future__ import annotations

import hmac
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol as TypingProtocol

from .control_proto import (
    ControlMessage,
    Flag,
    FlowId,
    MsgType,
    Protocol,
    decode,
    encode,
)
from .packets import Packet, PacketKind
from .policy import (
    Decision,
    Policy,
    PolicyUpdate,
    UnknownPrincipal,
    apply_update,
    authorize,
    format_update,
    mcs_check,
    normalize_mac,
    parse_policy,
    te_check,
)
from .procfs import CLOSING_STATES, FILE_NAMES, ProcFile, ProcNetLine, ProcParseError, TcpState, parse_line

log = logging.getLogger(__name__)

DEFAULT_UDP_IDLE_US = 2_000_000


class Strategy(Enum):
    NAIVE = "naive"
    SMARTER = "smarter"


class Node(Enum):
    MCN = "MCN"
    SCN = "SCN"


class Event(Enum):
    OPENED = "Opened"
    CLOSED = "Closed"


@dataclass(frozen=True)
class ProcfsPoll:
    interval_us: int
    strategy: Strategy = Strategy.SMARTER

    def __post_init__(self):
        if self.interval_us <= 0:
            raise ValueError("poll interval must be positive")


@dataclass(frozen=True)
class TunnelProxy:
    managed_apps: frozenset[str]
    hop_us: int = 0

    def admits(self, app_id: str) -> bool:
        return app_id in self.managed_apps


@dataclass(frozen=True)
class FlowObservation:
    flow: FlowId
    app_id: str
    app_sig: bytes
    event: Event
    observed_at: int


@dataclass
class KnownFlow:
    app_id: str
    app_sig: bytes
    device_mac: str
    last_seen: int


@dataclass
class PollStats:
    scheduled_interval: int = 0
    actual_intervals: list[int] = field(default_factory=list)
    lines_parsed: int = 0
    per_poll_lines: list[int] = field(default_factory=list)
    last_start: int | None = None


@dataclass
class MonitorState:
    policy_replica: Policy
    node: Node
    known_flows: dict[FlowId, KnownFlow] = field(default_factory=dict)
    udp_idle_timeout: int = DEFAULT_UDP_IDLE_US
    poll_stats: PollStats = field(default_factory=PollStats)

    @property
    def replica_version(self) -> int:
        return self.policy_replica.version


@dataclass(frozen=True)
class Alert:
    at: int
    flow: FlowId
    app_id: str
    reason: str


class RouterUnreachable(ConnectionError):
    pass


class NotMasterNode(PermissionError):
    pass


class UpdateRefused(RuntimeError):
    pass


class ControlLink(TypingProtocol):
    def request(self, frame: bytes) -> bytes: ...


def verify_app_identity(app_id: str, app_sig: bytes, policy: Policy) -> bool:
    app = policy.apps.get(app_id)
    return app is not None and hmac.compare_digest(app.signature, app_sig)


def _is_open(row: ProcNetLine, protocol: Protocol) -> bool:
    if protocol is Protocol.UDP:
        return True
    return row.state not in CLOSING_STATES and row.state != TcpState.LISTEN


class Monitor:
    def __init__(
        self,
        phone_mac: str,
        credential_hash: bytes,
        policy: Policy,
        source: ProcfsPoll | TunnelProxy,
        packages: Mapping[int, tuple[str, bytes]],
        udp_idle_timeout: int = DEFAULT_UDP_IDLE_US,
    ):
        self.mac = normalize_mac(phone_mac)
        self.credential_hash = credential_hash
        self.source = source
        # uid -> (package name, signing digest), as the package manager reports it.
        self.packages = dict(packages)
        phone = policy.phones.get(self.mac)
        node = Node.MCN if phone is not None and phone.is_mcn else Node.SCN
        self.state = MonitorState(policy, node, udp_idle_timeout=udp_idle_timeout)
        if isinstance(source, ProcfsPoll):
            self.state.poll_stats.scheduled_interval = source.interval_us
        self.alerts: list[Alert] = []
        self.outbox: list[ControlMessage] = []
        self.emitted: list[ControlMessage] = []
        self._mtimes: dict[str, int] = {}
        self._snapshots: dict[str, list[ProcNetLine]] = {}
        self._open: dict[FlowId, tuple[str, bytes]] = {}
        self._tunnel_seen: set[FlowId] = set()

    @property
    def policy(self) -> Policy:
        return self.state.policy_replica

    @property
    def replica_version(self) -> int:
        return self.state.replica_version

    def _app_for_uid(self, uid: int) -> tuple[str, bytes] | None:
        return self.packages.get(uid)

    def _sig_for_app(self, app_id: str) -> bytes:
        for pkg, sig in self.packages.values():
            if pkg == app_id:
                return sig
        return bytes(32)

    def _message(self, flow: FlowId, app_id: str, app_sig: bytes, flag: Flag) -> ControlMessage:
        msg = ControlMessage(
            MsgType.FLOW_DECISION,
            self.credential_hash,
            self.mac,
            flow,
            app_id,
            app_sig,
            self.replica_version,
            flag,
        )
        self.emitted.append(msg)
        return msg

    def _alert(self, now: int, flow: FlowId, app_id: str, reason: str) -> None:
        log.info("monitor %s: %s for %s (%s)", self.mac, reason, flow, app_id)
        self.alerts.append(Alert(now, flow, app_id, reason))

    def _interesting(self, flow: FlowId) -> bool:
        dev = self.policy.device_by_ip(str(flow.dst_ip))
        return dev is not None and dev.protected

    # -- procfs situation source -------------------------------------------

    def poll_once(self, files: Mapping[str, ProcFile], now: int) -> list[FlowObservation]:
        """One polling pass over the four procfs tables.

        Smarter re-parses a table only when its mtime moved; Naive parses
        every line every time.
        """
        if not isinstance(self.source, ProcfsPoll):
            raise TypeError("poll_once needs a procfs situation source")
        stats = self.state.poll_stats
        if stats.last_start is not None:
            stats.actual_intervals.append(now - stats.last_start)
        stats.last_start = now

        parsed = 0
        present: dict[FlowId, ProcNetLine] = {}
        for name in FILE_NAMES:
            f = files.get(name)
            if f is None:
                continue
            if self.source.strategy is Strategy.SMARTER and self._mtimes.get(name) == f.mtime:
                rows = self._snapshots[name]
            else:
                rows = []
                for text in f.lines:
                    parsed += 1
                    try:
                        rows.append(parse_line(text))
                    except ProcParseError as exc:
                        log.warning("monitor %s: skipping %s line: %s", self.mac, name, exc)
                self._snapshots[name] = rows
                self._mtimes[name] = f.mtime
            for row in rows:
                if _is_open(row, f.protocol):
                    present[row.flow(f.protocol)] = row
        stats.lines_parsed += parsed
        stats.per_poll_lines.append(parsed)

        observations = []
        for flow, row in present.items():
            known = self.state.known_flows.get(flow)
            if known is not None:
                known.last_seen = now
            if flow in self._open:
                continue
            app = self._app_for_uid(row.uid)
            if app is None or not self._interesting(flow):
                continue
            self._open[flow] = app
            observations.append(FlowObservation(flow, app[0], app[1], Event.OPENED, now))
        for flow in [f for f in self._open if f not in present]:
            app_id, sig = self._open.pop(flow)
            observations.append(FlowObservation(flow, app_id, sig, Event.CLOSED, now))
        return observations

    def step(self, files: Mapping[str, ProcFile], now: int) -> tuple[list[FlowObservation], list[ControlMessage]]:
        """Poll, evaluate new flows and detect terminations in one go."""
        observations = self.poll_once(files, now)
        messages = [m for o in observations if o.event is Event.OPENED if (m := self.evaluate_flow(o, now)) is not None]
        messages += self.detect_termination(observations, now)
        return observations, messages

    # -- decisions ----------------------------------------------------------

    def evaluate_flow(self, obs: FlowObservation, now: int | None = None) -> ControlMessage | None:
        if obs.event is not Event.OPENED:
            raise ValueError("only Opened observations are evaluated")
        now = obs.observed_at if now is None else now
        policy = self.policy
        dev = policy.device_by_ip(str(obs.flow.dst_ip))
        if dev is None or not dev.protected:
            return None
        if not te_check(policy, policy.role_of(self.mac), dev.mac):
            self._alert(now, obs.flow, obs.app_id, "phone role cannot reach device")
            return None
        try:
            same_category = mcs_check(policy, obs.app_id, dev.mac)
        except UnknownPrincipal:
            same_category = False
        if not same_category:
            self._alert(now, obs.flow, obs.app_id, "app category does not match device")
            return None
        if not verify_app_identity(obs.app_id, obs.app_sig, policy):
            self._alert(now, obs.flow, obs.app_id, "app signature mismatch (repackaged?)")
            return None
        self.state.known_flows[obs.flow] = KnownFlow(obs.app_id, obs.app_sig, dev.mac, obs.observed_at)
        return self._message(obs.flow, obs.app_id, obs.app_sig, Flag.VALIDATE)

    def detect_termination(self, observations: list[FlowObservation], now: int) -> list[ControlMessage]:
        known = self.state.known_flows
        out = []
        for obs in observations:
            if obs.event is Event.CLOSED and obs.flow in known:
                kf = known.pop(obs.flow)
                out.append(self._message(obs.flow, kf.app_id, kf.app_sig, Flag.INVALIDATE))
        for flow in sorted(known, key=FlowId.key):
            kf = known[flow]
            if flow.protocol is Protocol.UDP and now - kf.last_seen >= self.state.udp_idle_timeout:
                del known[flow]
                out.append(self._message(flow, kf.app_id, kf.app_sig, Flag.INVALIDATE))
        return out

    # -- tunnel situation source ---------------------------------------------

    def proxy_packet(self, packet: Packet, now: int) -> tuple[Packet, ControlMessage | None]:
        """Forward a tunneled packet unchanged, deciding on the first of each flow."""
        if not isinstance(self.source, TunnelProxy):
            raise TypeError("proxy_packet needs a tunnel situation source")
        if not self.source.admits(packet.app_id):
            raise ValueError(f"{packet.app_id} is not routed through the tunnel")
        flow = packet.flow
        known = self.state.known_flows.get(flow)
        if packet.kind is PacketKind.FIN:
            self._tunnel_seen.discard(flow)
            if known is None:
                return packet, None
            del self.state.known_flows[flow]
            return packet, self._message(flow, known.app_id, known.app_sig, Flag.INVALIDATE)
        if known is not None:
            known.last_seen = now
            return packet, None
        if flow in self._tunnel_seen:
            return packet, None
        self._tunnel_seen.add(flow)
        if not self._interesting(flow):
            return packet, None
        obs = FlowObservation(flow, packet.app_id, self._sig_for_app(packet.app_id), Event.OPENED, now)
        return packet, self.evaluate_flow(obs, now)

    # -- policy synchronization ------------------------------------------------

    def install(self, policy: Policy, now: int = 0) -> list[ControlMessage]:
        """Swap in a new replica and invalidate known flows it no longer allows."""
        self.state.policy_replica = policy
        out = []
        for flow in sorted(self.state.known_flows, key=FlowId.key):
            kf = self.state.known_flows[flow]
            try:
                ok = authorize(policy, self.mac, kf.app_id, kf.device_mac) is Decision.ALLOW
            except UnknownPrincipal:
                ok = False
            if ok and verify_app_identity(kf.app_id, kf.app_sig, policy):
                continue
            del self.state.known_flows[flow]
            self._alert(now, flow, kf.app_id, "revoked by policy update")
            out.append(self._message(flow, kf.app_id, kf.app_sig, Flag.INVALIDATE))
        self.outbox.extend(out)
        return out

    def receive_push(self, frame: bytes, now: int = 0) -> list[ControlMessage]:
        msg = decode(frame)
        if msg.msg_type is not MsgType.POLICY_PUSH:
            raise ValueError(f"expected PolicyPush, got {msg.msg_type.name}")
        policy = parse_policy(msg.body)
        if policy.version <= self.replica_version:
            return []
        return self.install(policy, now)

    def _request(self, link: ControlLink, msg: ControlMessage) -> ControlMessage:
        return decode(link.request(encode(msg)))

    def on_network_change(self, link: ControlLink, now: int = 0) -> str:
        """Reconnect hook. Returns ``"unreachable"``, ``"current"`` or ``"updated"``."""
        query = ControlMessage(MsgType.VERSION_QUERY, self.credential_hash, self.mac, policy_version=self.replica_version)
        try:
            reply = self._request(link, query)
            if reply.policy_version <= self.replica_version:
                return "current"
            pull = ControlMessage(MsgType.POLICY_PUSH, self.credential_hash, self.mac, policy_version=self.replica_version)
            pushed = self._request(link, pull)
        except RouterUnreachable:
            log.info("monitor %s: router unreachable, keeping v%d", self.mac, self.replica_version)
            return "unreachable"
        policy = parse_policy(pushed.body)
        if policy.version <= self.replica_version:
            return "current"
        self.install(policy, now)
        return "updated"

    def mcn_push_update(self, update: PolicyUpdate, link: ControlLink, now: int = 0) -> int:
        if self.state.node is not Node.MCN:
            raise NotMasterNode(f"{self.mac} is not the master controller node")
        msg = ControlMessage(
            MsgType.POLICY_UPDATE,
            self.credential_hash,
            self.mac,
            policy_version=self.replica_version,
            body=format_update(update),
        )
        reply = self._request(link, msg)
        if reply.msg_type is not MsgType.ACK or reply.flag is Flag.INVALIDATE:
            raise UpdateRefused(reply.body or "router rejected the update")
        new = apply_update(self.policy, update, self.mac)
        if new.version != reply.policy_version:
            self.on_network_change(link, now)
        else:
            self.install(new, now)
        return reply.policy_version
