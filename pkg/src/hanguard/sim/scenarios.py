"""Built-in scenario suite and the scenario parameter-file format.

Every scenario records metric rows into a MetricsReport and checks its own
expected outcome; a failed check lands in ``report.failures`` rather than
raising, so a run always produces a complete CSV.
"""

from __future__ import annotations

import dataclasses
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Callable

from ..control_proto import ControlMessage, Flag, FlowId, MsgType, Protocol, decode, encode
from ..controller import Reason
from ..packets import Packet, PacketKind, Zone
from ..policy import (
    ADMIN,
    HOME,
    AppRecord,
    DomainDef,
    Policy,
    PolicyError,
    PolicyUpdate,
    format_update,
    tokenize,
)
from .metrics import MetricsReport
from .topology import (
    IOS,
    NO_MONITOR,
    REMOTE,
    SERVER,
    BindingSpec,
    FlowSpec,
    HostSpec,
    InstallSpec,
    PhoneSpec,
    ScenarioError,
    Topology,
    official_signature,
)
from .world import MS, SimParams, World

VANILLA = "vanilla"
HANGUARD = "hanguard"
SECOND = 1_000_000

# -- cast of characters ---------------------------------------------------------

WEMO_APP = "com.belkin.wemoandroid"
NERD_APP = "com.mynerd.app"
FLASHLIGHT_APP = "com.example.flashlight"
ECHO_APP = "com.example.echo"
BROWSER_APP = "com.example.browser"
CAMERA_APP = "com.ibaby.monitor"

ALICE = PhoneSpec("alice", "AA:00:00:00:00:01", "192.168.1.189", user="alice", password="alice-pw", mcn=True, background_sockets=20)
BOB = PhoneSpec("bob", "AA:00:00:00:00:02", "192.168.1.190", user="bob", password="bob-pw")
CAROL = PhoneSpec("carol", "AA:00:00:00:00:03", "192.168.1.191", user="carol", password="carol-pw", platform=IOS, managed_apps=(ECHO_APP,))
GUEST = PhoneSpec("guest", "AA:00:00:00:00:99", "192.168.1.200", registered=False, platform=NO_MONITOR)

SWITCH = HostSpec("wemo-switch", "BB:00:00:00:00:01", "192.168.2.32")
INSIGHT = HostSpec("wemo-insight", "BB:00:00:00:00:02", "192.168.2.33")
NERD = HostSpec("n3rd", "BB:00:00:00:00:03", "192.168.2.34")
MOTION = HostSpec("wemo-motion", "BB:00:00:00:00:04", "192.168.2.35")
CAMERA = HostSpec("ibaby-cam", "BB:00:00:00:00:05", "192.168.2.36", device_type="camera_t")
ECHO = HostSpec("echo-device", "BB:00:00:00:00:10", "192.168.2.50")
PC = HostSpec("pc", "CC:00:00:00:00:01", "192.168.1.10", kind=SERVER)
CLOUD = HostSpec("cloud", "DD:00:00:00:00:01", "52.20.10.5", kind=REMOTE)
ADVERSARY = HostSpec("adversary", "DD:00:00:00:00:02", "203.0.113.7", kind=REMOTE)

WEMO_PORT = 49153
ACTUATORS = (SWITCH, INSIGHT, NERD)
SENSORS = (MOTION,)


def _home_bindings() -> list[BindingSpec]:
    return [
        BindingSpec(WEMO_APP, SWITCH.name, "wemo"),
        BindingSpec(WEMO_APP, INSIGHT.name, "wemo"),
        BindingSpec(WEMO_APP, MOTION.name, "wemo"),
        BindingSpec(NERD_APP, NERD.name, "n3rd"),
    ]


def _official_app(device: HostSpec) -> str:
    return NERD_APP if device is NERD else WEMO_APP


# -- scenario values -----------------------------------------------------------------


@dataclass
class Scenario:
    """A named, parameterized run of one built-in scenario kind."""

    name: str
    base: str
    params: dict[str, str] = field(default_factory=dict)
    trials: int | None = None
    seed: int = 0
    trace: bool = False

    @property
    def kind(self) -> "ScenarioKind":
        try:
            return KINDS[self.base]
        except KeyError:
            raise ScenarioError([f"unknown scenario base {self.base!r}"]) from None

    @property
    def n_trials(self) -> int:
        return self.trials if self.trials is not None else self.kind.trials

    def value(self, key: str) -> str:
        if key in self.params:
            return self.params[key]
        return self.kind.defaults[key]

    def int(self, key: str) -> int:
        raw = self.value(key)
        try:
            return int(raw)
        except ValueError:
            raise ScenarioError([f"parameter {key}: expected an integer, got {raw!r}"]) from None

    def ints(self, key: str) -> list[int]:
        raw = self.value(key)
        try:
            out = [int(x) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise ScenarioError([f"parameter {key}: expected comma-separated integers, got {raw!r}"]) from None
        if not out:
            raise ScenarioError([f"parameter {key} is empty"])
        return out

    def words(self, key: str) -> list[str]:
        return [x.strip() for x in self.value(key).split(",") if x.strip()]

    def sim_params(self, **overrides) -> SimParams:
        values = {k: v for k, v in self.params.items() if k in _SIM_KEYS}
        values.update({k: str(v) for k, v in overrides.items()})
        return SimParams.from_strings(values)

    def modes(self) -> list[str]:
        modes = self.words("modes")
        bad = [m for m in modes if m not in self.kind.mode_choices]
        if bad or not modes:
            raise ScenarioError([f"modes must be drawn from {','.join(self.kind.mode_choices)}, got {self.value('modes')!r}"])
        return modes

    def validate(self) -> list[str]:
        try:
            kind = self.kind
        except ScenarioError as exc:
            return exc.problems
        problems = []
        allowed = _SIM_KEYS | kind.defaults.keys()
        for key in sorted(self.params):
            if key not in allowed:
                problems.append(f"unknown parameter {key!r} for {self.base}")
        if self.n_trials < 1:
            problems.append("trials must be at least 1")
        if problems:
            return problems
        try:
            self.sim_params()
            self.modes()
            self._check_kind_params()
            topo = kind.topology(self)
        except ScenarioError as exc:
            return exc.problems
        return topo.validate()

    def _check_kind_params(self) -> None:
        # Numeric defaults fix the type: "" means optional integer, anything else an integer list.
        for key, default in self.kind.defaults.items():
            if key in ("modes", "strategies"):
                continue
            if default == "":
                if self.value(key):
                    self.int(key)
            elif default.replace(",", "").isdigit():
                self.ints(key)
        if "strategies" in self.kind.defaults:
            bad = [s for s in self.words("strategies") if s not in ("naive", "smarter")]
            if bad or not self.words("strategies"):
                raise ScenarioError([f"strategies must be drawn from naive,smarter, got {self.value('strategies')!r}"])


_SIM_KEYS = frozenset(f.name for f in dataclasses.fields(SimParams))


@dataclass(frozen=True)
class ScenarioKind:
    name: str
    description: str
    defaults: dict[str, str]
    trials: int
    topology: Callable[[Scenario], Topology]
    run: Callable[[Scenario, MetricsReport], None]
    mode_choices: tuple[str, ...] = (VANILLA, HANGUARD)


# -- shared trial plumbing -------------------------------------------------------


def _phase(sc: Scenario, trial: int, phone: str, interval_us: int) -> int:
    return random.Random(f"{sc.seed}|phase|{trial}|{phone}|{interval_us}").randrange(interval_us)


def _make_world(
    sc: Scenario,
    report: MetricsReport,
    topo: Topology,
    mode: str,
    trial: int,
    params: SimParams | None = None,
    setup: Callable[[Policy], Policy] | None = None,
    label: str | None = None,
    phases: dict[str, int] | None = None,
) -> World:
    params = params or sc.sim_params()
    w = World(
        topo,
        params,
        vanilla=mode == VANILLA,
        seed=sc.seed,
        trial=trial,
        trace=report.trace if sc.trace else None,
        label=label or mode,
        setup=setup,
    )
    if phases is None:
        phases = {p.name: _phase(sc, trial, p.name, params.poll_ms * MS) for p in topo.phones}
    w.schedule_flows()
    w.start_monitors(phases)
    return w


def _record(report: MetricsReport, w: World, trial: int, prefix: str) -> None:
    """Standard rows every scenario emits, plus world-level invariant failures."""
    for (action, reason), n in sorted(w.controller.verdicts.items()):
        report.add(trial, f"{prefix}.verdict.{action}.{reason}", n)
    report.add(trial, f"{prefix}.packets_injected", w.injected)
    report.add(trial, f"{prefix}.packets_forwarded", w.forwarded)
    report.add(trial, f"{prefix}.packets_dropped", w.dropped)
    report.add(trial, f"{prefix}.pfdc_lookups", w.controller.counters["pfdc_lookups"])
    report.add(trial, f"{prefix}.pfdc_lookups_unprotected", w.unprotected_lookups)
    report.add(trial, f"{prefix}.notifications", len(w.log.notifications()))
    for name, mon in w.monitors.items():
        stats = mon.state.poll_stats
        if stats.per_poll_lines:
            report.add(trial, f"{prefix}.{name}.lines_parsed", stats.lines_parsed)
            report.add(trial, f"{prefix}.{name}.polls", len(stats.per_poll_lines))
        if stats.actual_intervals:
            report.add(trial, f"{prefix}.{name}.poll_interval_mean_us", statistics.fmean(stats.actual_intervals))
            report.add(trial, f"{prefix}.{name}.poll_interval_max_us", max(stats.actual_intervals))
    for fr in w.flows.values():
        base = f"{prefix}.flow.{fr.name}"
        report.add(trial, f"{base}.success", fr.success)
        report.add(trial, f"{base}.detected", fr.flow in w.detected)
        latency = w.decision_latency(fr.name)
        if latency is not None:
            report.add(trial, f"{base}.decision_latency_us", latency)
        reasons: dict[str, int] = {}
        for _, _, v in fr.verdicts:
            key = f"{v.action.value}.{v.reason.value}"
            reasons[key] = reasons.get(key, 0) + 1
        for key in sorted(reasons):
            report.add(trial, f"{base}.verdict.{key}", reasons[key])
    for rec in w.log.records:
        report.events.append((trial, rec))
    for msg in w.failures:
        report.fail(f"{prefix} trial {trial}: {msg}")


def _reasons(w: World, flow_name: str) -> set[str]:
    return {v.reason.value for _, _, v in w.flows[flow_name].verdicts}


def _request_packets(w: World, flow_name: str) -> int:
    return len(w.flows[flow_name].verdicts)


def _alerts(w: World, phone: str) -> list[str]:
    mon = w.monitors.get(phone)
    return [a.reason for a in mon.alerts] if mon else []


def _flow(name, src, dst, app="", slot=0, **kw) -> FlowSpec:
    return FlowSpec(name=name, src=src, dst=dst, app=app, slot=slot, **kw)


# -- S1: unauthorized app on an authorized phone ----------------------------------------


def _s1_topology(sc: Scenario) -> Topology:
    messages = sc.int("messages")
    devices = [*ACTUATORS, *SENSORS]
    flows = []
    for i, dev in enumerate(devices):
        start = 20 * MS + i * 200 * MS
        flows.append(_flow(f"official-{dev.name}", ALICE.name, dev.name, _official_app(dev), 2 * i, dst_port=WEMO_PORT, start_us=start, messages=messages))
        flows.append(_flow(f"attacker-{dev.name}", ALICE.name, dev.name, FLASHLIGHT_APP, 2 * i + 1, dst_port=WEMO_PORT, start_us=start + 50 * MS, messages=messages))
    return Topology(
        phones=[ALICE],
        hosts=devices,
        apps=[WEMO_APP, NERD_APP, FLASHLIGHT_APP],
        installs=[InstallSpec(ALICE.name, WEMO_APP, 10061), InstallSpec(ALICE.name, NERD_APP, 10062), InstallSpec(ALICE.name, FLASHLIGHT_APP, 10099)],
        bindings=_home_bindings(),
        flows=flows,
    )


def expected_attacker_packets(messages: int, retries: int) -> int:
    """Every attempt of every message is dropped, plus the closing FIN."""
    return messages * (retries + 1) + 1


def _s1_run(sc: Scenario, report: MetricsReport) -> None:
    params = sc.sim_params()
    messages = sc.int("messages")
    for mode in sc.modes():
        for trial in range(sc.n_trials):
            topo = _s1_topology(sc)
            w = _make_world(sc, report, topo, mode, trial)
            w.run_until_quiet()
            _record(report, w, trial, mode)
            official = [f for f in w.flows.values() if f.name.startswith("official-")]
            attacker = [f for f in w.flows.values() if f.name.startswith("attacker-")]
            report.add(trial, f"{mode}.official_success", sum(f.success for f in official))
            report.add(trial, f"{mode}.attacker_success", sum(f.success for f in attacker))
            tag = f"{mode} trial {trial}"
            if mode == VANILLA:
                report.expect(all(f.success for f in w.flows.values()), f"{tag}: every flow should succeed without enforcement")
                report.expect(w.dropped == 0, f"{tag}: vanilla dropped {w.dropped} packets")
                continue
            report.expect(all(f.success for f in official), f"{tag}: an official-app flow failed")
            report.expect(not any(f.success for f in attacker), f"{tag}: an attacker flow got through")
            for f in attacker:
                report.expect(_reasons(w, f.name) == {Reason.NO_DECISION.value}, f"{tag}: {f.name} saw {_reasons(w, f.name)}")
                want = expected_attacker_packets(messages, params.retries)
                report.expect(_request_packets(w, f.name) == want, f"{tag}: {f.name} sent {_request_packets(w, f.name)} packets, expected {want}")
            for f in official:
                report.expect(Reason.PHONE_LEVEL_DENY.value not in _reasons(w, f.name), f"{tag}: {f.name} phone-level denied")
            mismatches = _alerts(w, ALICE.name).count("app category does not match device")
            report.expect(mismatches == len(attacker), f"{tag}: expected {len(attacker)} category alerts, got {mismatches}")


# -- S2: repackaged app ------------------------------------------------------------


def _s2_topology(sc: Scenario) -> Topology:
    messages = sc.int("messages")
    wemo = [SWITCH, INSIGHT, MOTION]
    flows = [_flow("official-wemo-switch", ALICE.name, SWITCH.name, WEMO_APP, 0, dst_port=WEMO_PORT, start_us=20 * MS, messages=messages)]
    for i, dev in enumerate(wemo, start=1):
        flows.append(_flow(f"repackaged-{dev.name}", BOB.name, dev.name, WEMO_APP, i, dst_port=WEMO_PORT, start_us=20 * MS + i * 150 * MS, messages=messages))
    return Topology(
        phones=[ALICE, BOB],
        hosts=[*ACTUATORS, *SENSORS],
        apps=[WEMO_APP, NERD_APP],
        installs=[InstallSpec(ALICE.name, WEMO_APP, 10061), InstallSpec(BOB.name, WEMO_APP, 10061, repackaged=True)],
        bindings=_home_bindings(),
        flows=flows,
    )


def _s2_run(sc: Scenario, report: MetricsReport) -> None:
    for mode in sc.modes():
        for trial in range(sc.n_trials):
            w = _make_world(sc, report, _s2_topology(sc), mode, trial)
            w.run_until_quiet()
            _record(report, w, trial, mode)
            forged = [f for f in w.flows.values() if f.name.startswith("repackaged-")]
            report.add(trial, f"{mode}.attacker_success", sum(f.success for f in forged))
            tag = f"{mode} trial {trial}"
            if mode == VANILLA:
                report.expect(all(f.success for f in w.flows.values()), f"{tag}: every flow should succeed without enforcement")
                continue
            report.expect(w.flows["official-wemo-switch"].success, f"{tag}: official app failed")
            for f in forged:
                report.expect(not f.success, f"{tag}: {f.name} got through")
                report.expect(_reasons(w, f.name) == {Reason.NO_DECISION.value}, f"{tag}: {f.name} saw {_reasons(w, f.name)}")
            sig_alerts = _alerts(w, BOB.name).count("app signature mismatch (repackaged?)")
            report.expect(sig_alerts == len(forged), f"{tag}: expected {len(forged)} signature alerts, got {sig_alerts}")
            report.expect(BOB.name not in w.sent_frames, f"{tag}: bob's Monitor emitted a decision for a repackaged app")


# -- S3: guest phone ----------------------------------------------------------------


def _s3_topology(sc: Scenario) -> Topology:
    messages = sc.int("messages")
    return Topology(
        phones=[ALICE, GUEST],
        hosts=[SWITCH, INSIGHT, MOTION, PC],
        apps=[WEMO_APP],
        installs=[InstallSpec(ALICE.name, WEMO_APP, 10061), InstallSpec(GUEST.name, WEMO_APP, 10061)],
        bindings=[BindingSpec(WEMO_APP, SWITCH.name, "wemo"), BindingSpec(WEMO_APP, INSIGHT.name, "wemo"), BindingSpec(WEMO_APP, MOTION.name, "wemo")],
        flows=[
            _flow("guest-wemo-switch", GUEST.name, SWITCH.name, WEMO_APP, 0, dst_port=WEMO_PORT, start_us=20 * MS, messages=messages),
            _flow("guest-wemo-insight", GUEST.name, INSIGHT.name, WEMO_APP, 1, dst_port=WEMO_PORT, start_us=40 * MS, messages=messages),
            _flow("guest-pc", GUEST.name, PC.name, WEMO_APP, 2, dst_port=8080, start_us=60 * MS, messages=messages),
            _flow("owner-wemo-switch", ALICE.name, SWITCH.name, WEMO_APP, 3, dst_port=WEMO_PORT, start_us=80 * MS, messages=messages),
        ],
    )


def _guest_decision(w: World) -> ControlMessage:
    flow = FlowId(GUEST.ip, 40000, SWITCH.ip, WEMO_PORT, Protocol.TCP)
    return ControlMessage(
        MsgType.FLOW_DECISION, bytes(32), GUEST.mac, flow, WEMO_APP, official_signature(WEMO_APP), w.controller.policy.version, Flag.VALIDATE
    )


def _s3_run(sc: Scenario, report: MetricsReport) -> None:
    for mode in sc.modes():
        for trial in range(sc.n_trials):
            w = _make_world(sc, report, _s3_topology(sc), mode, trial)
            w.inject_control(GUEST.name, lambda: _guest_decision(w), 30 * MS, cert="cert-guest")
            update_replies = []

            def tamper():
                upd = PolicyUpdate(assign_roles=((GUEST.mac, ADMIN),))
                req = ControlMessage(MsgType.POLICY_UPDATE, bytes(32), GUEST.mac, policy_version=w.controller.policy.version, body=format_update(upd))
                update_replies.append(decode(w.controller.handle_request(encode(req), "cert-guest", w.sim.now)))

            w.at(35 * MS, tamper)
            w.run_until_quiet()
            _record(report, w, trial, mode)
            tag = f"{mode} trial {trial}"
            guest_protected = ["guest-wemo-switch", "guest-wemo-insight"]
            report.add(trial, f"{mode}.attacker_success", sum(w.flows[n].success for n in guest_protected))
            reasons = [r for _, _, r in w.rejections]
            report.add(trial, f"{mode}.rejected_UnknownPhone", reasons.count("UnknownPhone"))
            report.expect(w.flows["guest-pc"].success, f"{tag}: guest lost access to an unprotected host")
            report.expect(w.flows["owner-wemo-switch"].success, f"{tag}: owner phone blocked")
            report.expect("UnknownPhone" in reasons, f"{tag}: forged guest decision not rejected as UnknownPhone")
            report.expect(update_replies and update_replies[0].flag is Flag.INVALIDATE, f"{tag}: guest policy update accepted")
            if mode == VANILLA:
                report.expect(all(w.flows[n].success for n in guest_protected), f"{tag}: guest blocked without enforcement")
                continue
            for n in guest_protected:
                report.expect(not w.flows[n].success, f"{tag}: {n} got through")
                report.expect(_reasons(w, n) == {Reason.PHONE_LEVEL_DENY.value}, f"{tag}: {n} saw {_reasons(w, n)}")


# -- S4: compromised phone -------------------------------------------------------------


def _s4_topology(sc: Scenario) -> Topology:
    bob = dataclasses.replace(BOB, platform=NO_MONITOR)
    return Topology(
        phones=[ALICE, bob],
        hosts=[SWITCH, INSIGHT, MOTION, CAMERA],
        apps=[WEMO_APP, CAMERA_APP],
        installs=[InstallSpec(ALICE.name, WEMO_APP, 10061), InstallSpec(bob.name, WEMO_APP, 10061)],
        bindings=[
            BindingSpec(WEMO_APP, SWITCH.name, "wemo"),
            BindingSpec(WEMO_APP, INSIGHT.name, "wemo"),
            BindingSpec(WEMO_APP, MOTION.name, "wemo"),
            BindingSpec(CAMERA_APP, CAMERA.name, "camera"),
        ],
        flows=[
            _flow(f"benign-{d.name}", ALICE.name, d.name, WEMO_APP, i, dst_port=WEMO_PORT, start_us=10 * MS + i * 20 * MS, messages=3, lifetime_us=5 * SECOND)
            for i, d in enumerate((SWITCH, INSIGHT, MOTION))
        ],
    )


def _restrict_camera(policy: Policy) -> Policy:
    """Move the camera out of Home into an admin-only Cameras domain."""
    cam_type = next(d.device_type for d in policy.devices.values() if d.ip == CAMERA.ip)
    domains = dict(policy.domains)
    domains[HOME] = DomainDef(HOME, domains[HOME].types - {cam_type})
    domains["Cameras"] = DomainDef("Cameras", frozenset({cam_type}))
    return dataclasses.replace(policy, version=policy.version + 1, domains=domains)


def _bob_decision(w: World, port: int, dst: HostSpec, app: str = WEMO_APP) -> ControlMessage:
    bob = w.phones[BOB.name]
    return ControlMessage(
        MsgType.FLOW_DECISION,
        w.credential_of(bob),
        bob.mac,
        FlowId(bob.ip, port, dst.ip, WEMO_PORT, Protocol.TCP),
        app,
        official_signature(app),
        w.controller.policy.version,
        Flag.VALIDATE,
    )


def _s4_run(sc: Scenario, report: MetricsReport) -> None:
    params = sc.sim_params()
    threshold = params.rate_threshold
    count = sc.int("flood_count") if sc.value("flood_count") else threshold + 1
    gap = sc.int("flood_gap_us")
    penalty_us = params.penalty_ms * MS
    t_forge, t_tamper, t_flood = 1 * SECOND, 1500 * MS, 2 * SECOND
    flood_end = t_flood + (count - 1) * gap
    for mode in sc.modes():
        for trial in range(sc.n_trials):
            w = _make_world(sc, report, _s4_topology(sc), mode, trial, setup=_restrict_camera)
            tag = f"{mode} trial {trial}"
            snapshots: dict[str, set] = {}
            tamper_replies: list[ControlMessage] = []

            def alice_entries():
                owned = w.controller.pfdc.owned_by(ALICE.mac)
                return {f for f, e in owned.items() if e.flag is Flag.VALIDATE}

            def bob_packet(port, dst):
                bob = w.phones[BOB.name]
                return Packet(bob.mac, dst.mac, FlowId(bob.ip, port, dst.ip, WEMO_PORT, Protocol.TCP), PacketKind.DATA, WEMO_APP)

            # (a) forged rule for a device bob's role cannot reach
            w.inject_control(BOB.name, lambda: _bob_decision(w, 41000, CAMERA, CAMERA_APP), t_forge)
            w.send_raw("forged-camera", bob_packet(41000, CAMERA), t_forge + 50 * MS, BOB.name)

            # (b) policy tamper: promote itself to Admin
            def tamper():
                upd = PolicyUpdate(assign_roles=((BOB.mac, ADMIN),))
                bob = w.phones[BOB.name]
                req = ControlMessage(MsgType.POLICY_UPDATE, w.credential_of(bob), bob.mac, policy_version=w.controller.policy.version, body=format_update(upd))
                version = w.controller.policy.version
                tamper_replies.append(decode(w.sync_link(BOB.name).request(encode(req))))
                report.expect(w.controller.policy.version == version, f"{tag}: tamper changed the policy version")

            w.at(t_tamper, tamper)

            # (c) PFDC flood
            w.at(t_flood - 1 * MS, lambda: snapshots.__setitem__("before", alice_entries()))
            for i in range(count):
                w.inject_control(BOB.name, lambda i=i: _bob_decision(w, 50000 + i, SWITCH), t_flood + i * gap)
            w.at(flood_end + 100 * MS, lambda: snapshots.__setitem__("after", alice_entries()))
            probes = {
                "probe-early": flood_end + 1 * SECOND,
                "probe-mid": flood_end + penalty_us // 2,
                "probe-late": flood_end + penalty_us - 1 * SECOND,
                "probe-expired": flood_end + penalty_us + 1 * SECOND,
            }
            for label, t in probes.items():
                w.send_raw(label, bob_packet(60000, SWITCH), t, BOB.name)
            w.run(until=flood_end + penalty_us + 2 * SECOND)
            _record(report, w, trial, mode)

            penalties = [r for r in w.log.notifications() if r.event == "pfdc-flood-penalty"]
            penalized = bool(penalties)
            report.add(trial, f"{mode}.flood_count", count)
            report.add(trial, f"{mode}.penalized", penalized)
            report.add(trial, f"{mode}.benign_entries_before", len(snapshots.get("before", ())))
            report.add(trial, f"{mode}.benign_entries_after", len(snapshots.get("after", ())))
            report.add(trial, f"{mode}.benign_entries_preserved", snapshots.get("before") == snapshots.get("after"))
            for label in probes:
                for _, v in w.raw_verdicts.get(label, []):
                    report.add(trial, f"{mode}.{label}", f"{v.action.value}({v.reason.value})")
            reasons = [r for _, _, r in w.rejections]
            report.expect(reasons.count(Reason.PHONE_LEVEL_DENY.value) >= 1, f"{tag}: forged camera rule was not rejected at phone level")
            forged = [v for _, v in w.raw_verdicts.get("forged-camera", [])]
            report.expect(forged and forged[0].reason is Reason.PHONE_LEVEL_DENY, f"{tag}: bob reached the camera: {forged}")
            report.expect(
                bool(tamper_replies) and tamper_replies[0].flag is Flag.INVALIDATE and "RejectedUnauthorized" in tamper_replies[0].body,
                f"{tag}: policy tamper was not rejected as unauthorized",
            )
            report.expect(any(r.event == "RejectedUnauthorized" for r in w.log.notifications()), f"{tag}: no admin notification for tamper")
            report.expect(bool(snapshots.get("before")), f"{tag}: benign phone had no Validate entries before the flood")
            report.expect(snapshots.get("before") == snapshots.get("after"), f"{tag}: benign Validate entries changed during the flood")
            if count > threshold:
                report.expect(len(penalties) == 1, f"{tag}: expected one penalty, got {len(penalties)}")
                if penalties:
                    until = int(penalties[0].detail.rsplit(" ", 1)[-1])
                    report.add(trial, f"{mode}.penalty_us", until - penalties[0].time)
                    report.expect(until - penalties[0].time == penalty_us, f"{tag}: penalty lasted {until - penalties[0].time} us")
                for label in ("probe-early", "probe-mid", "probe-late"):
                    got = [v.reason for _, v in w.raw_verdicts.get(label, [])]
                    report.expect(got == [Reason.PENALIZED], f"{tag}: {label} during penalty got {got}")
                got = [v.reason for _, v in w.raw_verdicts.get("probe-expired", [])]
                report.expect(got and got[0] is not Reason.PENALIZED, f"{tag}: probe after expiry still penalized")
            else:
                report.expect(not penalties, f"{tag}: {count} inserts (threshold {threshold}) must not penalize")
                for label in probes:
                    got = [v.reason for _, v in w.raw_verdicts.get(label, [])]
                    report.expect(Reason.PENALIZED not in got, f"{tag}: {label} penalized below threshold")


# -- S5: decision latency ----------------------------------------------------------


def _s5_topology(sc: Scenario, start_us: int = 100 * MS) -> Topology:
    return Topology(
        phones=[ALICE],
        hosts=[ECHO],
        apps=[ECHO_APP],
        installs=[InstallSpec(ALICE.name, ECHO_APP, 10070)],
        bindings=[BindingSpec(ECHO_APP, ECHO.name, "echo")],
        flows=[_flow("bench", ALICE.name, ECHO.name, ECHO_APP, 0, dst_port=7, start_us=start_us, messages=1)],
    )


def s5_flow_start(phase_us: int, interval_us: int, warm_us: int, lead_us: int) -> int:
    """Open time just ahead of the first poll tick at or after ``warm_us``."""
    k = max(0, math.ceil((warm_us - phase_us) / interval_us))
    return phase_us + k * interval_us - lead_us


def _s5_run(sc: Scenario, report: MetricsReport) -> None:
    params = sc.sim_params()
    warm = sc.int("warm_ms") * MS
    means = {}
    for interval in sc.ints("intervals_ms"):
        p = sc.sim_params(poll_ms=interval)
        samples = []
        for trial in range(sc.n_trials):
            interval_us = interval * MS
            phase = _phase(sc, trial, ALICE.name, interval_us)
            lead = random.Random(f"{sc.seed}|lead|{trial}").randint(0, sc.int("lead_max_us"))
            start = s5_flow_start(phase, interval_us, warm, lead)
            w = _make_world(sc, report, _s5_topology(sc, start), HANGUARD, trial, params=p, phases={ALICE.name: phase}, label=f"poll{interval}")
            w.run_until_quiet()
            prefix = f"poll_{interval}ms"
            _record(report, w, trial, prefix)
            latency = w.decision_latency("bench")
            report.expect(latency is not None, f"{prefix} trial {trial}: decision never stored")
            if latency is not None:
                samples.append(latency)
                report.add(trial, f"{prefix}.decision_latency_us", latency)
        if samples:
            means[interval] = statistics.fmean(samples)
            report.add(-1, f"poll_{interval}ms.mean_decision_latency_us", means[interval])
            report.add(-1, f"poll_{interval}ms.negative_samples", sum(s < 0 for s in samples))
            if params.control_latency_us < params.data_latency_us:
                report.expect(any(s < 0 for s in samples), f"poll_{interval}ms: no negative decision latency")
    if len(means) > 1:
        spread = max(means.values()) - min(means.values())
        bound = min(params.data_jitter_us, params.control_jitter_us)
        report.add(-1, "mean_latency_spread_us", spread)
        report.expect(spread < bound or bound == 0 and spread == 0, f"mean latency spread {spread:.1f} us not below jitter {bound} us")


# -- S6: detection accuracy -----------------------------------------------------------


def detection_oracle(phase_us: int, interval_us: int, open_us: int, close_us: int) -> bool:
    """True iff some tick ``phase + k*interval`` (k >= 0) falls in ``[open, close)``."""
    k = max(0, math.ceil((open_us - phase_us) / interval_us))
    return phase_us + k * interval_us < close_us


def _s6_topology(sc: Scenario, tcp_open: int = 100 * MS, udp_open: int = 100 * MS) -> Topology:
    life = sc.int("lifetime_ms") * MS
    return Topology(
        phones=[ALICE],
        hosts=[ECHO],
        apps=[ECHO_APP],
        installs=[InstallSpec(ALICE.name, ECHO_APP, 10070)],
        bindings=[BindingSpec(ECHO_APP, ECHO.name, "echo")],
        flows=[
            _flow("tcp-echo", ALICE.name, ECHO.name, ECHO_APP, 0, protocol=Protocol.TCP, dst_port=7, start_us=tcp_open, lifetime_us=life),
            _flow("udp-echo", ALICE.name, ECHO.name, ECHO_APP, 1, protocol=Protocol.UDP, dst_port=7, start_us=udp_open, lifetime_us=life),
        ],
    )


def _s6_run(sc: Scenario, report: MetricsReport) -> None:
    warm = sc.int("warm_ms") * MS
    life = sc.int("lifetime_ms") * MS
    for interval in sc.ints("intervals_ms"):
        interval_us = interval * MS
        p = sc.sim_params(poll_ms=interval)
        prefix = f"poll_{interval}ms"
        hits = {"tcp": 0, "udp": 0}
        for trial in range(sc.n_trials):
            phase = sc.int("phase_us") if sc.value("phase_us") else _phase(sc, trial, ALICE.name, interval_us)
            opens = {}
            for proto in ("tcp", "udp"):
                if sc.value("open_at_us"):
                    opens[proto] = sc.int("open_at_us")
                else:
                    opens[proto] = warm + random.Random(f"{sc.seed}|open|{trial}|{proto}").randrange(SECOND)
            topo = _s6_topology(sc, opens["tcp"], opens["udp"])
            w = _make_world(sc, report, topo, HANGUARD, trial, params=p, phases={ALICE.name: phase}, label=prefix)
            w.run_until_quiet()
            _record(report, w, trial, prefix)
            ticks = w.poll_ticks[ALICE.name]
            grid = [phase + k * interval_us for k in range(len(ticks))]
            report.expect(ticks == grid, f"{prefix} trial {trial}: poll ticks drifted from the schedule")
            for proto in ("tcp", "udp"):
                fr = w.flows[f"{proto}-echo"]
                detected = fr.flow in w.detected
                want = detection_oracle(phase, interval_us, opens[proto], opens[proto] + life)
                hits[proto] += detected
                report.add(trial, f"{prefix}.{proto}.detected", detected)
                report.add(trial, f"{prefix}.{proto}.oracle", want)
                report.expect(detected == want, f"{prefix} trial {trial}: {proto} detected={detected} but oracle says {want}")
        for proto, n in hits.items():
            report.add(-1, f"{prefix}.{proto}.detections", n)


# -- S7: stale version replay and partition sync ------------------------------------------


def _s7_topology(sc: Scenario) -> Topology:
    return Topology(
        phones=[ALICE, BOB],
        hosts=[SWITCH, INSIGHT],
        apps=[WEMO_APP],
        installs=[InstallSpec(ALICE.name, WEMO_APP, 10061), InstallSpec(BOB.name, WEMO_APP, 10061)],
        bindings=[BindingSpec(WEMO_APP, SWITCH.name, "wemo"), BindingSpec(WEMO_APP, INSIGHT.name, "wemo")],
        flows=[
            _flow("bob-before", BOB.name, SWITCH.name, WEMO_APP, 0, dst_port=WEMO_PORT, start_us=20 * MS, messages=2, lifetime_us=3 * SECOND),
            _flow("bob-partitioned", BOB.name, INSIGHT.name, WEMO_APP, 1, dst_port=WEMO_PORT, start_us=650 * MS, messages=1, lifetime_us=100 * MS),
            _flow("bob-after", BOB.name, INSIGHT.name, WEMO_APP, 2, dst_port=WEMO_PORT, start_us=1200 * MS, messages=2),
        ],
    )


def _pfdc_view(w: World) -> dict:
    return {f: (e.flag, e.owner_phone) for f, e in w.controller.pfdc.entries.items()}


def _s7_run(sc: Scenario, report: MetricsReport) -> None:
    for mode in sc.modes():
        for trial in range(sc.n_trials):
            w = _make_world(sc, report, _s7_topology(sc), mode, trial)
            tag = f"{mode} trial {trial}"
            state: dict = {}

            def update():
                state["pfdc_before"] = _pfdc_view(w)
                upd = PolicyUpdate(apps=(AppRecord("com.example.thermostat", official_signature("com.example.thermostat")),))
                state["version"] = w.monitors[ALICE.name].mcn_push_update(upd, w.sync_link(ALICE.name), w.sim.now)

            def replay():
                frames = [f for _, m, f in w.sent_frames.get(BOB.name, []) if m.flag is Flag.VALIDATE]
                report.expect(bool(frames), f"{tag}: bob never emitted a Validate to replay")
                if frames:
                    w.inject_frame(BOB.name, frames[0], w.sim.now)

            def heal():
                state["heal"] = w.heal(BOB.name)
                state["bob_version"] = w.monitors[BOB.name].replica_version

            w.at(500 * MS, w.partition, BOB.name)
            w.at(600 * MS, update)
            w.at(700 * MS, replay)
            w.at(800 * MS, lambda: state.__setitem__("pfdc_after_replay", _pfdc_view(w)))
            w.at(1000 * MS, heal)
            w.at(1100 * MS, replay)
            w.run_until_quiet()
            _record(report, w, trial, mode)

            router_version = w.controller.policy.version
            stale = [r for _, p, r in w.rejections if p == BOB.name and r == "StaleVersion"]
            report.add(trial, f"{mode}.router_version", router_version)
            report.add(trial, f"{mode}.bob_version_after_heal", state.get("bob_version", -1))
            report.add(trial, f"{mode}.heal_outcome", state.get("heal", ""))
            report.add(trial, f"{mode}.stale_rejections", len(stale))
            report.expect(state.get("version") == router_version, f"{tag}: MCN update did not land")
            report.expect(state.get("heal") == "updated", f"{tag}: heal outcome {state.get('heal')}")
            report.expect(state.get("bob_version") == router_version, f"{tag}: bob did not converge")
            report.expect(len(stale) == 2, f"{tag}: expected 2 StaleVersion rejections, got {len(stale)}")
            report.expect(state.get("pfdc_before") == state.get("pfdc_after_replay"), f"{tag}: replay changed the PFDC")
            report.expect(w.control_lost >= 1, f"{tag}: partition lost no control traffic")
            report.expect(not w.flows["bob-partitioned"].success, f"{tag}: flow opened during partition got through")
            report.expect(w.flows["bob-after"].success, f"{tag}: bob could not use the network after healing")
            report.expect(any(r.event.endswith("StaleVersion") for r in w.log.notifications()), f"{tag}: no notification for stale replay")


# -- S8: remote adversary vs NAT ----------------------------------------------------------


def _s8_topology(sc: Scenario) -> Topology:
    return Topology(
        phones=[ALICE],
        hosts=[SWITCH, CLOUD, ADVERSARY],
        apps=[WEMO_APP],
        installs=[InstallSpec(ALICE.name, WEMO_APP, 10061)],
        bindings=[BindingSpec(WEMO_APP, SWITCH.name, "wemo")],
        flows=[_flow("switch-cloud", SWITCH.name, CLOUD.name, "", 0, dst_port=443, start_us=100 * MS, messages=sc.int("messages"))],
    )


def _s8_run(sc: Scenario, report: MetricsReport) -> None:
    for mode in sc.modes():
        for trial in range(sc.n_trials):
            w = _make_world(sc, report, _s8_topology(sc), mode, trial)
            local_port = 40000

            def inbound(src: HostSpec, sport: int) -> Packet:
                return Packet(src.mac, SWITCH.mac, FlowId(src.ip, sport, SWITCH.ip, local_port, Protocol.TCP), zone=Zone.WAN_IN)

            probes = {
                "unsolicited-before": (inbound(CLOUD, 443), 5 * MS),
                "adversary": (inbound(ADVERSARY, 443), 500 * MS),
                "cloud-other-port": (inbound(CLOUD, 444), 500 * MS),
                "adversary-same-port": (inbound(ADVERSARY, 443), 600 * MS),
            }
            for label, (pkt, t) in probes.items():
                src = CLOUD.name if pkt.src_mac == CLOUD.mac else ADVERSARY.name
                w.send_raw(label, pkt, t, src)
            w.run_until_quiet()
            _record(report, w, trial, mode)
            tag = f"{mode} trial {trial}"
            report.expect(w.flows["switch-cloud"].success, f"{tag}: device could not reach its cloud service")
            blocked = 0
            for label in probes:
                got = [v for _, v in w.raw_verdicts.get(label, [])]
                report.add(trial, f"{mode}.{label}", f"{got[0].action.value}({got[0].reason.value})" if got else "none")
                blocked += bool(got) and got[0].reason is Reason.NAT_BLOCKED
                if mode == HANGUARD:
                    report.expect(got and got[0].reason is Reason.NAT_BLOCKED, f"{tag}: {label} not NAT-blocked: {got}")
                else:
                    report.expect(got and got[0].forwarded, f"{tag}: {label} blocked without enforcement")
            report.add(trial, f"{mode}.attacker_success", len(probes) - blocked)


# -- S9: IP/MAC spoofing ----------------------------------------------------------------


def _s9_topology(sc: Scenario) -> Topology:
    return Topology(
        phones=[ALICE, GUEST],
        hosts=[SWITCH, INSIGHT],
        apps=[WEMO_APP],
        installs=[InstallSpec(ALICE.name, WEMO_APP, 10061)],
        bindings=[BindingSpec(WEMO_APP, SWITCH.name, "wemo"), BindingSpec(WEMO_APP, INSIGHT.name, "wemo")],
        flows=[_flow("owner-wemo-switch", ALICE.name, SWITCH.name, WEMO_APP, 0, dst_port=WEMO_PORT, start_us=20 * MS, messages=sc.int("messages"))],
    )


def _s9_run(sc: Scenario, report: MetricsReport) -> None:
    def pkt(src_mac, src_ip, dst: HostSpec, sport=45000):
        return Packet(src_mac, dst.mac, FlowId(src_ip, sport, dst.ip, WEMO_PORT, Protocol.TCP))

    spoofs = {
        "guest-claims-owner-ip": (pkt(GUEST.mac, ALICE.ip, SWITCH), GUEST.name),
        "guest-claims-owner-mac": (pkt(ALICE.mac, "192.168.1.201", SWITCH), GUEST.name),
        "device-claims-device-ip": (pkt(INSIGHT.mac, SWITCH.ip, SWITCH), INSIGHT.name),
    }
    for mode in sc.modes():
        for trial in range(sc.n_trials):
            w = _make_world(sc, report, _s9_topology(sc), mode, trial)
            for i, (label, (p, via)) in enumerate(spoofs.items()):
                w.send_raw(label, p, 300 * MS + i * 10 * MS, via)
            w.send_raw("guest-own-address", pkt(GUEST.mac, GUEST.ip, SWITCH), 400 * MS, GUEST.name)
            alice = w.phones[ALICE.name]
            flow = FlowId(ALICE.ip, 46000, SWITCH.ip, WEMO_PORT, Protocol.TCP)

            def forged(cred: bytes):
                return lambda: ControlMessage(
                    MsgType.FLOW_DECISION, cred, ALICE.mac, flow, WEMO_APP, official_signature(WEMO_APP), w.controller.policy.version, Flag.VALIDATE
                )

            w.inject_control(GUEST.name, forged(bytes(32)), 450 * MS, cert=w.cert_of(alice))
            w.inject_control(GUEST.name, forged(w.credential_of(alice)), 460 * MS, cert="cert-guest")
            w.run_until_quiet()
            _record(report, w, trial, mode)
            tag = f"{mode} trial {trial}"
            reasons = [r for _, _, r in w.rejections]
            report.expect("BadCredentials" in reasons, f"{tag}: wrong credentials accepted")
            report.expect("CertMismatch" in reasons, f"{tag}: stolen credentials over another certificate accepted")
            report.expect(w.flows["owner-wemo-switch"].success, f"{tag}: legitimate owner blocked")
            succeeded = 0
            for label in spoofs:
                got = [v for _, v in w.raw_verdicts.get(label, [])]
                report.add(trial, f"{mode}.{label}", f"{got[0].action.value}({got[0].reason.value})" if got else "none")
                succeeded += bool(got) and got[0].forwarded
                if mode == HANGUARD:
                    report.expect(got and got[0].reason is Reason.SPOOF_SUSPECTED, f"{tag}: {label} not flagged: {got}")
            report.add(trial, f"{mode}.attacker_success", succeeded)
            own = [v for _, v in w.raw_verdicts.get("guest-own-address", [])]
            report.add(trial, f"{mode}.guest-own-address", f"{own[0].action.value}({own[0].reason.value})" if own else "none")
            if mode == HANGUARD:
                report.expect(own and own[0].reason is Reason.PHONE_LEVEL_DENY, f"{tag}: guest with its own address got {own}")
                spoof_notes = [r for r in w.log.notifications() if r.event == "spoof-suspected"]
                report.expect(len(spoof_notes) == len(spoofs), f"{tag}: expected {len(spoofs)} spoof notifications, got {len(spoof_notes)}")
            else:
                report.expect(succeeded == len(spoofs), f"{tag}: spoofed packets blocked without enforcement")


# -- S10: managed vs unmanaged overhead ---------------------------------------------------

S10_CLASSES = ("unmanaged", "procfs-managed", "tunnel-managed", "tunnel-unmanaged")


def _s10_topology(sc: Scenario, klass: str) -> Topology:
    messages = sc.int("messages")
    gap = sc.int("gap_ms") * MS
    phone = CAROL if klass.startswith("tunnel") else ALICE
    app = ECHO_APP if klass.endswith("-managed") else BROWSER_APP
    dst = ECHO if klass.endswith("-managed") else dataclasses.replace(PC, echo_us=ECHO.echo_us)
    return Topology(
        phones=[ALICE, CAROL],
        hosts=[ECHO, PC],
        apps=[ECHO_APP, BROWSER_APP],
        installs=[InstallSpec(p.name, a, uid) for p in (ALICE, CAROL) for a, uid in ((ECHO_APP, 10070), (BROWSER_APP, 10080))],
        bindings=[BindingSpec(ECHO_APP, ECHO.name, "echo")],
        flows=[_flow(klass, phone.name, dst.name, app, 0, dst_port=7, start_us=20 * MS, messages=messages, gap_us=gap)],
    )


def _s10_run(sc: Scenario, report: MetricsReport) -> None:
    params = sc.sim_params()
    hops = 2  # request leg and reply leg each cross the tunnel once
    for trial in range(sc.n_trials):
        rtts: dict[tuple[str, str], list[int]] = {}
        lookups = {}
        for mode in sc.modes():
            for klass in S10_CLASSES:
                w = _make_world(sc, report, _s10_topology(sc, klass), mode, trial, label=f"{mode}-{klass}")
                w.run_until_quiet()
                prefix = f"{mode}.{klass}"
                _record(report, w, trial, prefix)
                fr = w.flows[klass]
                # Message 0 is connection setup and may wait for the first decision.
                series = [fr.rtt.get(i, -1) for i in range(1, fr.spec.messages)]
                rtts[(mode, klass)] = series
                lookups[(mode, klass)] = w.unprotected_lookups
                for i, value in enumerate(series, start=1):
                    report.add(trial, f"{prefix}.rtt_us.{i}", value)
                if series:
                    report.add(trial, f"{prefix}.rtt_mean_us", statistics.fmean(series))
                report.expect(fr.success, f"{prefix} trial {trial}: flow did not complete")
        tag = f"trial {trial}"
        for key, n in lookups.items():
            report.expect(n == 0, f"{tag}: {key} consulted the PFDC for non-protected destinations")
        if (VANILLA, "unmanaged") in rtts and (HANGUARD, "unmanaged") in rtts:
            report.expect(rtts[(VANILLA, "unmanaged")] == rtts[(HANGUARD, "unmanaged")], f"{tag}: unmanaged RTT differs between modes")
            report.expect(
                rtts[(VANILLA, "tunnel-unmanaged")] == rtts[(HANGUARD, "tunnel-unmanaged")], f"{tag}: unmanaged iOS RTT differs between modes"
            )
        if HANGUARD in sc.modes():
            base = rtts[(HANGUARD, "unmanaged")]
            report.expect(rtts[(HANGUARD, "procfs-managed")] == base, f"{tag}: procfs-managed RTT differs from unmanaged")
            diffs = {t - u for t, u in zip(rtts[(HANGUARD, "tunnel-managed")], base)}
            report.add(trial, "tunnel_overhead_us", sorted(diffs)[0] if len(diffs) == 1 else -1)
            report.expect(diffs == {hops * params.hop_us}, f"{tag}: tunnel overhead {sorted(diffs)} != {hops} x {params.hop_us} us")


# -- POLL: naive vs smarter polling ---------------------------------------------------------


def _poll_topology(sc: Scenario) -> Topology:
    phone = dataclasses.replace(ALICE, background_sockets=sc.int("background"))
    n = sc.int("flows")
    duration = sc.int("duration_ms") * MS
    flows = [
        _flow(f"flow-{i}", phone.name, ECHO.name if i % 2 == 0 else PC.name, ECHO_APP, i, dst_port=7, start_us=(i + 1) * duration // (n + 1), messages=3)
        for i in range(n)
    ]
    return Topology(
        phones=[phone],
        hosts=[ECHO, PC],
        apps=[ECHO_APP],
        installs=[InstallSpec(phone.name, ECHO_APP, 10070)],
        bindings=[BindingSpec(ECHO_APP, ECHO.name, "echo")],
        flows=flows,
    )


def _poll_run(sc: Scenario, report: MetricsReport) -> None:
    duration = sc.int("duration_ms") * MS
    totals = {}
    for strategy in sc.words("strategies"):
        if strategy not in ("naive", "smarter"):
            raise ScenarioError([f"unknown strategy {strategy!r}"])
        p = sc.sim_params(strategy=strategy)
        for trial in range(sc.n_trials):
            w = _make_world(sc, report, _poll_topology(sc), HANGUARD, trial, params=p, label=strategy)
            files = w.files[ALICE.name]
            idle_lines = []
            last: dict[str, int] = {}

            # Wrap the poll so each tick knows whether any table changed since the last one.
            original = w._poll

            def poll(name, original=original, idle_lines=idle_lines, last=last, files=files, w=w):
                now_mtimes = {n: f.mtime for n, f in files.items()}
                idle = bool(last) and now_mtimes == last
                last.clear()
                last.update(now_mtimes)
                original(name)
                if idle:
                    idle_lines.append(w.monitors[name].state.poll_stats.per_poll_lines[-1])

            w._poll = poll
            w.run(until=duration)
            _record(report, w, trial, strategy)
            stats = w.monitors[ALICE.name].state.poll_stats
            totals[(strategy, trial)] = stats.lines_parsed
            report.add(trial, f"{strategy}.idle_polls", len(idle_lines))
            report.add(trial, f"{strategy}.idle_poll_lines", sum(idle_lines))
            report.expect(bool(idle_lines), f"{strategy} trial {trial}: benchmark trace has no idle polls")
            if strategy == "smarter":
                report.expect(sum(idle_lines) == 0, f"smarter trial {trial}: parsed {sum(idle_lines)} lines on idle polls")
    for trial in range(sc.n_trials):
        if ("naive", trial) in totals and ("smarter", trial) in totals:
            naive, smarter = totals[("naive", trial)], totals[("smarter", trial)]
            report.add(trial, "naive_to_smarter_ratio", naive / max(smarter, 1))
            report.expect(smarter * 10 <= naive, f"trial {trial}: smarter parsed {smarter} lines vs naive {naive}, less than 10x saving")


# -- registry -----------------------------------------------------------------------

_BOTH = f"{VANILLA},{HANGUARD}"

KINDS: dict[str, ScenarioKind] = {
    k.name: k
    for k in (
        ScenarioKind("S1", "malicious app on a HAN user phone", {"modes": _BOTH, "messages": "3"}, 1, _s1_topology, _s1_run),
        ScenarioKind("S2", "repackaged app reusing an official package name", {"modes": _BOTH, "messages": "3"}, 1, _s2_topology, _s2_run),
        ScenarioKind("S3", "unregistered guest phone", {"modes": _BOTH, "messages": "2"}, 1, _s3_topology, _s3_run),
        ScenarioKind(
            "S4",
            "compromised phone: forged rule, policy tamper, PFDC flood",
            {"modes": HANGUARD, "flood_count": "", "flood_gap_us": "1000"},
            1,
            _s4_topology,
            _s4_run,
            (HANGUARD,),
        ),
        ScenarioKind(
            "S5",
            "decision latency across polling intervals",
            {"modes": HANGUARD, "intervals_ms": "10,30,100", "warm_ms": "50", "lead_max_us": "100"},
            10,
            _s5_topology,
            _s5_run,
            (HANGUARD,),
        ),
        ScenarioKind(
            "S6",
            "detection of short-lived TCP and UDP flows",
            {"modes": HANGUARD, "intervals_ms": "10,30,100,150", "lifetime_ms": "40", "warm_ms": "50", "phase_us": "", "open_at_us": ""},
            10,
            _s6_topology,
            _s6_run,
            (HANGUARD,),
        ),
        ScenarioKind("S7", "stale policy version replay and partition recovery", {"modes": HANGUARD}, 1, _s7_topology, _s7_run, (HANGUARD,)),
        ScenarioKind("S8", "remote adversary against the NAT", {"modes": _BOTH, "messages": "3"}, 1, _s8_topology, _s8_run),
        ScenarioKind("S9", "IP and MAC spoofing", {"modes": _BOTH, "messages": "2"}, 1, _s9_topology, _s9_run),
        ScenarioKind(
            "S10",
            "RTT of managed and unmanaged flows",
            {"modes": _BOTH, "messages": "51", "gap_ms": "10"},
            3,
            lambda sc: _s10_topology(sc, "tunnel-managed"),
            _s10_run,
        ),
        ScenarioKind(
            "POLL",
            "parse work of naive vs smarter polling",
            {"modes": HANGUARD, "strategies": "naive,smarter", "duration_ms": "30000", "background": "40", "flows": "6"},
            1,
            _poll_topology,
            _poll_run,
            (HANGUARD,),
        ),
    )
}

BUILTIN = tuple(KINDS)


def builtin(name: str, **params) -> Scenario:
    if name not in KINDS:
        raise ScenarioError([f"unknown scenario {name!r}; built-ins are {', '.join(BUILTIN)}"])
    return Scenario(name, name, {k: str(v) for k, v in params.items()})


def run_scenario(scenario: Scenario, seed: int | None = None, trace: bool = False) -> MetricsReport:
    """Run every trial of ``scenario``; a pure function of (scenario, seed)."""
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    if trace:
        scenario = dataclasses.replace(scenario, trace=True)
    problems = scenario.validate()
    if problems:
        raise ScenarioError(problems)
    report = MetricsReport(scenario.name, scenario.seed)
    scenario.kind.run(scenario, report)
    return report


def validate_scenario(scenario: Scenario) -> None:
    problems = scenario.validate()
    if problems:
        raise ScenarioError(problems)


def parse_scenarios(text: str) -> dict[str, Scenario]:
    """Parse a parameter file of ``scenario NAME base=Sx [trials=N] [seed=N]`` sections.

    Lines after a section head carry ``key=value`` overrides for it.
    """
    try:
        rows = tokenize(text)
    except PolicyError as exc:
        raise ScenarioError([str(exc)]) from None
    out: dict[str, Scenario] = {}
    current: Scenario | None = None
    for lineno, head, fields in rows:
        if head == "scenario":
            name = fields.pop("name", None)
            if not name:
                raise ScenarioError([f"line {lineno}: scenario needs a name"])
            if name in out:
                raise ScenarioError([f"line {lineno}: duplicate scenario {name!r}"])
            base = fields.pop("base", name)
            current = Scenario(name, base)
            out[name] = current
        else:
            key, sep, value = head.partition("=")
            if not sep:
                raise ScenarioError([f"line {lineno}: expected key=value, got {head!r}"])
            if current is None:
                raise ScenarioError([f"line {lineno}: parameter outside a scenario section"])
            fields = {key: value, **fields}
        if current is None:
            continue
        for key, value in fields.items():
            if key == "trials":
                current.trials = _int_field(lineno, key, value)
            elif key == "seed":
                current.seed = _int_field(lineno, key, value)
            else:
                current.params[key] = value
    for sc in out.values():
        problems = sc.validate()
        if problems:
            raise ScenarioError([f"scenario {sc.name}: {p}" for p in problems])
    return out


def _int_field(lineno: int, key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ScenarioError([f"line {lineno}: {key} must be an integer, got {value!r}"]) from None
