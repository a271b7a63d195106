"""Static description of a simulated HAN: who is on it and what they do."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from ..control_proto import Protocol
from ..policy import HAN_USER, normalize_mac

DEVICE = "device"
SERVER = "server"
REMOTE = "remote"
HOST_KINDS = (DEVICE, SERVER, REMOTE)

ANDROID = "android"
IOS = "ios"
NO_MONITOR = "none"
PLATFORMS = (ANDROID, IOS, NO_MONITOR)


def official_signature(app_id: str) -> bytes:
    return hashlib.sha256(f"official:{app_id}".encode()).digest()


def forged_signature(app_id: str) -> bytes:
    return hashlib.sha256(f"repackaged:{app_id}".encode()).digest()


class ScenarioError(ValueError):
    """A scenario whose topology or parameters do not resolve."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid scenario: " + "; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class PhoneSpec:
    name: str
    mac: str
    ip: str
    user: str = ""
    password: str = "secret"
    cert: str = ""
    role: str = HAN_USER
    mcn: bool = False
    registered: bool = True
    platform: str = ANDROID
    managed_apps: tuple[str, ...] = ()
    # LISTEN sockets from unrelated system services; they only cost parse work.
    background_sockets: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mac", normalize_mac(self.mac))


@dataclass(frozen=True)
class HostSpec:
    name: str
    mac: str
    ip: str
    kind: str = DEVICE
    protected: bool = True
    device_type: str = ""
    echo_us: int = 100

    def __post_init__(self):
        object.__setattr__(self, "mac", normalize_mac(self.mac))


@dataclass(frozen=True)
class InstallSpec:
    phone: str
    app: str
    uid: int
    repackaged: bool = False


@dataclass(frozen=True)
class BindingSpec:
    app: str
    device: str
    category: str


@dataclass(frozen=True)
class FlowSpec:
    """One scripted connection.

    Message 0 opens the connection; later messages follow ``warmup_us``
    after the open and then every ``gap_us``. With ``lifetime_us`` set the
    socket closes at ``start_us + lifetime_us`` whatever happened on the wire.
    """

    name: str
    src: str
    dst: str
    app: str = ""
    protocol: Protocol = Protocol.TCP
    dst_port: int = 80
    src_port: int = 0
    start_us: int = 0
    messages: int = 1
    warmup_us: int = 100_000
    gap_us: int = 10_000
    lifetime_us: int | None = None
    slot: int = 0


@dataclass
class Topology:
    phones: list[PhoneSpec] = field(default_factory=list)
    hosts: list[HostSpec] = field(default_factory=list)
    apps: list[str] = field(default_factory=list)
    installs: list[InstallSpec] = field(default_factory=list)
    bindings: list[BindingSpec] = field(default_factory=list)
    flows: list[FlowSpec] = field(default_factory=list)

    def phone(self, name: str) -> PhoneSpec:
        return next(p for p in self.phones if p.name == name)

    def host(self, name: str) -> HostSpec:
        return next(h for h in self.hosts if h.name == name)

    def validate(self) -> list[str]:
        problems = []
        names = [p.name for p in self.phones] + [h.name for h in self.hosts]
        for dup in sorted({n for n in names if names.count(n) > 1}):
            problems.append(f"duplicate node name {dup}")
        phones = {p.name for p in self.phones}
        hosts = {h.name: h for h in self.hosts}
        apps = set(self.apps)
        for p in self.phones:
            if p.platform not in PLATFORMS:
                problems.append(f"phone {p.name}: unknown platform {p.platform}")
            for app in p.managed_apps:
                if app not in apps:
                    problems.append(f"phone {p.name}: managed app {app} is not defined")
        if sum(1 for p in self.phones if p.mcn and p.registered) != 1:
            problems.append("exactly one registered MCN phone required")
        for h in self.hosts:
            if h.kind not in HOST_KINDS:
                problems.append(f"host {h.name}: unknown kind {h.kind}")
        installed = set()
        for inst in self.installs:
            if inst.phone not in phones:
                problems.append(f"install: unknown phone {inst.phone}")
            if inst.app not in apps:
                problems.append(f"install: unknown app {inst.app}")
            installed.add((inst.phone, inst.app))
        for b in self.bindings:
            if b.app not in apps:
                problems.append(f"binding: unknown app {b.app}")
            if b.device not in hosts or hosts[b.device].kind != DEVICE:
                problems.append(f"binding: unknown device {b.device}")
        for f in self.flows:
            if f.src in phones:
                if (f.src, f.app) not in installed:
                    problems.append(f"flow {f.name}: app {f.app or '?'} not installed on {f.src}")
            elif f.src not in hosts:
                problems.append(f"flow {f.name}: unknown source {f.src}")
            if f.dst not in hosts:
                problems.append(f"flow {f.name}: unknown destination {f.dst}")
            if f.messages < 1:
                problems.append(f"flow {f.name}: needs at least one message")
        return problems
