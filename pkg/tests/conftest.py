import random

import pytest

from hanguard.policy import (
    AppRecord,
    DeviceRecord,
    DomainDef,
    PhoneRecord,
    Policy,
    Role,
    bind_app_device,
    credential_hash,
    default_policy,
)

MCN_MAC = "02:00:00:00:00:01"
USER_MAC = "02:00:00:00:00:02"
GUEST_MAC = "02:00:00:00:00:99"
SWITCH_MAC = "0A:00:00:00:00:01"
CAMERA_MAC = "0A:00:00:00:00:02"
PRINTER_MAC = "0A:00:00:00:00:03"


def make_policy():
    phones = [
        PhoneRecord(MCN_MAC, "192.168.1.189", "", "alice", credential_hash("alice", "pw-a"), "cert-alice", True),
        PhoneRecord(USER_MAC, "192.168.1.190", "", "bob", credential_hash("bob", "pw-b"), "cert-bob"),
    ]
    devices = [
        DeviceRecord(SWITCH_MAC, "192.168.2.32"),
        DeviceRecord(CAMERA_MAC, "192.168.2.33", "camera_t"),
        DeviceRecord(PRINTER_MAC, "192.168.1.40", protected=False, subnet="phones"),
    ]
    apps = [AppRecord("com.wemo", bytes([1]) * 32), AppRecord("com.cam", bytes([2]) * 32)]
    policy = default_policy(phones, devices, apps)
    policy = bind_app_device(policy, "com.wemo", SWITCH_MAC, "wemo")
    return bind_app_device(policy, "com.cam", CAMERA_MAC, "cam")


@pytest.fixture
def policy():
    return make_policy()


def random_policy(rng: random.Random) -> Policy:
    """Up to 5 roles, domains and types; arbitrary overlaps."""
    types = [f"t{i}_t" for i in range(rng.randint(1, 5))]
    domains = {
        f"d{i}": DomainDef(f"d{i}", frozenset(rng.sample(types, rng.randint(0, len(types)))))
        for i in range(rng.randint(1, 5))
    }
    roles = {}
    for i in range(rng.randint(1, 5)):
        doms = set(rng.sample(sorted(domains), rng.randint(0, len(domains))))
        if rng.random() < 0.15:
            doms.add("*")
        roles[f"r{i}"] = Role(f"r{i}", frozenset(doms))
    cats = ["c0", "c1", "c2", "c3"]
    devices = {}
    for i in range(rng.randint(1, 4)):
        mac = f"0A:00:00:00:01:{i:02X}"
        devices[mac] = DeviceRecord(mac, f"10.0.2.{i}", rng.choice(types), frozenset(rng.sample(cats, rng.randint(0, 3))))
    phones = {}
    for i in range(rng.randint(1, 3)):
        mac = f"02:00:00:00:01:{i:02X}"
        phones[mac] = PhoneRecord(mac, f"10.0.1.{i}", rng.choice(sorted(roles)), f"u{i}", bytes(32), f"c{i}", i == 0)
    apps = {
        f"a{i}": AppRecord(f"a{i}", bytes(32), frozenset(rng.sample(cats, rng.randint(0, 3)))) for i in range(rng.randint(1, 3))
    }
    return Policy(1, roles, domains, devices, phones, apps)


def naive_te(policy: Policy, role: str, device_mac: str) -> bool:
    """Expand every (role, domain, type) triple and look for the device's type."""
    reachable = set()
    for r in policy.roles.values():
        names = policy.domains if "*" in r.accessible_domains else r.accessible_domains
        for d in names:
            if d in policy.domains:
                for t in policy.domains[d].types:
                    reachable.add((r.name, t))
        if "*" in r.accessible_domains:
            for dev in policy.devices.values():
                reachable.add((r.name, dev.device_type))
    return (role, policy.devices[device_mac].device_type) in reachable


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion; call with (ok, detail) before asserting."""
    number = request.node.get_closest_marker("criterion").args[0]

    def record(ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    ACCEPTANCE[number] = (False, "did not finish")
    return record


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
