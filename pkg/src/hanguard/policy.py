"""RBAC policy model: roles over domains of device types (type enforcement),
plus category tags shared by apps and devices (multi-category security).

Policies are immutable values. Every mutation returns a new policy with a
bumped version; the router's update service is the single writer.
"""

from __future__ import annotations

import hashlib
import ipaddress
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Mapping

ADMIN = "Admin"
HAN_USER = "HANUser"
GUEST = "Guest"
HOME = "Home"
UNPROTECTED = "Unprotected"
ALL_DOMAINS = "*"

SUBNETS = ("phones", "iot")


class PolicyError(Exception):
    """Base class for policy errors."""


class UnknownPrincipal(PolicyError, LookupError):
    """A role, phone, device or app is not registered in the policy."""


class ConfigurationError(PolicyError):
    """Setup inputs cannot produce a valid default policy."""


class PolicyParseError(PolicyError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class UpdateRejected(PolicyError):
    UNAUTHORIZED = "RejectedUnauthorized"
    INVALID = "RejectedInvalid"

    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


class Decision(Enum):
    ALLOW = "Allow"
    DENY_PHONE_LEVEL = "DenyPhoneLevel"
    DENY_APP_LEVEL = "DenyAppLevel"


def normalize_mac(mac: str | bytes) -> str:
    if isinstance(mac, (bytes, bytearray)):
        raw = bytes(mac)
    else:
        raw = bytes.fromhex(mac.replace(":", "").replace("-", ""))
    if len(raw) != 6:
        raise ValueError(f"MAC address must be 6 bytes: {mac!r}")
    return ":".join(f"{b:02X}" for b in raw)


def mac_bytes(mac: str) -> bytes:
    return bytes.fromhex(normalize_mac(mac).replace(":", ""))


def credential_hash(username: str, password: str) -> bytes:
    return hashlib.sha256(f"{username}:{password}".encode("ascii")).digest()


@dataclass(frozen=True)
class Role:
    name: str
    accessible_domains: frozenset[str] = frozenset()

    @property
    def is_wildcard(self) -> bool:
        return ALL_DOMAINS in self.accessible_domains


@dataclass(frozen=True)
class DomainDef:
    name: str
    types: frozenset[str] = frozenset()


@dataclass(frozen=True)
class DeviceRecord:
    mac: str
    ip: str
    device_type: str = ""
    categories: frozenset[str] = frozenset()
    protected: bool = True
    subnet: str = "iot"


@dataclass(frozen=True)
class PhoneRecord:
    mac: str
    reserved_ip: str
    role: str
    user: str
    credential_hash: bytes
    cert_id: str
    is_mcn: bool = False


@dataclass(frozen=True)
class AppRecord:
    app_id: str
    signature: bytes
    categories: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Policy:
    version: int = 1
    roles: Mapping[str, Role] = field(default_factory=dict)
    domains: Mapping[str, DomainDef] = field(default_factory=dict)
    devices: Mapping[str, DeviceRecord] = field(default_factory=dict)
    phones: Mapping[str, PhoneRecord] = field(default_factory=dict)
    apps: Mapping[str, AppRecord] = field(default_factory=dict)

    def role(self, name: str) -> Role:
        try:
            return self.roles[name]
        except KeyError:
            raise UnknownPrincipal(f"unknown role {name!r}") from None

    def device(self, mac: str) -> DeviceRecord:
        try:
            return self.devices[normalize_mac(mac)]
        except (KeyError, ValueError):
            raise UnknownPrincipal(f"unknown device {mac!r}") from None

    def phone(self, mac: str) -> PhoneRecord:
        try:
            return self.phones[normalize_mac(mac)]
        except (KeyError, ValueError):
            raise UnknownPrincipal(f"unknown phone {mac!r}") from None

    def app(self, app_id: str) -> AppRecord:
        try:
            return self.apps[app_id]
        except KeyError:
            raise UnknownPrincipal(f"unknown app {app_id!r}") from None

    def role_of(self, mac: str) -> str:
        """Role for a source MAC; unregistered phones fall back to Guest."""
        phone = self.phones.get(normalize_mac(mac))
        return phone.role if phone is not None else GUEST

    def device_by_ip(self, ip: str) -> DeviceRecord | None:
        for dev in self.devices.values():
            if dev.ip == ip:
                return dev
        return None

    def mcn(self) -> PhoneRecord | None:
        masters = [p for p in self.phones.values() if p.is_mcn]
        return masters[0] if len(masters) == 1 else None


def te_check(policy: Policy, role_name: str, device_mac: str) -> bool:
    role = policy.role(role_name)
    device = policy.device(device_mac)
    if role.is_wildcard:
        return True
    for name in role.accessible_domains:
        domain = policy.domains.get(name)
        if domain is not None and device.device_type in domain.types:
            return True
    return False


def mcs_check(policy: Policy, app_id: str, device_mac: str) -> bool:
    app = policy.app(app_id)
    device = policy.device(device_mac)
    return bool(app.categories & device.categories)


def authorize(policy: Policy, phone_mac: str, app_id: str, device_mac: str) -> Decision:
    # MCS only ever narrows a TE allow.
    phone = policy.phone(phone_mac)
    if not te_check(policy, phone.role, device_mac):
        return Decision.DENY_PHONE_LEVEL
    if not mcs_check(policy, app_id, device_mac):
        return Decision.DENY_APP_LEVEL
    return Decision.ALLOW


def default_policy(
    phones: Iterable[PhoneRecord],
    devices: Iterable[DeviceRecord],
    apps: Iterable[AppRecord] = (),
) -> Policy:
    """Build the setup-phase policy.

    Every device gets a type (``<mac>_t`` unless one is given) and lands in
    the Home domain; unprotected devices also land in Unprotected, the only
    domain a Guest can reach.
    """
    phones = list(phones)
    masters = [p for p in phones if p.is_mcn]
    if len(masters) != 1:
        raise ConfigurationError(f"exactly one MCN phone required, got {len(masters)}")

    dev_map: dict[str, DeviceRecord] = {}
    for dev in devices:
        mac = normalize_mac(dev.mac)
        if mac in dev_map:
            raise ConfigurationError(f"duplicate device MAC {mac}")
        dev_map[mac] = replace(dev, mac=mac, device_type=dev.device_type or f"{mac}_t")

    phone_map: dict[str, PhoneRecord] = {}
    for phone in phones:
        mac = normalize_mac(phone.mac)
        if mac in phone_map:
            raise ConfigurationError(f"duplicate phone MAC {mac}")
        phone_map[mac] = replace(phone, mac=mac, role=phone.role or HAN_USER)

    app_map: dict[str, AppRecord] = {}
    for app in apps:
        if app.app_id in app_map:
            raise ConfigurationError(f"duplicate app {app.app_id}")
        app_map[app.app_id] = app

    home_types = frozenset(d.device_type for d in dev_map.values())
    open_types = frozenset(d.device_type for d in dev_map.values() if not d.protected)
    roles = {
        ADMIN: Role(ADMIN, frozenset({ALL_DOMAINS})),
        HAN_USER: Role(HAN_USER, frozenset({HOME})),
        GUEST: Role(GUEST, frozenset({UNPROTECTED})),
    }
    domains = {HOME: DomainDef(HOME, home_types), UNPROTECTED: DomainDef(UNPROTECTED, open_types)}
    policy = Policy(1, roles, domains, dev_map, phone_map, app_map)
    problems = validate_policy(policy)
    if problems:
        raise ConfigurationError("; ".join(problems))
    return policy


def bind_app_device(policy: Policy, app_id: str, device_mac: str, category: str) -> Policy:
    app = policy.app(app_id)
    device = policy.device(device_mac)
    apps = dict(policy.apps)
    devices = dict(policy.devices)
    apps[app.app_id] = replace(app, categories=app.categories | {category})
    devices[device.mac] = replace(device, categories=device.categories | {category})
    return replace(policy, version=policy.version + 1, apps=apps, devices=devices)


def validate_policy(policy: Policy) -> list[str]:
    problems: list[str] = []
    for key, role in policy.roles.items():
        if not role.name:
            problems.append("role with empty name")
        elif key != role.name:
            problems.append(f"role {role.name}: keyed as {key}")
        for dom in sorted(role.accessible_domains - {ALL_DOMAINS}):
            if dom not in policy.domains:
                problems.append(f"role {role.name}: references missing domain {dom}")
            elif not policy.domains[dom].types and dom != UNPROTECTED:
                problems.append(f"role {role.name}: domain {dom} has no types")

    typed = set()
    for dom in policy.domains.values():
        typed |= dom.types

    ips: dict[str, str] = {}
    for key, dev in policy.devices.items():
        if key != dev.mac:
            problems.append(f"device {dev.mac}: keyed as {key}")
        if dev.subnet not in SUBNETS:
            problems.append(f"device {dev.mac}: unknown subnet {dev.subnet}")
        if dev.protected and dev.subnet != "iot":
            problems.append(f"device {dev.mac}: protected device outside iot subnet")
        if dev.device_type not in typed:
            problems.append(f"device {dev.mac}: type {dev.device_type} in no domain (unreachable)")
        if dev.ip in ips:
            problems.append(f"device {dev.mac}: IP {dev.ip} already reserved by {ips[dev.ip]}")
        ips[dev.ip] = dev.mac

    masters = [p.mac for p in policy.phones.values() if p.is_mcn]
    if len(masters) > 1:
        problems.append("duplicate MCN")
    elif not masters:
        problems.append("no MCN")
    for key, phone in policy.phones.items():
        if key != phone.mac:
            problems.append(f"phone {phone.mac}: keyed as {key}")
        if key in policy.devices:
            problems.append(f"phone {phone.mac}: MAC also registered as a device")
        if phone.role not in policy.roles:
            problems.append(f"phone {phone.mac}: references missing role {phone.role}")
        if len(phone.credential_hash) != 32:
            problems.append(f"phone {phone.mac}: credential hash must be 32 bytes")
        if phone.reserved_ip in ips:
            problems.append(f"phone {phone.mac}: IP {phone.reserved_ip} already reserved by {ips[phone.reserved_ip]}")
        ips[phone.reserved_ip] = phone.mac

    for key, app in policy.apps.items():
        if key != app.app_id:
            problems.append(f"app {app.app_id}: keyed as {key}")
        if len(app.signature) != 32:
            problems.append(f"app {app.app_id}: signature must be 32 bytes")
    return problems


# --------------------------------------------------------------------------
# Updates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyUpdate:
    """A transactional delta. Removals apply before upserts, bindings last."""

    roles: tuple[Role, ...] = ()
    remove_roles: tuple[str, ...] = ()
    domains: tuple[DomainDef, ...] = ()
    remove_domains: tuple[str, ...] = ()
    devices: tuple[DeviceRecord, ...] = ()
    remove_devices: tuple[str, ...] = ()
    phones: tuple[PhoneRecord, ...] = ()
    remove_phones: tuple[str, ...] = ()
    apps: tuple[AppRecord, ...] = ()
    remove_apps: tuple[str, ...] = ()
    assign_roles: tuple[tuple[str, str], ...] = ()
    bindings: tuple[tuple[str, str, str], ...] = ()
    unbindings: tuple[tuple[str, str, str], ...] = ()


def _drop(table: dict, key: str, what: str) -> None:
    if key not in table:
        raise UpdateRejected(UpdateRejected.INVALID, f"cannot remove missing {what} {key}")
    del table[key]


def _apply_delta(policy: Policy, update: PolicyUpdate) -> Policy:
    roles = dict(policy.roles)
    domains = dict(policy.domains)
    devices = dict(policy.devices)
    phones = dict(policy.phones)
    apps = dict(policy.apps)
    try:
        for name in update.remove_roles:
            _drop(roles, name, "role")
        for name in update.remove_domains:
            _drop(domains, name, "domain")
        for mac in update.remove_devices:
            _drop(devices, normalize_mac(mac), "device")
        for mac in update.remove_phones:
            _drop(phones, normalize_mac(mac), "phone")
        for app_id in update.remove_apps:
            _drop(apps, app_id, "app")
        for role in update.roles:
            roles[role.name] = role
        for dom in update.domains:
            domains[dom.name] = dom
        for dev in update.devices:
            dev = replace(dev, mac=normalize_mac(dev.mac))
            devices[dev.mac] = replace(dev, device_type=dev.device_type or f"{dev.mac}_t")
        for phone in update.phones:
            phone = replace(phone, mac=normalize_mac(phone.mac))
            phones[phone.mac] = phone
        for app in update.apps:
            apps[app.app_id] = app
        for mac, role_name in update.assign_roles:
            mac = normalize_mac(mac)
            if mac not in phones:
                raise UpdateRejected(UpdateRejected.INVALID, f"role assignment for missing phone {mac}")
            if role_name not in roles:
                raise UpdateRejected(UpdateRejected.INVALID, f"role assignment to missing role {role_name}")
            phones[mac] = replace(phones[mac], role=role_name)
        for binds, add in ((update.bindings, True), (update.unbindings, False)):
            for app_id, mac, category in binds:
                mac = normalize_mac(mac)
                if app_id not in apps or mac not in devices:
                    raise UpdateRejected(UpdateRejected.INVALID, f"binding references missing app/device {app_id}/{mac}")
                app, dev = apps[app_id], devices[mac]
                if add:
                    apps[app_id] = replace(app, categories=app.categories | {category})
                    devices[mac] = replace(dev, categories=dev.categories | {category})
                else:
                    apps[app_id] = replace(app, categories=app.categories - {category})
                    devices[mac] = replace(dev, categories=dev.categories - {category})
    except ValueError as exc:
        raise UpdateRejected(UpdateRejected.INVALID, str(exc)) from None
    return Policy(policy.version + 1, roles, domains, devices, phones, apps)


def apply_update(
    policy: Policy,
    update: PolicyUpdate,
    actor_phone: str,
    notify: Callable[[str, str], None] | None = None,
) -> Policy:
    """Apply ``update`` on behalf of ``actor_phone`` or raise UpdateRejected.

    Only the MCN or an Admin-role phone may update. On rejection the input
    policy is untouched and ``notify(event, detail)`` is called.
    """
    try:
        try:
            actor = policy.phone(actor_phone)
        except UnknownPrincipal:
            raise UpdateRejected(UpdateRejected.UNAUTHORIZED, f"unregistered actor {actor_phone}") from None
        if not (actor.is_mcn or actor.role == ADMIN):
            raise UpdateRejected(UpdateRejected.UNAUTHORIZED, f"actor {actor.mac} is not admin")
        new = _apply_delta(policy, update)
        problems = validate_policy(new)
        if problems:
            raise UpdateRejected(UpdateRejected.INVALID, "; ".join(problems))
    except UpdateRejected as exc:
        if notify is not None:
            notify(exc.reason, exc.detail)
        raise
    return new


# --------------------------------------------------------------------------
# Text format
# --------------------------------------------------------------------------

_ROW_KEYS = {
    "policy": ({"version"}, {"version"}),
    "role": ({"name", "domains"}, {"name"}),
    "domain": ({"name", "types"}, {"name"}),
    "device": ({"mac", "ip", "type", "categories", "protected", "subnet"}, {"mac", "ip"}),
    "phone": ({"mac", "ip", "role", "user", "cred", "cert", "mcn"}, {"mac", "ip", "user", "cred", "cert"}),
    "app": ({"id", "sig", "categories"}, {"id", "sig"}),
}


def _split_list(value: str) -> frozenset[str]:
    return frozenset(v for v in value.split(",") if v)


def _join(values: Iterable[str]) -> str:
    return ",".join(sorted(values))


def _bool(value: str, lineno: int) -> bool:
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise PolicyParseError(lineno, f"bad boolean {value!r}")


def _hex32(value: str, lineno: int, key: str) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise PolicyParseError(lineno, f"{key} is not hex") from None
    if len(raw) != 32:
        raise PolicyParseError(lineno, f"{key} must be 64 hex chars")
    return raw


def _ip(value: str, lineno: int) -> str:
    try:
        return str(ipaddress.IPv4Address(value))
    except ValueError:
        raise PolicyParseError(lineno, f"bad IPv4 address {value!r}") from None


_NAMED = ("role", "domain", "add-role", "remove-role", "add-domain", "remove-domain", "scenario")


def tokenize(text: str) -> list[tuple[int, str, dict[str, str]]]:
    """Split the line format into ``(lineno, keyword, {key: value})`` rows.

    Records in ``_NAMED`` may give their name as a bare first token
    (``role Admin domains=*``); it is stored under ``name``.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *tokens = line.split()
        fields: dict[str, str] = {}
        for pos, tok in enumerate(tokens):
            key, sep, value = tok.partition("=")
            if not sep and pos == 0 and head in _NAMED:
                key, value = "name", tok
            elif not sep or not key:
                raise PolicyParseError(lineno, f"expected key=value, got {tok!r}")
            if key in fields:
                raise PolicyParseError(lineno, f"duplicate key {key!r}")
            fields[key] = value
        rows.append((lineno, head, fields))
    return rows


def _check_keys(lineno: int, head: str, fields: dict[str, str], table=_ROW_KEYS) -> None:
    if head not in table:
        raise PolicyParseError(lineno, f"unknown record {head!r}")
    allowed, required = table[head]
    for key in fields:
        if key not in allowed:
            raise PolicyParseError(lineno, f"unknown key {key!r} for {head}")
    for key in sorted(required - fields.keys()):
        raise PolicyParseError(lineno, f"missing key {key!r} for {head}")


def _mac(value: str, lineno: int) -> str:
    try:
        return normalize_mac(value)
    except ValueError:
        raise PolicyParseError(lineno, f"bad MAC address {value!r}") from None


def _record(lineno: int, head: str, f: dict[str, str]):
    if head == "role":
        return Role(f["name"], _split_list(f.get("domains", "")))
    if head == "domain":
        return DomainDef(f["name"], _split_list(f.get("types", "")))
    if head == "device":
        subnet = f.get("subnet", "iot")
        if subnet not in SUBNETS:
            raise PolicyParseError(lineno, f"unknown subnet {subnet!r}")
        return DeviceRecord(
            mac=_mac(f["mac"], lineno),
            ip=_ip(f["ip"], lineno),
            device_type=f.get("type", ""),
            categories=_split_list(f.get("categories", "")),
            protected=_bool(f.get("protected", "true"), lineno),
            subnet=subnet,
        )
    if head == "phone":
        return PhoneRecord(
            mac=_mac(f["mac"], lineno),
            reserved_ip=_ip(f["ip"], lineno),
            role=f.get("role", HAN_USER),
            user=f["user"],
            credential_hash=_hex32(f["cred"], lineno, "cred"),
            cert_id=f["cert"],
            is_mcn=_bool(f.get("mcn", "false"), lineno),
        )
    if head == "app":
        return AppRecord(f["id"], _hex32(f["sig"], lineno, "sig"), _split_list(f.get("categories", "")))
    raise PolicyParseError(lineno, f"unexpected record {head!r}")


def parse_policy(text: str) -> Policy:
    version = None
    tables: dict[str, dict] = {"role": {}, "domain": {}, "device": {}, "phone": {}, "app": {}}
    for lineno, head, fields in tokenize(text):
        _check_keys(lineno, head, fields)
        if head == "policy":
            if version is not None:
                raise PolicyParseError(lineno, "duplicate policy header")
            try:
                version = int(fields["version"])
            except ValueError:
                raise PolicyParseError(lineno, "version must be an integer") from None
            if not 0 <= version < 2**64:
                raise PolicyParseError(lineno, "version out of range")
            continue
        rec = _record(lineno, head, fields)
        key = {"role": "name", "domain": "name", "device": "mac", "phone": "mac", "app": "app_id"}[head]
        ident = getattr(rec, key)
        if ident in tables[head]:
            raise PolicyParseError(lineno, f"duplicate {head} {ident}")
        tables[head][ident] = rec
    if version is None:
        raise PolicyParseError(1, "missing 'policy version=N' header")
    return Policy(version, tables["role"], tables["domain"], tables["device"], tables["phone"], tables["app"])


def format_policy(policy: Policy) -> str:
    """Canonical text form; ``parse_policy(format_policy(p)) == p``."""
    out = [f"policy version={policy.version}"]
    for name in sorted(policy.roles):
        out.append(f"role {name} domains={_join(policy.roles[name].accessible_domains)}")
    for name in sorted(policy.domains):
        out.append(f"domain {name} types={_join(policy.domains[name].types)}")
    for mac in sorted(policy.devices):
        d = policy.devices[mac]
        out.append(
            f"device mac={d.mac} ip={d.ip} type={d.device_type} categories={_join(d.categories)} "
            f"protected={'true' if d.protected else 'false'} subnet={d.subnet}"
        )
    for mac in sorted(policy.phones):
        p = policy.phones[mac]
        out.append(
            f"phone mac={p.mac} ip={p.reserved_ip} role={p.role} user={p.user} "
            f"cred={p.credential_hash.hex()} cert={p.cert_id} mcn={'true' if p.is_mcn else 'false'}"
        )
    for app_id in sorted(policy.apps):
        a = policy.apps[app_id]
        out.append(f"app id={a.app_id} sig={a.signature.hex()} categories={_join(a.categories)}")
    return "\n".join(out) + "\n"


_UPDATE_KEYS = {
    "add-role": ({"name", "domains"}, {"name"}),
    "remove-role": ({"name"}, {"name"}),
    "add-domain": ({"name", "types"}, {"name"}),
    "remove-domain": ({"name"}, {"name"}),
    "add-device": _ROW_KEYS["device"],
    "remove-device": ({"mac"}, {"mac"}),
    "add-phone": _ROW_KEYS["phone"],
    "remove-phone": ({"mac"}, {"mac"}),
    "add-app": _ROW_KEYS["app"],
    "remove-app": ({"id"}, {"id"}),
    "assign-role": ({"phone", "role"}, {"phone", "role"}),
    "bind": ({"app", "device", "category"}, {"app", "device", "category"}),
    "unbind": ({"app", "device", "category"}, {"app", "device", "category"}),
}


def parse_update(text: str) -> PolicyUpdate:
    """Parse a delta file: one ``add-*``/``remove-*``/``assign-role``/``bind``/``unbind`` per line."""
    acc: dict[str, list] = {name: [] for name in PolicyUpdate.__dataclass_fields__}
    for lineno, head, f in tokenize(text):
        _check_keys(lineno, head, f, _UPDATE_KEYS)
        verb, _, kind = head.partition("-")
        if verb == "add":
            acc[{"role": "roles", "domain": "domains", "device": "devices", "phone": "phones", "app": "apps"}[kind]].append(
                _record(lineno, kind, f)
            )
        elif verb == "remove":
            ident = f.get("name") or f.get("id") or _mac(f.get("mac", ""), lineno)
            acc[f"remove_{kind}s"].append(ident)
        elif head == "assign-role":
            acc["assign_roles"].append((_mac(f["phone"], lineno), f["role"]))
        else:
            triple = (f["app"], _mac(f["device"], lineno), f["category"])
            acc["bindings" if head == "bind" else "unbindings"].append(triple)
    return PolicyUpdate(**{k: tuple(v) for k, v in acc.items()})


def format_update(update: PolicyUpdate) -> str:
    out = []
    for mac in update.remove_phones:
        out.append(f"remove-phone mac={mac}")
    for mac in update.remove_devices:
        out.append(f"remove-device mac={mac}")
    for app_id in update.remove_apps:
        out.append(f"remove-app id={app_id}")
    for name in update.remove_roles:
        out.append(f"remove-role {name}")
    for name in update.remove_domains:
        out.append(f"remove-domain {name}")
    # Reuse the policy row rendering for full records.
    scratch = Policy(
        0,
        {r.name: r for r in update.roles},
        {d.name: d for d in update.domains},
        {d.mac: d for d in update.devices},
        {p.mac: p for p in update.phones},
        {a.app_id: a for a in update.apps},
    )
    for row in format_policy(scratch).splitlines()[1:]:
        out.append("add-" + row)
    for mac, role in update.assign_roles:
        out.append(f"assign-role phone={mac} role={role}")
    for app_id, mac, cat in update.bindings:
        out.append(f"bind app={app_id} device={mac} category={cat}")
    for app_id, mac, cat in update.unbindings:
        out.append(f"unbind app={app_id} device={mac} category={cat}")
    return "\n".join(out) + ("\n" if out else "")
