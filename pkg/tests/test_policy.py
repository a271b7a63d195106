import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hanguard.policy import (
    ADMIN,
    GUEST,
    HAN_USER,
    HOME,
    UNPROTECTED,
    AppRecord,
    ConfigurationError,
    Decision,
    DeviceRecord,
    DomainDef,
    PhoneRecord,
    PolicyParseError,
    PolicyUpdate,
    Role,
    UnknownPrincipal,
    UpdateRejected,
    authorize,
    bind_app_device,
    credential_hash,
    default_policy,
    format_policy,
    format_update,
    mcs_check,
    parse_policy,
    parse_update,
    te_check,
    validate_policy,
    apply_update,
)

from conftest import CAMERA_MAC, MCN_MAC, PRINTER_MAC, SWITCH_MAC, USER_MAC, naive_te, random_policy


def test_credential_hash_is_sha256_of_user_colon_password():
    import hashlib

    assert credential_hash("alice", "pw") == hashlib.sha256(b"alice:pw").digest()


def test_default_policy_shape(policy):
    assert validate_policy(policy) == []
    assert policy.roles[ADMIN].is_wildcard
    assert policy.roles[HAN_USER].accessible_domains == {HOME}
    assert policy.roles[GUEST].accessible_domains == {UNPROTECTED}
    assert HOME not in policy.roles[GUEST].accessible_domains
    assert policy.device(SWITCH_MAC).device_type == f"{SWITCH_MAC}_t"
    assert policy.device(CAMERA_MAC).device_type == "camera_t"
    assert policy.phone(USER_MAC).role == HAN_USER
    assert policy.role_of("02:00:00:00:00:77") == GUEST


def test_default_policy_single_device_no_bindings():
    phone = PhoneRecord(MCN_MAC, "192.168.1.2", "", "a", bytes(32), "c", True)
    p = default_policy([phone], [DeviceRecord(SWITCH_MAC, "192.168.2.2")], [AppRecord("x", bytes(32))])
    assert p.version == 1
    assert te_check(p, HAN_USER, SWITCH_MAC)
    assert not mcs_check(p, "x", SWITCH_MAC)


@pytest.mark.parametrize("n_mcn", [0, 2])
def test_default_policy_needs_exactly_one_mcn(n_mcn):
    phones = [
        PhoneRecord(f"02:00:00:00:00:0{i}", f"192.168.1.{i + 2}", "", f"u{i}", bytes(32), f"c{i}", i < n_mcn)
        for i in range(2)
    ]
    with pytest.raises(ConfigurationError):
        default_policy(phones, [])


def test_te_examples(policy):
    assert not te_check(policy, GUEST, SWITCH_MAC)
    assert te_check(policy, GUEST, PRINTER_MAC)
    assert all(te_check(policy, ADMIN, mac) for mac in policy.devices)
    only_open = replace(
        policy,
        roles={**policy.roles, HAN_USER: Role(HAN_USER, frozenset({HOME}))},
        domains={HOME: DomainDef(HOME, frozenset()), UNPROTECTED: policy.domains[UNPROTECTED]},
    )
    assert not te_check(only_open, HAN_USER, PRINTER_MAC)


def test_mcs_examples(policy):
    assert mcs_check(policy, "com.wemo", SWITCH_MAC)
    assert not mcs_check(policy, "com.wemo", CAMERA_MAC)
    assert not mcs_check(policy, "com.cam", PRINTER_MAC)


def test_authorize_examples(policy):
    assert authorize(policy, USER_MAC, "com.wemo", SWITCH_MAC) is Decision.ALLOW
    assert authorize(policy, USER_MAC, "com.wemo", CAMERA_MAC) is Decision.DENY_APP_LEVEL
    guest = replace(policy.phone(USER_MAC), role=GUEST)
    p = replace(policy, phones={**policy.phones, USER_MAC: guest})
    assert authorize(p, USER_MAC, "com.wemo", SWITCH_MAC) is Decision.DENY_PHONE_LEVEL


def test_lookup_errors(policy):
    with pytest.raises(UnknownPrincipal):
        te_check(policy, "Nobody", SWITCH_MAC)
    with pytest.raises(UnknownPrincipal):
        mcs_check(policy, "com.missing", SWITCH_MAC)
    with pytest.raises(UnknownPrincipal):
        authorize(policy, "02:00:00:00:00:77", "com.wemo", SWITCH_MAC)
    with pytest.raises(UnknownPrincipal):
        bind_app_device(policy, "com.wemo", "0A:00:00:00:00:77", "x")


def test_bind_is_idempotent_on_sets_but_bumps_version(policy):
    again = bind_app_device(policy, "com.wemo", SWITCH_MAC, "wemo")
    assert again.version == policy.version + 1
    assert again.apps["com.wemo"].categories == policy.apps["com.wemo"].categories


# -- random policies --------------------------------------------------------------


def _cases(policy):
    for phone in policy.phones:
        for app in policy.apps:
            for dev in policy.devices:
                yield phone, app, dev


def test_te_mcs_ordering_over_random_policies():
    rng = random.Random(7)
    checked = 0
    for _ in range(1000):
        policy = random_policy(rng)
        for phone, app, dev in _cases(policy):
            role = policy.phones[phone].role
            te = te_check(policy, role, dev)
            assert te == naive_te(policy, role, dev)
            decision = authorize(policy, phone, app, dev)
            if not te:
                assert decision is Decision.DENY_PHONE_LEVEL
                # Give the app every category the device has: still denied.
                cats = policy.devices[dev].categories | {"c0"}
                widened = replace(
                    policy,
                    apps={**policy.apps, app: replace(policy.apps[app], categories=cats)},
                    devices={**policy.devices, dev: replace(policy.devices[dev], categories=cats)},
                )
                assert authorize(widened, phone, app, dev) is Decision.DENY_PHONE_LEVEL
            checked += 1
    assert checked >= 1000


def test_removing_category_only_restricts():
    rng = random.Random(11)
    for _ in range(1000):
        policy = random_policy(rng)
        app = rng.choice(sorted(policy.apps))
        cats = policy.apps[app].categories
        if not cats:
            continue
        narrowed = replace(
            policy, apps={**policy.apps, app: replace(policy.apps[app], categories=cats - {rng.choice(sorted(cats))})}
        )
        for phone, a, dev in _cases(policy):
            before = authorize(policy, phone, a, dev)
            after = authorize(narrowed, phone, a, dev)
            if before is Decision.DENY_PHONE_LEVEL:
                assert after is Decision.DENY_PHONE_LEVEL
            if before is not Decision.ALLOW:
                assert after is not Decision.ALLOW


# -- updates -----------------------------------------------------------------------


def test_mcn_adds_camera_domain(policy):
    update = PolicyUpdate(domains=(DomainDef("cameras_d", frozenset({"babyMonitor_t"})),))
    new = apply_update(policy, update, MCN_MAC)
    assert new.version == policy.version + 1
    assert new.domains["cameras_d"].types == {"babyMonitor_t"}


def test_scn_update_rejected_and_notified(policy):
    seen = []
    with pytest.raises(UpdateRejected) as exc:
        apply_update(policy, PolicyUpdate(remove_apps=("com.cam",)), USER_MAC, lambda e, d: seen.append(e))
    assert exc.value.reason == UpdateRejected.UNAUTHORIZED
    assert seen == [UpdateRejected.UNAUTHORIZED]
    assert "com.cam" in policy.apps


def test_invalid_update_rejected(policy):
    update = PolicyUpdate(assign_roles=((USER_MAC, "Nonexistent"),))
    with pytest.raises(UpdateRejected) as exc:
        apply_update(policy, update, MCN_MAC)
    assert exc.value.reason == UpdateRejected.INVALID
    update = PolicyUpdate(roles=(Role("Viewer", frozenset({"missing_d"})),))
    with pytest.raises(UpdateRejected):
        apply_update(policy, update, MCN_MAC)


def test_update_is_transactional(policy):
    update = PolicyUpdate(remove_apps=("com.cam",), bindings=(("com.gone", SWITCH_MAC, "x"),))
    with pytest.raises(UpdateRejected):
        apply_update(policy, update, MCN_MAC)
    assert "com.cam" in policy.apps


def test_versions_strictly_increase_without_gaps(policy):
    p = policy
    versions = [p.version]
    for i in range(20):
        p = apply_update(p, PolicyUpdate(domains=(DomainDef(f"d{i}", frozenset({"x_t"})),)), MCN_MAC)
        versions.append(p.version)
    assert versions == list(range(policy.version, policy.version + 21))


# -- validation and text ----------------------------------------------------------


def test_validate_duplicate_mcn(policy):
    bob = replace(policy.phone(USER_MAC), is_mcn=True)
    assert validate_policy(replace(policy, phones={**policy.phones, USER_MAC: bob})) == ["duplicate MCN"]


def test_validate_missing_domain_names_role(policy):
    bad = replace(policy, roles={**policy.roles, "Viewer": Role("Viewer", frozenset({"nope"}))})
    problems = validate_policy(bad)
    assert len(problems) == 1 and "Viewer" in problems[0]


def test_format_parse_round_trip(policy):
    text = format_policy(policy)
    assert parse_policy(text) == policy
    assert format_policy(parse_policy(text)) == text


def test_documented_example_format_parses():
    text = f"""\
policy version=1
role Admin domains=*
role HANUser domains=Home
domain Home types=switch_t,babyMonitor_t
device mac=AA:BB:CC:DD:EE:01 ip=192.168.2.10 type=switch_t categories=wemo protected=true subnet=iot
phone mac=AA:BB:CC:DD:EE:99 ip=192.168.1.5 role=HANUser user=alice cred={"ab" * 32} cert=c1 mcn=true
app id=com.belkin.wemoandroid sig={"cd" * 32} categories=wemo  # trailing comment
"""
    p = parse_policy(text)
    assert validate_policy(p) == []
    assert authorize(p, "AA:BB:CC:DD:EE:99", "com.belkin.wemoandroid", "AA:BB:CC:DD:EE:01") is Decision.ALLOW


@pytest.mark.parametrize(
    "text,line",
    [
        ("policy version=1\nrole Admin colour=red\n", 2),
        ("policy version=1\n\ndevice ip=10.0.0.1\n", 3),
        ("policy version=x\n", 1),
        ("role Admin domains=*\n", 1),
        ("policy version=1\napp id=a sig=zz\n", 2),
        ("policy version=1\ndevice mac=AA:BB ip=10.0.0.1\n", 2),
        ("policy version=1\npolicy version=2\n", 2),
    ],
)
def test_parse_errors_report_line(text, line):
    with pytest.raises(PolicyParseError) as exc:
        parse_policy(text)
    assert exc.value.line == line


def test_update_text_round_trip(policy):
    update = PolicyUpdate(
        roles=(Role("Viewer", frozenset({HOME})),),
        domains=(DomainDef("cameras_d", frozenset({"camera_t"})),),
        remove_apps=("com.cam",),
        assign_roles=((USER_MAC, ADMIN),),
        bindings=(("com.wemo", CAMERA_MAC, "wemo"),),
    )
    assert parse_update(format_update(update)) == update


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.sampled_from(["c0", "c1", "c2"])), max_size=8))
def test_default_policy_always_valid_after_bindings(ops):
    from conftest import make_policy

    p = make_policy()
    for wemo, cat in ops:
        p = bind_app_device(p, "com.wemo" if wemo else "com.cam", SWITCH_MAC if wemo else CAMERA_MAC, cat)
    assert validate_policy(p) == []
    assert p.version == 3 + len(ops)
