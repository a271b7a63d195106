"""``hanguard`` command line: policy administration, scenario runs, procfs decoding.

Exit codes: 0 success, 1 validation or assertion failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import ipaddress
import logging
import statistics
import sys
from collections import defaultdict
from pathlib import Path

from .controller import Controller, EventLog, PersistenceError, atomic_write
from .policy import (
    AppRecord,
    DeviceRecord,
    PhoneRecord,
    PolicyError,
    UpdateRejected,
    _check_keys,
    bind_app_device,
    credential_hash,
    default_policy,
    format_policy,
    normalize_mac,
    parse_policy,
    parse_update,
    tokenize,
    validate_policy,
)
from .procfs import TcpState, parse_table
from .sim import KINDS, ScenarioError, builtin, parse_scenarios, read_metrics_csv, run_scenario
from .sim.topology import official_signature

log = logging.getLogger("hanguard.cli")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_TOPOLOGY_KEYS = {
    "phone": ({"mac", "ip", "user", "password", "cert", "role", "mcn"}, {"mac", "ip", "user", "password"}),
    "device": ({"mac", "ip", "type", "protected", "subnet"}, {"mac", "ip"}),
    "app": ({"id", "sig"}, {"id"}),
}


class CliError(Exception):
    """A failure reported to the user with exit status 1."""


def _err(*lines: str) -> None:
    for line in lines:
        print(line, file=sys.stderr)


# -- policy verbs --------------------------------------------------------------------


def load_topology(text: str):
    """Parse a topology file into phone, device and app records for ``default_policy``."""
    phones, devices, apps = [], [], []
    for lineno, head, f in tokenize(text):
        _check_keys(lineno, head, f, _TOPOLOGY_KEYS)
        try:
            ip = str(ipaddress.IPv4Address(f.get("ip", "0.0.0.0")))
        except ValueError:
            raise CliError(f"line {lineno}: bad IPv4 address {f['ip']!r}") from None
        if head == "phone":
            mcn = f.get("mcn", "false").lower() in ("true", "1", "yes")
            phones.append(
                PhoneRecord(
                    normalize_mac(f["mac"]),
                    ip,
                    f.get("role", ""),
                    f["user"],
                    credential_hash(f["user"], f["password"]),
                    f.get("cert", f"cert-{f['user']}"),
                    mcn,
                )
            )
        elif head == "device":
            protected = f.get("protected", "true").lower() in ("true", "1", "yes")
            devices.append(
                DeviceRecord(normalize_mac(f["mac"]), ip, f.get("type", ""), protected=protected, subnet=f.get("subnet", "iot" if protected else "phones"))
            )
        else:
            sig = bytes.fromhex(f["sig"]) if "sig" in f else official_signature(f["id"])
            apps.append(AppRecord(f["id"], sig))
    return phones, devices, apps


def _read_policy(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read policy {path}: {exc}") from None
    policy = parse_policy(text)
    problems = validate_policy(policy)
    if problems:
        raise CliError("policy is invalid:\n" + "\n".join(f"  - {p}" for p in problems))
    return policy


def cmd_policy_init(args) -> int:
    text = Path(args.topology).read_text()
    policy = default_policy(*load_topology(text))
    atomic_write(args.policy, format_policy(policy))
    print(f"wrote {args.policy} (version {policy.version})")
    return EXIT_OK


def cmd_policy_show(args) -> int:
    sys.stdout.write(format_policy(_read_policy(args.policy)))
    return EXIT_OK


def cmd_policy_bind(args) -> int:
    policy = _read_policy(args.policy)
    device = args.device
    if policy.device_by_ip(device) is not None:
        device = policy.device_by_ip(device).mac
    new = bind_app_device(policy, args.app, device, args.category)
    problems = validate_policy(new)
    if problems:
        raise CliError("binding would make the policy invalid:\n" + "\n".join(f"  - {p}" for p in problems))
    atomic_write(args.policy, format_policy(new))
    print(f"bound {args.app} and {normalize_mac(device)} to {args.category} (version {new.version})")
    return EXIT_OK


def cmd_policy_update(args) -> int:
    policy = _read_policy(args.policy)
    update = parse_update(Path(args.delta).read_text())
    events = EventLog()
    controller = Controller(policy, persist=args.policy, event_log=events)
    log_path = Path(args.log) if args.log else Path(f"{args.policy}.events.csv")
    try:
        version = controller.policy_update_service(update, args.actor, now=0)
    except (UpdateRejected, PersistenceError) as exc:
        raise CliError(f"update rejected: {exc}") from None
    finally:
        _append_events(log_path, events)
    print(f"applied update as {normalize_mac(args.actor)} (version {version})")
    return EXIT_OK


def _append_events(path: Path, events: EventLog) -> None:
    if not events.records:
        return
    text = events.to_csv()
    if path.exists() and path.stat().st_size > 0:
        text = text.split("\n", 1)[1]
    with path.open("a") as fh:
        fh.write(text)


# -- run ------------------------------------------------------------------------------------


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise CliError(f"--set expects key=value, got {item!r}")
        out[key] = value
    return out


def resolve_scenario(args):
    if args.params:
        scenarios = parse_scenarios(Path(args.params).read_text())
        if args.scenario in scenarios:
            sc = scenarios[args.scenario]
        elif args.scenario in KINDS:
            sc = builtin(args.scenario)
        else:
            raise CliError(f"scenario {args.scenario!r} is neither built in nor defined in {args.params}")
    else:
        sc = builtin(args.scenario)
    defaults = sc.kind.defaults
    if args.poll_ms is not None:
        sc.params["poll_ms"] = str(args.poll_ms)
        if "intervals_ms" in defaults:
            sc.params["intervals_ms"] = str(args.poll_ms)
    if args.strategy:
        sc.params["strategy"] = args.strategy
        if "strategies" in defaults:
            sc.params["strategies"] = args.strategy
    if args.vanilla:
        sc.params["modes"] = "vanilla"
    sc.params.update(_parse_set(args.set))
    if args.trials is not None:
        sc.trials = args.trials
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def cmd_run(args) -> int:
    sc = resolve_scenario(args)
    report = run_scenario(sc, trace=args.trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"metrics": report.to_csv(), "events": report.events_csv()}
    if args.trace:
        files["trace"] = report.trace_csv()
    for kind, text in files.items():
        (out / f"{sc.name}.{kind}.csv").write_text(text)
    print(f"{sc.name}: {len(report.rows)} metric rows -> {out / (sc.name + '.metrics.csv')}")
    if not report.ok:
        _err(f"{sc.name}: FAILED: {report.failures[0]}", *(f"  also: {f}" for f in report.failures[1:5]))
        return EXIT_FAIL
    print(f"{sc.name}: all checks passed")
    return EXIT_OK


# -- report ---------------------------------------------------------------------------------


def summarize(rows) -> list[tuple[str, str, int, str]]:
    grouped: dict[tuple[str, str], list[str]] = defaultdict(list)
    for scenario, _, metric, value in rows:
        grouped[(scenario, metric)].append(value)
    out = []
    for (scenario, metric), values in grouped.items():
        if all(v in ("true", "false") for v in values):
            summary = f"{values.count('true')}/{len(values)} true"
        else:
            try:
                nums = [float(v) for v in values]
            except ValueError:
                summary = ", ".join(sorted(set(values)))
            else:
                summary = f"mean={statistics.fmean(nums):.3f} min={min(nums):g} max={max(nums):g}"
        out.append((scenario, metric, len(values), summary))
    return out


def cmd_report(args) -> int:
    rows = []
    for path in args.metrics:
        try:
            rows.extend(read_metrics_csv(Path(path).read_text()))
        except (OSError, ValueError) as exc:
            raise CliError(f"{path}: {exc}") from None
    if args.metric:
        rows = [r for r in rows if args.metric in r[2]]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["scenario", "metric", "n", "summary"])
    w.writerows(summarize(rows))
    return EXIT_OK


# -- procfs -----------------------------------------------------------------------------------


def _state_name(state: int) -> str:
    try:
        return TcpState(state).name
    except ValueError:
        return f"0x{state:02X}"


def cmd_procfs_parse(args) -> int:
    try:
        text = Path(args.file).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {args.file}: {exc}") from None
    rows, errors = parse_table(text)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["local", "remote", "state", "uid"])
    for r in rows:
        w.writerow([f"{r.local_ip}:{r.local_port}", f"{r.remote_ip}:{r.remote_port}", _state_name(r.state), r.uid])
    sys.stdout.write(buf.getvalue())
    if errors:
        _err(*(f"{args.file}:{lineno}: {msg}" for lineno, msg in errors))
        return EXIT_FAIL
    return EXIT_OK


# -- wiring --------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hanguard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("policy-init", help="write a default policy from a topology file")
    p.add_argument("--topology", required=True, help="topology file (phone/device/app lines)")
    p.add_argument("--policy", required=True, help="policy file to write")
    p.set_defaults(func=cmd_policy_init)

    p = sub.add_parser("policy-show", help="print the canonical policy text")
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_policy_show)

    p = sub.add_parser("policy-bind", help="tag an app and a device with a shared category")
    p.add_argument("app")
    p.add_argument("device", help="device MAC or IP")
    p.add_argument("category")
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_policy_bind)

    p = sub.add_parser("policy-update", help="apply a policy delta as a named actor")
    p.add_argument("delta", help="update file (add-*/remove-*/assign-role/bind lines)")
    p.add_argument("--policy", required=True)
    p.add_argument("--actor", required=True, help="MAC of the phone requesting the update")
    p.add_argument("--log", help="event log CSV to append to (default: POLICY.events.csv)")
    p.set_defaults(func=cmd_policy_update)

    p = sub.add_parser("run", help="run a built-in or file-defined scenario")
    p.add_argument("scenario", help=f"built-in ({', '.join(KINDS)}) or a name from --params")
    p.add_argument("--params", help="scenario parameter file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--trials", type=int)
    p.add_argument("--poll-ms", type=int, dest="poll_ms")
    p.add_argument("--strategy", choices=("naive", "smarter"))
    p.add_argument("--vanilla", action="store_true", help="disable enforcement (baseline)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="parameter override")
    p.add_argument("--trace", action="store_true", help="also write an event trace CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize metrics CSV files")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--metric", help="only metrics containing this substring")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("procfs-parse", help="decode a /proc/net/{tcp,udp}[6] table")
    p.add_argument("file")
    p.set_defaults(func=cmd_procfs_parse)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.ERROR, logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 3)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, PolicyError, ScenarioError, OSError, ValueError) as exc:
        _err(f"hanguard {args.verb}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
