import pytest

from hanguard.cli import main
from hanguard.policy import parse_policy
from hanguard.sim import read_metrics_csv

TOPOLOGY = """\
phone mac=AA:00:00:00:00:01 ip=192.168.1.189 user=alice password=pw mcn=true
phone mac=AA:00:00:00:00:02 ip=192.168.1.190 user=bob password=pw2
device mac=BB:00:00:00:00:01 ip=192.168.2.32
device mac=CC:00:00:00:00:01 ip=192.168.1.10 protected=false
app id=com.belkin.wemoandroid
"""


@pytest.fixture
def policy_file(tmp_path):
    topo = tmp_path / "home.topo"
    topo.write_text(TOPOLOGY)
    path = tmp_path / "policy.txt"
    assert main(["policy-init", "--topology", str(topo), "--policy", str(path)]) == 0
    return path


def test_init_and_show(policy_file, capsys):
    capsys.readouterr()
    assert main(["policy-show", "--policy", str(policy_file)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("policy version=1\n")
    assert parse_policy(out) == parse_policy(policy_file.read_text())


def test_bind_by_ip(policy_file):
    assert main(["policy-bind", "com.belkin.wemoandroid", "192.168.2.32", "wemo", "--policy", str(policy_file)]) == 0
    p = parse_policy(policy_file.read_text())
    assert p.version == 2
    assert p.devices["BB:00:00:00:00:01"].categories == {"wemo"}


def test_bind_unknown_device_fails(policy_file, capsys):
    assert main(["policy-bind", "com.belkin.wemoandroid", "10.9.9.9", "wemo", "--policy", str(policy_file)]) == 1
    assert "unknown device" in capsys.readouterr().err


def test_update_by_mcn_and_by_scn(policy_file, tmp_path, capsys):
    delta = tmp_path / "delta.txt"
    delta.write_text("add-domain cameras_d types=babyMonitor_t\n")
    assert main(["policy-update", str(delta), "--policy", str(policy_file), "--actor", "AA:00:00:00:00:02"]) == 1
    assert "update rejected" in capsys.readouterr().err
    events = (tmp_path / "policy.txt.events.csv").read_text()
    assert "admin-oob,RejectedUnauthorized" in events
    assert parse_policy(policy_file.read_text()).version == 1
    assert main(["policy-update", str(delta), "--policy", str(policy_file), "--actor", "aa:00:00:00:00:01"]) == 0
    assert "cameras_d" in parse_policy(policy_file.read_text()).domains
    assert (tmp_path / "policy.txt.events.csv").read_text().count("time,component") == 1


def test_bad_topology_reports_line(tmp_path, capsys):
    topo = tmp_path / "t"
    topo.write_text("phone mac=AA:00:00:00:00:01 ip=1.2.3.4 user=a password=b colour=red\n")
    assert main(["policy-init", "--topology", str(topo), "--policy", str(tmp_path / "p")]) == 1
    assert "line 1" in capsys.readouterr().err


def test_run_writes_identical_csv_for_same_seed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "S1", "--seed", "7", "--out", str(a)]) == 0
    assert main(["run", "S1", "--seed", "7", "--out", str(b)]) == 0
    for name in ("S1.metrics.csv", "S1.events.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_with_overrides_and_trace(tmp_path):
    out = tmp_path / "o"
    rc = main(["run", "S6", "--poll-ms", "10", "--trials", "2", "--seed", "3", "--trace", "--out", str(out)])
    assert rc == 0
    rows = read_metrics_csv((out / "S6.metrics.csv").read_text())
    assert {m for _, _, m, _ in rows} >= {"poll_10ms.tcp.detections"}
    assert (out / "S6.trace.csv").read_text().startswith("time_us,entity,event,detail\n")


def test_run_params_file(tmp_path):
    params = tmp_path / "p.txt"
    params.write_text("scenario tiny base=S6 trials=1\nintervals_ms=30\n")
    assert main(["run", "tiny", "--params", str(params), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "tiny.metrics.csv").exists()


def test_run_vanilla_on_hanguard_only_scenario_fails(tmp_path, capsys):
    assert main(["run", "S4", "--vanilla", "--out", str(tmp_path)]) == 1
    assert "modes must be drawn" in capsys.readouterr().err


def test_run_bad_set(tmp_path, capsys):
    assert main(["run", "S1", "--set", "retries", "--out", str(tmp_path)]) == 1
    assert "key=value" in capsys.readouterr().err


def test_report(tmp_path, capsys):
    assert main(["run", "S1", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "S1.metrics.csv"), "--metric", "attacker_success"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "scenario,metric,n,summary"
    assert "S1,hanguard.attacker_success,1,mean=0.000 min=0 max=0" in out


def test_procfs_parse(tmp_path, capsys):
    f = tmp_path / "tcp6"
    f.write_text(
        "  sl  local_address                         remote_address                        st\n"
        "   0: 0000000000000000FFFF0000BD01A8C0:1F90 0000000000000000FFFF00002001A8C0:C001 01 "
        "00000000:00000000 00:00000000 00000000 10061 0 1\n"
        "   1: broken\n"
    )
    assert main(["procfs-parse", str(f)]) == 1
    captured = capsys.readouterr()
    assert captured.out.splitlines() == ["local,remote,state,uid", "192.168.1.189:8080,192.168.1.32:49153,ESTABLISHED,10061"]
    assert f"{f}:3:" in captured.err


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "S1", "--strategy", "lazy"])
    assert exc.value.code == 2
