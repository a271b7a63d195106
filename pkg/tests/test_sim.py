import math

import pytest

from hanguard.sim import (
    EventKind,
    LinkModel,
    MetricsReport,
    Scenario,
    ScenarioError,
    Simulator,
    builtin,
    detection_oracle,
    measure_decision_latency,
    parse_scenarios,
    read_metrics_csv,
    run_scenario,
    validate_scenario,
)
from hanguard.sim.scenarios import expected_attacker_packets, s5_flow_start
from hanguard.sim.topology import FlowSpec, Topology

# -- engine ---------------------------------------------------------------------------


def test_events_run_in_time_then_schedule_order():
    sim, seen = Simulator(), []
    sim.at(5, EventKind.TIMER_FIRE, seen.append, "b")
    sim.at(1, EventKind.TIMER_FIRE, seen.append, "a")
    sim.at(5, EventKind.TIMER_FIRE, seen.append, "c")
    sim.run()
    assert seen == ["a", "b", "c"] and sim.now == 5 and sim.processed == 3


def test_events_scheduled_during_run_keep_order():
    sim, seen = Simulator(), []

    def first():
        seen.append(("first", sim.now))
        sim.after(0, EventKind.TIMER_FIRE, lambda: seen.append(("child", sim.now)))

    sim.at(3, EventKind.TIMER_FIRE, first)
    sim.at(3, EventKind.TIMER_FIRE, lambda: seen.append(("sibling", sim.now)))
    sim.run()
    assert seen == [("first", 3), ("sibling", 3), ("child", 3)]


def test_run_until_and_past_scheduling():
    sim, seen = Simulator(), []
    sim.at(10, EventKind.TIMER_FIRE, seen.append, 10)
    sim.at(20, EventKind.TIMER_FIRE, seen.append, 20)
    sim.run(until=15)
    assert seen == [10] and sim.now == 15 and len(sim) == 1
    with pytest.raises(ValueError):
        sim.at(14, EventKind.TIMER_FIRE, seen.append, 0)


def test_link_model_draws_are_keyed():
    link = LinkModel("data", 1000, 300, seed=4)
    a = [link.sample(0, i) for i in range(200)]
    assert a == [link.sample(0, i) for i in range(200)]
    assert all(700 <= x <= 1300 for x in a)
    assert len(set(a)) > 50
    assert LinkModel("data", 1000, 300, seed=5).sample(0, 1) != link.sample(0, 1) or a[1] == a[2]
    assert LinkModel("x", 50, 100).sample(1) >= 0
    assert LinkModel("x", 700, 0).sample(9) == 700


# -- metrics -------------------------------------------------------------------------


def test_decision_latency_examples():
    assert measure_decision_latency(10_000, 9_200) == -800
    assert measure_decision_latency(10_000, 11_500) == 1_500
    assert measure_decision_latency(None, 5) is None
    assert measure_decision_latency(5, None) is None


def test_metrics_csv_round_trip():
    r = MetricsReport("demo", 1)
    r.add(0, "flag", True)
    r.add(0, "mean", 1 / 3)
    r.add(1, "count", 7)
    assert r.to_csv() == "scenario,trial,metric,value\ndemo,0,flag,true\ndemo,0,mean,0.333\ndemo,1,count,7\n"
    assert read_metrics_csv(r.to_csv())[2] == ("demo", 1, "count", "7")
    with pytest.raises(ValueError):
        read_metrics_csv("a,b\n")


# -- oracles -------------------------------------------------------------------------


def brute_detect(phase, interval, open_us, close_us):
    return any(open_us <= t < close_us for t in range(phase, close_us + interval, interval))


def test_detection_oracle_against_enumeration():
    for interval in (10, 30, 100, 150):
        for phase in range(0, interval, 7):
            for open_us in range(0, 300, 3):
                for life in (1, 20, 40, interval):
                    assert detection_oracle(phase, interval, open_us, open_us + life) == brute_detect(
                        phase, interval, open_us, open_us + life
                    )


def test_lifetime_at_least_interval_always_detected_by_oracle():
    for interval in range(1, 60):
        for open_us in range(0, 2 * interval):
            assert detection_oracle(0, interval, open_us, open_us + interval)


def test_s5_flow_start_sits_just_before_a_tick():
    for phase, interval, warm, lead in [(0, 10_000, 50_000, 40), (3_333, 30_000, 50_000, 0), (99_999, 100_000, 50_000, 100)]:
        start = s5_flow_start(phase, interval, warm, lead)
        tick = start + lead
        assert (tick - phase) % interval == 0 and tick >= warm and tick - interval < warm


def test_expected_attacker_packets():
    # each of m messages is sent once plus r retransmissions, and the close adds a FIN
    assert expected_attacker_packets(3, 3) == 13


# -- scenarios ------------------------------------------------------------------------


def test_same_seed_same_bytes():
    a = run_scenario(builtin("S1"), seed=7)
    b = run_scenario(builtin("S1"), seed=7)
    assert a.to_csv() == b.to_csv() and a.events_csv() == b.events_csv()
    assert a.ok


def test_different_seed_changes_timings():
    a = run_scenario(builtin("S6", intervals_ms=100), seed=1, trace=True)
    b = run_scenario(builtin("S6", intervals_ms=100), seed=2, trace=True)
    assert a.trace_csv() != b.trace_csv()
    assert a.ok and b.ok


@pytest.mark.parametrize("name", ["S2", "S3", "S8", "S9"])
def test_security_scenarios_block_attacker(name):
    r = run_scenario(builtin(name), seed=1)
    assert r.ok, r.failures
    assert r.ints("hanguard.attacker_success") == [0]
    assert r.ints("vanilla.attacker_success")[0] > 0


def test_s3_guest_denied_at_phone_level():
    r = run_scenario(builtin("S3"), seed=1)
    assert r.get("hanguard.flow.guest-wemo-switch.verdict.Drop.PhoneLevelDeny") != []
    assert r.get("hanguard.flow.guest-pc.success") == ["true"]


def test_s8_nat_probes():
    r = run_scenario(builtin("S8"), seed=1)
    assert r.get("hanguard.unsolicited-before") == ["Drop(NatBlocked)"]
    assert r.get("vanilla.unsolicited-before") == ["Forward(NotInteresting)"]


def test_s9_spoofs():
    r = run_scenario(builtin("S9"), seed=1)
    assert r.get("hanguard.guest-claims-owner-ip") == ["Drop(SpoofSuspected)"]
    assert r.get("hanguard.guest-claims-owner-mac") == ["Drop(SpoofSuspected)"]


def test_s6_short_interval_detects_everything():
    r = run_scenario(builtin("S6", intervals_ms=10), seed=3)
    assert r.ok, r.failures
    assert r.ints("poll_10ms.tcp.detections") == [10] and r.ints("poll_10ms.udp.detections") == [10]


def test_s6_long_interval_misses_some():
    r = run_scenario(builtin("S6", intervals_ms=150), seed=1)
    assert r.ok, r.failures
    total = r.ints("poll_150ms.tcp.detections")[0] + r.ints("poll_150ms.udp.detections")[0]
    assert 0 < total < 20


def test_parse_scenarios_file():
    text = """\
# two variants
scenario quick base=S6 trials=2 seed=9
intervals_ms=30
lifetime_ms=25
scenario flood base=S4
rate_threshold=10
"""
    out = parse_scenarios(text)
    assert set(out) == {"quick", "flood"}
    q = out["quick"]
    assert (q.base, q.n_trials, q.seed, q.params) == ("S6", 2, 9, {"intervals_ms": "30", "lifetime_ms": "25"})
    assert out["flood"].sim_params().rate_threshold == 10


@pytest.mark.parametrize(
    "text,needle",
    [
        ("scenario x base=S99\n", "unknown scenario base"),
        ("scenario x base=S1\nbogus=1\n", "unknown parameter"),
        ("poll_ms=3\n", "outside a scenario"),
        ("scenario x base=S1 trials=many\n", "trials must be an integer"),
        ("scenario x base=S1\nscenario x base=S2\n", "duplicate scenario"),
        ("scenario x base=S1\npoll_ms=0\n", "poll_ms must be positive"),
        ("scenario x base=S1\nmodes=turbo\n", "modes must be drawn"),
        ("scenario x base=S4\nmodes=vanilla\n", "modes must be drawn"),
        ("scenario x base=S5\nintervals_ms=\n", "intervals_ms is empty"),
        ("scenario x base=S6\nphase_us=soon\n", "phase_us: expected an integer"),
        ("scenario x base=POLL\nstrategies=lazy\n", "strategies must be drawn"),
    ],
)
def test_parse_scenarios_errors(text, needle):
    with pytest.raises(ScenarioError) as exc:
        parse_scenarios(text)
    assert needle in str(exc.value)


def test_topology_problems_are_listed():
    topo = Topology(flows=[FlowSpec("f", "nobody", "nowhere", messages=0)])
    problems = topo.validate()
    assert "exactly one registered MCN phone required" in problems
    assert any("unknown source nobody" in p for p in problems)
    assert any("unknown destination nowhere" in p for p in problems)
    assert any("at least one message" in p for p in problems)


def test_validate_scenario_raises_with_problems():
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(Scenario("x", "S1", {"retries": "lots"}))
    assert exc.value.problems == ["parameter retries: expected an integer, got 'lots'"]
    with pytest.raises(ScenarioError):
        builtin("S11")


def test_poll_intervals_are_recorded():
    sc = builtin("S6", intervals_ms=30)
    sc.trials = 1
    r = run_scenario(sc, seed=1)
    assert math.isclose(float(r.get("poll_30ms.alice.poll_interval_mean_us")[0]), 30_000)
