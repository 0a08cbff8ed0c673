import pytest

from mixedraft.adversary import SAFETY_SCENARIOS, STRATEGIES, FaultSchedule, canned_scenarios
from mixedraft.core import ClusterConfig, ConfigError
from mixedraft.harness import run_scenario, scenario_from_dict

CFG = ClusterConfig.build(5, [True, True, False, False, False])


def test_tee_node_cannot_turn_byzantine():
    with pytest.raises(ConfigError, match="TEE"):
        FaultSchedule.from_json([{"fault": "byzantine", "node": 0, "strategy": "mute"}], CFG)


def test_more_than_f_faults_rejected():
    with pytest.raises(ConfigError, match="exceed f=1"):
        FaultSchedule.from_json(
            [{"fault": "crash", "node": 0, "at": 10}, {"fault": "byzantine", "node": 4, "strategy": "mute"}],
            CFG,
        )


@pytest.mark.parametrize("item,fragment", [
    ({"fault": "meteor", "node": 1}, "fault"),
    ({"fault": "crash", "node": 9}, "outside"),
    ({"fault": "crash", "node": 1, "at": -1}, "non-negative"),
    ({"fault": "byzantine", "node": 4, "strategy": "bribe"}, "strategy"),
    ({"fault": "byzantine", "node": 4, "strategy": "mute", "params": {"volume": 3}}, "params"),
    ({"fault": "partition", "group": [], "at": 0}, "group"),
    ({"fault": "partition", "group": [1], "at": 50, "until": 10}, "until"),
    ({"fault": "crash", "node": 1, "colour": "red"}, "unknown"),
])
def test_bad_fault_entries(item, fragment):
    with pytest.raises(ConfigError, match=fragment):
        FaultSchedule.from_json([item], CFG)


def test_schedule_round_trips():
    raw = [{"fault": "partition", "group": [0], "at": 10.0, "until": 20.0},
           {"fault": "byzantine", "node": 4, "at": 0.0, "strategy": "stale_lie", "params": {"term_boost": 5}}]
    sched = FaultSchedule.from_json(raw, CFG)
    assert sched.to_json() == raw
    assert sched.byzantine == (4,) and sched.crashed == ()


def test_strategy_registry():
    assert set(STRATEGIES) == {"equivocate", "double_vote", "stale_lie", "digest_corrupt", "mute", "delay"}


def test_canned_scenarios_cover_the_adversary_catalogue():
    for f in (1, 3):
        scen = canned_scenarios(f)
        assert set(SAFETY_SCENARIOS) <= set(scen)
        for name, raw in scen.items():
            s = scenario_from_dict(raw)
            assert s.n == 3 * f + 2
            assert len(s.faults.faulty) <= f
    with pytest.raises(ConfigError):
        canned_scenarios(0)


@pytest.mark.parametrize("name", SAFETY_SCENARIOS)
def test_canned_scenario_is_safe(name):
    for seed in (1, 2, 3):
        rep = run_scenario(scenario_from_dict(dict(canned_scenarios(1)[name], seed=seed)))
        assert rep.violations == []


def test_byzantine_tampering_is_traced_and_detected():
    rep = run_scenario(scenario_from_dict(dict(canned_scenarios(1)["digest_corrupt"], seed=4)))
    assert rep.violations == [] and rep.committed_requests == 20
    assert rep.evidence > 0


def test_equivocating_follower_does_not_stop_progress():
    rep = run_scenario(scenario_from_dict(dict(canned_scenarios(3)["equivocating_follower"], seed=2)))
    assert rep.violations == [] and rep.committed_requests == 20


def test_partition_heal_converges():
    rep = run_scenario(scenario_from_dict(dict(canned_scenarios(1)["partition_heal"], seed=5)))
    assert rep.violations == [] and rep.committed_requests == 20
    assert rep.elections >= 1


def test_delaying_follower_slows_but_never_breaks():
    base = {"protocol": "mraft", "n": 5, "tee": [True, True, False, False, False],
            "workload": {"count": 20, "interval_ms": 40}, "run_ms": 3000}
    for seed in (1, 2, 3):
        rep = run_scenario(scenario_from_dict(dict(base, seed=seed, faults=[
            {"fault": "byzantine", "node": 4, "strategy": "delay", "params": {"max_ms": 400}}])))
        assert rep.violations == [] and rep.committed_requests == 20
    with pytest.raises(ConfigError, match="max_ms"):
        scenario_from_dict(dict(base, faults=[
            {"fault": "byzantine", "node": 4, "strategy": "delay", "params": {"max_ms": -1}}]))
