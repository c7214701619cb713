import json
import re
from collections import Counter
from dataclasses import replace

import pytest

from teamplan import world as W
from teamplan.backends import BackendError, TransportError, WaitBackend
from teamplan.backends.scripted import ScriptedBackend
from teamplan.command import parse_command
from teamplan.memory import Ablations, ContextMemory
from teamplan.orchestrator import (
    EpisodeContext,
    EpisodeState,
    OrchestratorConfig,
    dump_log,
    executor_decide,
    run_cycle,
    run_episode,
)
from teamplan.proposal import SECTIONS, Proposal, SubgroupAssignment, format_proposal

from helpers import CannedBackend, crossing_world, quiet_episode_log, section

PROPOSAL_CROSS = format_proposal(Proposal(*[f"about {t}" for _, t in SECTIONS],
                                          (SubgroupAssignment(1, ("agv_1", "agv_2"), "swap sides"),)))


def manual_state(world, sim, ablations=Ablations()):
    mem = ContextMemory(ablations)
    mem.record(W.initial_feedback(world, sim))
    return EpisodeState(world, mem)


def ep_for(sim, **cfg):
    return EpisodeContext("assemble the car", sim, OrchestratorConfig(**cfg))


def test_scripted_task1_groups_and_parallelism(tasks, quiet_sim):
    res = quiet_episode_log(tasks["Task1"], quiet_sim)
    assert (res.success, res.steps) == (True, 7)
    first = res.log["scene_dynamics"][0]["groups"]
    assert [sorted(g["members"]) for g in first] == [["agv_1", "agv_2", "agv_3"], ["humanoid_1"], ["arm_1"]]
    assert len([s for s in res.log["parallel_execution"][0]["skills"]]) >= 3


def test_every_cycle_partitions_agents_and_acts_once(tasks, sim):
    res = run_episode(tasks["Task3"], ScriptedBackend(tasks["Task3"].script(sim.scene), sim), 5, sim=sim)
    for c in res.log["cycles"]:
        members = [m for a in c["proposal"]["assignments"] for m in a["members"]]
        assert len(members) == len(set(members))
        acted = Counter(d["agent"] for d in c["decisions"] if d["decision"] == "execute")
        assert all(n == 1 for n in acted.values())


def test_no_grouping_single_group(tasks, quiet_sim):
    res = quiet_episode_log(tasks["Task1"], quiet_sim, cfg=OrchestratorConfig(ablations=Ablations(no_grouping=True)))
    for c in res.log["scene_dynamics"]:
        assert len(c["groups"]) == 1
        assert sorted(c["groups"][0]["members"]) == ["agv_1", "agv_2", "agv_3", "arm_1", "humanoid_1"]
    assert not [e for e in res.log["exchanges"] if e["role"] == "general_planner"]


def test_malformed_proposal_falls_back(quiet_sim):
    six = "\n".join(f"### {t}\nsomething" for _, t in SECTIONS[:6]) + '\n<<<ASSIGNMENTS\n[]\nASSIGNMENTS>>>'
    b = CannedBackend(lambda r: six if r.role == "general_planner" else WaitBackend().complete(r).text)
    state = manual_state(W.init_scene(0, "easy", quiet_sim.scene), quiet_sim)
    rec = run_cycle(state, b, ep_for(quiet_sim))
    planner = b.prompts("general_planner")
    assert len(planner) == 3
    assert "Risk Assessment" in planner[1] and "could not be used" in planner[1]
    assert rec.fallback
    assert [a.members for a in rec.proposal.assignments] == [("arm_1", "agv_1", "agv_2", "agv_3", "humanoid_1")]


def test_all_idle_is_noop_step(quiet_sim):
    w = W.init_scene(0, "easy", quiet_sim.scene)
    state = manual_state(w, quiet_sim)
    rec = run_cycle(state, WaitBackend(), ep_for(quiet_sim))
    assert state.world.step == 1 and state.world.agents == w.agents
    assert rec.env_feedback.outcomes == () and len(state.records) == 1


def test_conflict_reaches_next_planner_prompt(quiet_sim):
    def reply(r):
        if r.role == "general_planner":
            return PROPOSAL_CROSS
        if r.role == "subgroup_manager":
            return ("<<<COMMANDS\ngroup 1: agent agv_1(2) [move] to (2.0, -1.0)\n"
                    "group 1: agent agv_2(3) [move] to (0.0, 1.0)\nCOMMANDS>>>")
        return "EXECUTE"

    b = CannedBackend(reply)
    state = manual_state(crossing_world(quiet_sim.scene), quiet_sim)
    rec = run_cycle(state, b, ep_for(quiet_sim))
    assert len(rec.env_feedback.conflicts) == 1
    report = rec.env_feedback.conflicts[0]
    run_cycle(state, b, ep_for(quiet_sim))
    nxt = b.prompts("general_planner")[-1]
    fb = section(nxt, "Feedback since the last proposal")
    assert f"conflict path_overlap between agv_1 and agv_2: {report.detail}" in fb
    assert state.memory.context_for_planner().latest_env.step == 2


def test_manager_error_becomes_feedback(quiet_sim):
    def reply(r):
        if r.role == "subgroup_manager":
            return BackendError("HTTP 400 bad request")
        return WaitBackend().complete(r).text

    state = manual_state(W.init_scene(0, "easy", quiet_sim.scene), quiet_sim)
    run_cycle(state, CannedBackend(reply), ep_for(quiet_sim))
    fb = state.memory.context_for_planner().recent_agent_feedback
    assert {f.agent for f in fb} == {"arm_1", "agv_1", "agv_2", "agv_3", "humanoid_1"}
    assert all("HTTP 400" in f.diagnostic for f in fb)


def test_transport_error_propagates(quiet_sim):
    def reply(r):
        if r.role == "subgroup_manager":
            return TransportError("endpoint down")
        return WaitBackend().complete(r).text

    state = manual_state(W.init_scene(0, "easy", quiet_sim.scene), quiet_sim)
    with pytest.raises(TransportError):
        run_cycle(state, CannedBackend(reply), ep_for(quiet_sim))


# -- executors ------------------------------------------------------------------

def test_executor_examples(sim):
    w = W.init_scene(0, "easy", sim.scene)
    obs = {a.name: W.observe(w, a.name) for a in w.agents}
    push = parse_command("group 1: agent agv_1(2) [push] wheel_2(11) to assembly_zone")
    d = executor_decide(push, w.agent("agv_1"), obs["agv_1"])
    assert d.decision == "execute" and d.invocation.verb == "push"

    holding = replace(w.agent("arm_1"), holding="wheel_1")
    pick = parse_command("group 1: agent arm_1(1) [pick] wheel_3(12) on (0.4, -2.4)")
    d = executor_decide(pick, holding, obs["arm_1"])
    assert d.decision == "idle" and "state inconsistency" in d.feedback.diagnostic

    human_pick = parse_command("group 1: agent humanoid_1(5) [pick] wheel_3(12) on (0.4, -2.4)")
    d = executor_decide(human_pick, w.agent("humanoid_1"), obs["humanoid_1"])
    assert d.decision == "idle" and "incorrect agent selection" in d.feedback.diagnostic


def test_executor_backend_can_decline(sim):
    w = W.init_scene(0, "easy", sim.scene)
    b = CannedBackend(lambda r: "IDLE: wheels are slipping")
    cmd = parse_command("group 1: agent agv_1(2) [move] to staging_1")
    d = executor_decide(cmd, w.agent("agv_1"), W.observe(w, "agv_1"), b, 4)
    assert d.decision == "idle" and d.feedback.diagnostic == "wheels are slipping"
    prompt = b.prompts("executor")[0]
    assert prompt.splitlines()[0] == "Robot: agv_1(2)" and prompt.count("agv_1(2)") >= 1
    assert b.requests[0].key == (4, "executor", "agv_1")


# -- episodes -----------------------------------------------------------------

def test_wait_backend_exhausts_budget(tasks, sim):
    res = run_episode(tasks["Task1"], WaitBackend(), 0, sim=sim)
    assert (res.success, res.steps, res.budget) == (False, 14, 14)


def test_injected_push_failure_recovers(tasks, quiet_sim):
    sim = replace(quiet_sim, skills=quiet_sim.skills.with_forced("push", 1))
    res = quiet_episode_log(tasks["Task1"], sim)
    assert res.success and res.steps <= 14
    reasons = [s["reason"] for c in res.log["parallel_execution"] for s in c["skills"]]
    assert "stochastic" in reasons


def test_log_is_canonical_and_ordered(tasks, quiet_sim):
    a = quiet_episode_log(tasks["Task2"], quiet_sim)
    b = quiet_episode_log(tasks["Task2"], quiet_sim)
    assert dump_log(a) == dump_log(b)
    log = json.loads(dump_log(a))
    assert {"cycles", "scene_dynamics", "parallel_execution", "exchanges", "memory", "initial_world",
            "final_world", "skills", "orchestrator"} <= set(log)
    # env feedback of cycle k precedes the planner turn of cycle k+1
    entries = log["memory"]["entries"]
    env_pos = {e["step"]: i for i, e in enumerate(entries) if e["kind"] == "env"}
    for i, e in enumerate(entries):
        if e["kind"] == "turn" and e["speaker"] == "general_planner":
            assert env_pos[e["cycle"]] < i


def test_sequential_and_parallel_managers_agree(tasks, quiet_sim):
    par = quiet_episode_log(tasks["Task3"], quiet_sim)
    seq = quiet_episode_log(tasks["Task3"], quiet_sim, cfg=OrchestratorConfig(parallel_managers=False))
    a, b = dict(par.log), dict(seq.log)
    assert a.pop("orchestrator")["parallel_managers"] and not b.pop("orchestrator")["parallel_managers"]
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
