import json
import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teamplan import world as W
from teamplan.geometry import CollisionMap
from teamplan.state import Pose2D, SkillInvocation, WorldState

from helpers import crossing_world, placed


def test_init_is_pure(sim):
    a = W.init_scene(11, "hard", sim.scene)
    b = W.init_scene(11, "hard", sim.scene)
    assert a == b
    assert a != W.init_scene(12, "hard", sim.scene)


@pytest.mark.parametrize("difficulty", ["easy", "hard"])
@pytest.mark.parametrize("seed", range(8))
def test_init_respects_placement_rules(sim, seed, difficulty):
    scene = sim.scene
    w = W.init_scene(seed, difficulty, scene)
    cmap = CollisionMap.build(w.obstacles, scene.robot_radius, scene.domain)
    x0, x1, y0, y1 = scene.agv_region
    agvs = [a for a in w.agents if a.kind == "agv"]
    assert len(agvs) == 3
    for a in agvs:
        assert x0 <= a.pose.x <= x1 and y0 <= a.pose.y <= y1
        assert cmap.point_free(*a.pose.xy)
    mobile = [a.pose for a in agvs] + [w.agent("arm_1").pose]
    for i, p in enumerate(mobile):
        for q in mobile[i + 1:]:
            assert p.distance_to(q) >= scene.agv_clearance
    hum = w.agent("humanoid_1").pose
    assert max(abs(hum.x), abs(hum.y)) <= scene.humanoid_half_width
    # components sit on the corner anchors, trunk sharing the NE anchor with wheel_1
    assert w.component("trunk").pose.xy == (4.0, 8.0) == w.component("wheel_1").pose.xy
    assert {c.pose.xy for c in w.components} == {(4.0, 8.0), (-4.0, 8.0), (-4.0, -8.0), (4.0, -8.0)}


def test_unknown_difficulty(sim):
    with pytest.raises(ValueError):
        W.init_scene(0, "medium", sim.scene)


def test_walls_are_long_along_x(sim):
    w = W.init_scene(0, "easy", sim.scene)
    walls = [o for o in w.obstacles if o.kind == "wall"]
    assert len(walls) == 4
    for o in walls:
        assert o.half_extents == (2.5, 0.5)
        assert (abs(o.center.x), abs(o.center.y)) == (4.5, 6.5)


@pytest.mark.parametrize("seed", range(4))
def test_observe_matches_brute_force(sim, seed):
    w = W.init_scene(seed, "hard", sim.scene)
    for r in (0.5, 3.0, 5.0, 30.0):
        for a in w.agents:
            obs = W.observe(w, a.name, r)
            expect = {c.name for c in w.components
                      if math.hypot(c.pose.x - a.pose.x, c.pose.y - a.pose.y) <= r}
            assert {n for n, _, _ in obs.visible_components} == expect
            others = {b.name for b in w.agents if b.name != a.name
                      and math.hypot(b.pose.x - a.pose.x, b.pose.y - a.pose.y) <= r}
            assert {n for n, _ in obs.visible_agents} == others


@pytest.mark.parametrize("seed", range(5))
def test_corner_components_hidden_from_center(sim, seed):
    w = W.init_scene(seed, "easy", sim.scene)
    for name in ("arm_1", "humanoid_1"):
        assert not W.observe(w, name).visible_components


def test_empty_action_map_equals_all_wait(sim):
    w = W.init_scene(5, "easy", sim.scene)
    waits = {a.name: SkillInvocation(a.name, "wait") for a in w.agents}
    a, fa = W.step(w, {}, sim)
    b, fb = W.step(w, waits, sim)
    assert a == b and fa == fb
    assert a.agents == w.agents and a.components == w.components
    assert fa.step == 1 and not fa.conflicts and not fa.outcomes


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["easy", "hard"]))
def test_step_advances_counter_by_one(seed, difficulty):
    w = W.init_scene(seed, difficulty)
    new, fb = W.step(w, {"agv_1": SkillInvocation("agv_1", "move", location=(0.0, 0.0))})
    assert new.step == w.step + 1 == fb.step
    assert len(fb.state_updates) == len(w.agents)


def test_step_rejects_unknown_agent(sim):
    w = W.init_scene(0, "easy", sim.scene)
    with pytest.raises(KeyError):
        W.step(w, {"ghost": SkillInvocation("ghost", "wait")}, sim)


def test_kind_mismatch_is_infeasible(sim):
    w = W.init_scene(0, "easy", sim.scene)
    _, fb = W.step(w, {"agv_1": SkillInvocation("agv_1", "pick", "wheel_1", "assembly_zone")}, sim)
    out = dict(fb.outcomes)["agv_1"]
    assert not out.success and out.failure_reason == "infeasible"


def test_same_object_conflict_fails_both(quiet_sim):
    w = placed(W.init_scene(0, "easy", quiet_sim.scene), agv_1=(-3.0, 6.0), agv_2=(-2.0, 5.0))
    acts = {n: SkillInvocation(n, "push", "wheel_2", "assembly_zone") for n in ("agv_1", "agv_2")}
    new, fb = W.step(w, acts, quiet_sim)
    assert len(fb.conflicts) == 1
    c = fb.conflicts[0]
    assert c.kind == "same_object" and c.agents == ("agv_1", "agv_2")
    outs = dict(fb.outcomes)
    assert all(outs[n].failure_reason == "conflict" for n in acts)
    assert new.component("wheel_2") == w.component("wheel_2")
    assert new.agent("agv_1").pose == w.agent("agv_1").pose


def test_crossing_paths_conflict(quiet_sim):
    w = crossing_world(quiet_sim.scene)
    acts = {"agv_1": SkillInvocation("agv_1", "move", location=(2.0, -1.0)),
            "agv_2": SkillInvocation("agv_2", "move", location=(0.0, 1.0))}
    new, fb = W.step(w, acts, quiet_sim)
    assert [c.kind for c in fb.conflicts] == ["path_overlap"]
    assert all(not o.success and o.failure_reason == "conflict" for _, o in fb.outcomes)
    assert new.agent("agv_2").pose == w.agent("agv_2").pose


def test_parallel_paths_do_not_conflict(quiet_sim):
    w = crossing_world(quiet_sim.scene)
    w = placed(w, agv_2=(-2.0, -1.0, 0.0))
    acts = {"agv_1": SkillInvocation("agv_1", "move", location=(2.0, 1.0)),
            "agv_2": SkillInvocation("agv_2", "move", location=(2.0, -1.0))}
    new, fb = W.step(w, acts, quiet_sim)
    assert not fb.conflicts
    assert new.agent("agv_1").pose.distance_to(Pose2D(2.0, 1.0)) <= quiet_sim.skills.drive.goal_tolerance


def test_no_failure_step_is_deterministic(quiet_sim):
    w = W.init_scene(4, "easy", quiet_sim.scene)
    acts = {"agv_1": SkillInvocation("agv_1", "move", location="lookout_nw"),
            "humanoid_1": SkillInvocation("humanoid_1", "walk", location="lookout_se")}
    assert W.step(w, acts, quiet_sim) == W.step(w, acts, quiet_sim)


def test_world_json_round_trip(sim):
    w = W.init_scene(2, "hard", sim.scene)
    w2, _ = W.step(w, {"agv_1": SkillInvocation("agv_1", "move", location=(0.0, 3.0))}, sim)
    for x in (w, w2):
        assert WorldState.from_dict(json.loads(json.dumps(x.to_dict()))) == x


def test_assembly_complete(sim):
    w = W.init_scene(0, "easy", sim.scene)
    assert not W.check_assembly_complete(w)
    done = w
    for c in w.components:
        done = done.with_component(replace(c, attached=True))
    assert W.check_assembly_complete(done)


def test_staging_reservation_is_by_sorted_name(sim):
    w = W.init_scene(0, "easy", sim.scene)
    got = W.reserve_staging(w, sim.scene, ["agv_3", "agv_1"])
    assert got == {"agv_1": "staging_1", "agv_3": "staging_2"}
