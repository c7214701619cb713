"""Deterministic rule-based planner that stands in for a language model.

It answers every role from the structured context attached to the request.
What it knows about the world beyond the current observations (moved
blockers, components last seen out of view, scouted corners) is its
belief.  The belief is written into its own replies (a ``belief:`` line)
and also kept on the backend instance, because the five-turn dialogue
window is usually filled by executor turns before the next proposal.  A
fresh instance picks the belief up from the dialogue when it can.

The plan it realizes is the minimal one for the assembly tasks: the
humanoid clears a blocker if one is in the way and brings the trunk to the
arm, the AGVs bring the wheels, and the arm mounts the trunk and then the
wheels.  Before committing AGV moves it predicts every mover's path and
holds back any AGV whose path would pass too close to a higher-priority
one.
"""

from __future__ import annotations

import itertools
import json
import math
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from ..command import StructuredCommand, parse_command, render
from ..config import SceneConfig, SimConfig, default_sim_config
from ..geometry import CollisionMap, resample
from ..proposal import COMMANDS_CLOSE, COMMANDS_OPEN, Proposal, SubgroupAssignment, format_proposal
from ..state import AgentState, ComponentState, EnvFeedback, Obstacle, Observation, Pose2D, SkillInvocation, WorldState
from .base import BackendRequest, BackendResponse

BELIEF_PREFIX = "belief: "
_DIRECTIVE = re.compile(r"^\s*(group\s+\d+\s*:.*)$", re.IGNORECASE | re.MULTILINE)

GROUP_AGV, GROUP_HUMANOID, GROUP_ARM = 1, 2, 3


@dataclass(frozen=True)
class TaskScript:
    """What the task instruction tells the planner about the scene."""

    instruction: str
    components: Mapping[str, tuple[float, float]]   # initial positions it is told about
    blockers: Mapping[str, tuple[float, float]]


@dataclass
class Belief:
    components: dict[str, tuple[float, float, bool]] = field(default_factory=dict)
    obstacles: dict[str, tuple[float, float]] = field(default_factory=dict)
    seen: set[str] = field(default_factory=set)       # anchors somebody has looked at

    def encode(self) -> str:
        data = {
            "components": {k: [round(v[0], 4), round(v[1], 4), v[2]] for k, v in sorted(self.components.items())},
            "obstacles": {k: [round(v[0], 4), round(v[1], 4)] for k, v in sorted(self.obstacles.items())},
            "seen": sorted(self.seen),
        }
        return BELIEF_PREFIX + json.dumps(data, sort_keys=True, separators=(",", ":"))

    @classmethod
    def decode(cls, line: str) -> "Belief":
        d = json.loads(line[len(BELIEF_PREFIX):])
        return cls({k: (v[0], v[1], bool(v[2])) for k, v in d["components"].items()},
                   {k: (v[0], v[1]) for k, v in d["obstacles"].items()}, set(d["seen"]))

    @classmethod
    def from_script(cls, script: TaskScript) -> "Belief":
        return cls({k: (v[0], v[1], False) for k, v in script.components.items()},
                   {k: tuple(v) for k, v in script.blockers.items()})


@dataclass(frozen=True)
class Action:
    verb: str
    object: Optional[str] = None
    location: object = None


def belief_from_turns(turns, script: TaskScript) -> Belief:
    for t in reversed(tuple(turns)):
        for line in t.content.splitlines():
            line = line.strip().lstrip("# ").strip()
            if line.startswith(BELIEF_PREFIX):
                return Belief.decode(line)
    return Belief.from_script(script)


def update_belief(b: Belief, observations: Sequence[Observation], scene: SceneConfig,
                  env: Optional[EnvFeedback] = None) -> Belief:
    comps = dict(b.components)
    obst = dict(b.obstacles)
    seen = set(b.seen)
    # effects reported by the last step, even where nobody can see them now
    for _, out in (env.outcomes if env is not None else ()):
        if out.success and out.moved_obstacle is not None:
            n, p = out.moved_obstacle
            obst[n] = (p.x, p.y)
        if out.success and out.moved_component is not None:
            n, p = out.moved_component
            comps[n] = (p.x, p.y, out.attached)
    r = scene.perception_radius
    visible_c = {n for o in observations for n, _, _ in o.visible_components}
    visible_o = {n for o in observations for n, _ in o.visible_obstacles}
    for o in observations:
        here = o.self_state.pose
        for name, (x, y, _) in list(comps.items()):
            if name not in visible_c and math.hypot(x - here.x, y - here.y) < r - 0.05:
                del comps[name]
        for name, (x, y) in list(obst.items()):
            if name not in visible_o and math.hypot(x - here.x, y - here.y) < r - 0.05:
                del obst[name]
        for key, (ax, ay) in scene.anchors.items():
            if math.hypot(ax - here.x, ay - here.y) <= r:
                seen.add(key)
    for o in observations:
        for n, p, att in o.visible_components:
            comps[n] = (p.x, p.y, att)
        for n, p in o.visible_obstacles:
            if n.startswith("blocker"):
                obst[n] = (p.x, p.y)
    return Belief(comps, obst, seen)


class ScriptedPolicy:
    def __init__(self, script: TaskScript, sim: Optional[SimConfig] = None, risk_margin: float = 1.0):
        self.script = script
        self.sim = sim or default_sim_config()
        self.sim = replace(self.sim, skills=self.sim.skills.without_failures())
        self.scene = self.sim.scene
        self.risk_margin = risk_margin
        self.timing_slack = 5
        self.draws = 1
        self._uids = {n: u for n, u, _ in self.scene.agents}
        self._uids.update(dict(self.scene.components))
        self._uids.update({f"blocker_{i + 1}": u for i, u in enumerate(self.scene.blocker_uids)})

    # -- world reconstruction ------------------------------------------------

    def _world(self, b: Belief, agents: Sequence[AgentState], cycle: int) -> WorldState:
        from ..world import build_obstacles

        walls = tuple(o for o in build_obstacles(self.scene, "easy") if o.kind == "wall")
        blockers = tuple(Obstacle(n, self._uids[n], Pose2D(x, y), self.scene.blocker_half_extents, "blocker")
                         for n, (x, y) in sorted(b.obstacles.items()))
        comps = tuple(ComponentState(n, self._uids[n], Pose2D(x, y), att)
                      for n, (x, y, att) in sorted(b.components.items(), key=lambda kv: self._uids[kv[0]]))
        return WorldState(tuple(sorted(agents, key=lambda a: a.uid)), comps, walls + blockers, cycle, 0)

    def _cmap(self, world: WorldState, exclude=()) -> CollisionMap:
        return CollisionMap.build(world.obstacles, self.scene.robot_radius, self.scene.domain, exclude)

    # -- helpers ---------------------------------------------------------------

    def _blockers_near(self, world: WorldState, x: float, y: float) -> list[Obstacle]:
        return [o for o in world.obstacles
                if o.kind == "blocker" and o.distance_to_point(x, y) <= self.scene.access_clearance]

    def _staging_state(self, world: WorldState) -> list[str]:
        tol = self.scene.stack_tolerance
        return [n for n, (x, y) in self.scene.staging.items()
                if not any(not c.attached and math.hypot(c.pose.x - x, c.pose.y - y) <= tol for c in world.components)]

    def _loc(self, p: Pose2D):
        for name, (x, y) in self.scene.named_locations().items():
            if math.hypot(p.x - x, p.y - y) < 1e-9:
                return name
        return Pose2D(round(p.x, 3), round(p.y, 3))

    # -- per-role policies -------------------------------------------------

    def decide(self, b: Belief, agents: Sequence[AgentState], cycle: int,
               only: Optional[Sequence[str]] = None) -> tuple[dict[str, Action], list[str]]:
        """An action for every agent in ``agents`` (restricted to ``only``) plus risk notes."""
        world = self._world(b, agents, cycle)
        notes: list[str] = []
        free_spots = self._staging_state(world)
        reserved: set[str] = set()
        acts: dict[str, Action] = {}
        arm = next((a for a in world.agents if a.kind == "arm"), None)
        reach = self.scene.arm_reach

        def in_reach(c: ComponentState) -> bool:
            return arm is not None and arm.pose.distance_to(c.pose) <= reach + 1e-9

        trunk = next((c for c in world.components if c.kind == "trunk"), None)
        trunk_done = trunk is not None and (trunk.attached or in_reach(trunk))

        for h in (a for a in world.agents if a.kind == "humanoid"):
            acts[h.name] = self._humanoid(h, world, trunk, trunk_done, free_spots, reserved)
        if arm is not None:
            acts[arm.name] = self._arm(arm, world)
        agvs = [a for a in world.agents if a.kind == "agv"]
        acts.update(self._agvs(agvs, world, b, free_spots, reserved, in_reach))

        acts = self._assess_risk(acts, world, notes)
        if only is not None:
            acts = {k: v for k, v in acts.items() if k in only}
        return acts, notes

    def _humanoid(self, h: AgentState, world: WorldState, trunk, trunk_done, free_spots, reserved) -> Action:
        if trunk is None or trunk_done:
            return Action("wait")
        blocking = self._blockers_near(world, *trunk.pose.xy)
        if blocking:
            blk = min(blocking, key=lambda o: (o.distance_to_point(*h.pose.xy), o.name))
            if blk.distance_to_point(*h.pose.xy) <= self.scene.pickup_radius - 0.05:
                zone = self._clearing_zone(blk, world)
                return Action("carry", blk.name, zone) if zone else Action("wait")
            spot = self._approach(blk, h, world)
            return Action("walk", None, self._loc(spot)) if spot else Action("wait")
        if h.pose.distance_to(trunk.pose) <= self.scene.pickup_radius - 0.05:
            spot = "staging_3" if "staging_3" in free_spots else next((s for s in free_spots if s not in reserved), None)
            if spot is None:
                return Action("wait")
            reserved.add(spot)
            return Action("carry", trunk.name, spot)
        return Action("walk", None, self._loc(trunk.pose))

    def _approach(self, blk: Obstacle, h: AgentState, world: WorldState) -> Optional[Pose2D]:
        hx, hy = blk.half_extents
        cx, cy = blk.center.xy
        off = 0.3
        cands = [(cx + hx + off, cy), (cx - hx - off, cy), (cx, cy + hy + off), (cx, cy - hy - off),
                 (cx + hx + 0.2, cy + hy + 0.2), (cx - hx - 0.2, cy + hy + 0.2),
                 (cx + hx + 0.2, cy - hy - 0.2), (cx - hx - 0.2, cy - hy - 0.2)]
        cmap = self._cmap(world)
        ok = [p for p in cands if cmap.point_free(*p)]
        if not ok:
            return None
        x, y = min(ok, key=lambda p: (math.hypot(p[0] - h.pose.x, p[1] - h.pose.y), p))
        return Pose2D(x, y)

    def _clearing_zone(self, blk: Obstacle, world: WorldState) -> Optional[str]:
        best = None
        for name, (x, y) in sorted(self.scene.clearing_zones.items()):
            if any(o.name != blk.name and o.distance_to_point(x, y) < 1.2 for o in world.obstacles):
                continue
            d = blk.center.distance_to(Pose2D(x, y))
            if best is None or d < best[0]:
                best = (d, name)
        return None if best is None else best[1]

    def _arm(self, arm: AgentState, world: WorldState) -> Action:
        reach = self.scene.arm_reach
        loose = sorted((c for c in world.components
                        if not c.attached and arm.pose.distance_to(c.pose) <= reach + 1e-9), key=lambda c: c.uid)
        occupied = {n for n, (x, y) in self.scene.sockets.items()
                    if any(c.attached and math.hypot(c.pose.x - x, c.pose.y - y) < 0.01 for c in world.components)}
        trunk = next((c for c in world.components if c.kind == "trunk"), None)
        trunk_on = trunk is not None and trunk.attached
        for c in loose:
            if c.kind == "trunk" and "trunk_socket" not in occupied:
                return Action("pick", c.name, "trunk_socket")
        if trunk_on:
            sockets = [s for s in self.scene.sockets if s.startswith("wheel") and s not in occupied]
            for c in loose:
                if c.kind == "wheel" and sockets:
                    return Action("pick", c.name, sockets[0])
        if loose:
            return Action("check", loose[0].name)
        return Action("wait")

    def _agvs(self, agvs, world: WorldState, b: Belief, free_spots, reserved, in_reach) -> dict[str, Action]:
        acts: dict[str, Action] = {a.name: Action("wait") for a in agvs}
        trunk = next((c for c in world.components if c.kind == "trunk"), None)
        wheels = []
        for c in world.components:
            if c.kind != "wheel" or c.attached or in_reach(c):
                continue
            if trunk is not None and not trunk.attached and trunk.pose.distance_to(c.pose) <= self.scene.stack_tolerance:
                continue
            if self._blockers_near(world, *c.pose.xy):
                continue
            wheels.append(c)
        wheels.sort(key=lambda c: c.uid)
        # minimum total distance matching; straight-line matchings of this kind never cross
        best = None
        k = min(len(agvs), len(wheels))
        for wsub in itertools.combinations(wheels, k):
            for perm in itertools.permutations(agvs, k):
                cost = sum(a.pose.distance_to(w.pose) for a, w in zip(perm, wsub))
                key = (round(cost, 9), tuple(a.name for a in perm), tuple(w.name for w in wsub))
                if best is None or key < best[0]:
                    best = (key, list(zip(perm, wsub)))
        pairs = best[1] if best else []
        trunk_pending = trunk is not None and not trunk.attached
        busy = set()
        for a, w in sorted(pairs, key=lambda p: p[1].uid):
            spots = [s for s in free_spots if s not in reserved and not (trunk_pending and s == "staging_3")]
            if not spots:
                continue
            spot = min(spots, key=lambda s: (math.hypot(self.scene.staging[s][0] - w.pose.x,
                                                        self.scene.staging[s][1] - w.pose.y), s))
            reserved.add(spot)
            acts[a.name] = Action("push", w.name, spot)
            busy.add(a.name)
        known = {c.name for c in world.components}
        unknown = [n for n, _ in self.scene.components if n not in known]
        if unknown:
            unseen = [k for k in sorted(self.scene.anchors) if k not in b.seen]
            idle = [a for a in agvs if a.name not in busy]
            for key in unseen:
                if not idle:
                    break
                look = Pose2D(*self.scene.lookouts[f"lookout_{key}"])
                a = min(idle, key=lambda a: (a.pose.distance_to(look), a.name))
                idle.remove(a)
                acts[a.name] = Action("move", None, f"lookout_{key}")
        return acts

    # -- conflict prediction ---------------------------------------------------

    def _predict(self, world: WorldState, name: str, act: Action, idx: int) -> Optional[list]:
        """Outcomes of ``act`` under a few planner draws (None for stationary skills)."""
        from ..world import execute_skill, resolve_location

        if act.verb in ("wait", "check", "pick"):
            return None
        inv = SkillInvocation(name, act.verb, act.object, act.location)
        target = resolve_location(act.location, self.scene)
        return [execute_skill(world, inv, target, np.random.default_rng([world.step, idx, 7, k]), self.sim)
                for k in range(self.draws)]

    def _assess_risk(self, acts: dict[str, Action], world: WorldState, notes: list[str]) -> dict[str, Action]:
        order = sorted(world.agents, key=lambda a: ({"humanoid": 0, "arm": 1, "agv": 2}[a.kind], a.uid))
        kept: list[tuple[str, list]] = []
        kinds = {a.name: a.kind for a in world.agents}
        out = dict(acts)
        for i, a in enumerate(order):
            act = acts.get(a.name)
            if act is None:
                continue
            preds = self._predict(world, a.name, act, i)
            if preds is None:
                continue
            bad = next((p for p in preds if not p.success), None)
            if bad is not None:
                if a.kind == "agv":
                    notes.append(f"{a.name} holds: {act.verb} looks infeasible ({bad.diagnostic})")
                    out[a.name] = Action("wait")
                continue
            paths = [resample([p.xy for p in pr.trajectory], self.sim.skills.conflict_samples)
                     for pr in preds if len(pr.trajectory) >= 2]
            if not paths:
                continue
            clash = None
            for other, others in kept:
                # the humanoid's route varies the most between planner draws, keep clear of all of it
                w = len(paths[0]) if "humanoid" in (a.kind, kinds[other]) else self.timing_slack
                d = min(self._gap(p, q, w) for p in paths for q in others)
                if d < self.risk_margin:
                    clash = (other, d)
                    break
            if clash and a.kind == "agv":
                notes.append(f"{a.name} holds this cycle: its path would come within {clash[1]:.2f} m of {clash[0]}")
                out[a.name] = Action("wait")
                continue
            kept.append((a.name, paths))
        return out

    @staticmethod
    def _gap(pts, opts, w: int) -> float:
        """Closest approach of two resampled paths, comparing points up to ``w`` samples apart."""
        return min(math.hypot(p[0] - opts[j][0], p[1] - opts[j][1])
                   for i, p in enumerate(pts) for j in range(max(0, i - w), min(len(opts), i + w + 1)))

    # -- text ------------------------------------------------------------------

    def command_text(self, gid: int, agent: AgentState, act: Action) -> str:
        obj = None if act.object is None else (act.object, self._uids[act.object])
        return render(StructuredCommand(gid, ((agent.name, agent.uid),), act.verb, obj, act.location))


def _gid_for(kind: str) -> int:
    return {"agv": GROUP_AGV, "humanoid": GROUP_HUMANOID, "arm": GROUP_ARM}[kind]


_SUBTASKS = {
    GROUP_AGV: "bring the wheels to the assembly zone",
    GROUP_HUMANOID: "clear blocked access and bring the trunk to the assembly zone",
    GROUP_ARM: "mount the trunk, then the wheels",
}


class ScriptedBackend:
    """Backend answering from ``request.context`` with ``ScriptedPolicy``."""

    name = "scripted"

    def __init__(self, script: TaskScript, sim: Optional[SimConfig] = None, risk_margin: float = 1.0):
        self.policy = ScriptedPolicy(script, sim, risk_margin)
        self._belief: Optional[tuple[int, Belief]] = None
        self._lock = threading.Lock()

    def _recall(self, ctx) -> Belief:
        with self._lock:
            kept = self._belief
        if kept is not None and kept[0] <= ctx.cycle:
            return kept[1]
        return belief_from_turns(ctx.recent_turns, self.policy.script)

    def _remember(self, cycle: int, b: Belief) -> None:
        with self._lock:
            self._belief = (cycle, b)

    def complete(self, request: BackendRequest) -> BackendResponse:
        if request.role == "general_planner":
            return BackendResponse(self._propose(request.context))
        if request.role == "subgroup_manager":
            return BackendResponse(self._manage(request.context))
        if request.role == "capability_scorer":
            cmd, roster = request.context
            ok = all(roster[n].can(cmd.verb) for n in cmd.agent_names if n in roster)
            return BackendResponse("1.0" if ok else "0.0")
        return BackendResponse("EXECUTE")

    def _propose(self, ctx) -> str:
        pol = self.policy
        obs = ctx.observations
        if ctx.cycle == 0:
            with self._lock:
                self._belief = None
        belief = update_belief(self._recall(ctx), obs, pol.scene, ctx.latest_env)
        self._remember(ctx.cycle, belief)
        agents = [o.self_state for o in obs]
        acts, notes = pol.decide(belief, agents, ctx.cycle)
        by_gid: dict[int, list[AgentState]] = {}
        for a in sorted(agents, key=lambda a: a.uid):
            by_gid.setdefault(_gid_for(a.kind), []).append(a)
        assignments = []
        for gid in sorted(by_gid):
            lines = [pol.command_text(gid, a, acts[a.name]) for a in by_gid[gid]]
            subtask = _SUBTASKS[gid] + "\ndirectives:\n" + "\n".join(lines)
            assignments.append(SubgroupAssignment(gid, tuple(a.name for a in by_gid[gid]), subtask))

        comps = belief.components
        n_att = sum(1 for v in comps.values() if v[2])
        situation = (f"cycle {ctx.cycle}: {n_att} of {len(pol.scene.components)} components assembled.\n"
                     + belief.encode())
        spatial = "; ".join(f"{n} at ({x:.2f}, {y:.2f}){' attached' if att else ''}"
                            for n, (x, y, att) in sorted(comps.items())) or "no component located yet"
        blocked = [o for o, (x, y) in belief.obstacles.items()
                   if any(_near_footprint(x, y, c, pol.scene) for c in comps.values() if not c[2])]
        decomposition = ("clear " + ", ".join(sorted(blocked)) + "; " if blocked else "") + \
            "bring the trunk and wheels to the arm; mount the trunk; mount the wheels"
        grouping = "AGVs fetch wheels (group 1), the humanoid handles the trunk and blockers (group 2), the arm assembles (group 3)"
        subgoals = "\n".join(pol.command_text(_gid_for(a.kind), a, acts[a.name]) for a in sorted(agents, key=lambda a: a.uid))
        coordination = "the arm mounts the trunk before any wheel; deliveries use separate staging spots"
        risk = "\n".join(notes) if notes else "no predicted path overlap"
        prop = Proposal(situation, spatial, decomposition, grouping, subgoals, coordination, risk, tuple(assignments))
        return format_proposal(prop)

    def _manage(self, ctx) -> str:
        pol = self.policy
        members = set(ctx.members)
        lines = []
        directives = _DIRECTIVE.findall(ctx.subtask)
        if directives:
            for d in directives:
                try:
                    cmd = parse_command(d)
                except ValueError:
                    continue
                if set(cmd.agent_names) <= members:
                    lines.append(render(cmd))
            body = "\n".join(lines)
        else:
            belief = update_belief(self._recall(ctx), ctx.observations, pol.scene)
            agents = [o.self_state for o in ctx.observations]
            acts, notes = pol.decide(belief, agents, ctx.cycle, only=members)
            for a in sorted(agents, key=lambda a: a.uid):
                if a.name in acts:
                    lines.append(pol.command_text(ctx.gid, a, acts[a.name]))
            body = "# " + belief.encode() + "\n" + "\n".join(lines)
            if notes:
                body = "\n".join("# " + n for n in notes) + "\n" + body
        return f"{COMMANDS_OPEN}\n{body}\n{COMMANDS_CLOSE}"


def _near_footprint(x: float, y: float, comp, scene: SceneConfig) -> bool:
    hx, hy = scene.blocker_half_extents
    dx = max(abs(comp[0] - x) - hx, 0.0)
    dy = max(abs(comp[1] - y) - hy, 0.0)
    return math.hypot(dx, dy) <= scene.access_clearance
