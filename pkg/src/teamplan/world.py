"""Planar kinematic world: scene construction, observation, synchronous steps.

A step is one round in which every agent runs at most one skill.  All
skills are evaluated against the same pre-step state, conflicts between
them are detected, and the surviving outcomes are applied together.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Mapping, Optional, Sequence

import numpy as np

from . import skills as sk
from .config import SceneConfig, SimConfig, SkillConfig, default_sim_config
from .geometry import CollisionMap, resample
from .state import (
    AgentState,
    ComponentState,
    ConflictReport,
    EnvFeedback,
    Obstacle,
    Observation,
    Pose2D,
    SkillInvocation,
    SkillOutcome,
    WorldState,
)

DIFFICULTIES = ("easy", "hard")
ASSEMBLY_ZONE = "assembly_zone"
DEFAULT_LAYOUT = {"trunk": "ne", "wheel_1": "ne", "wheel_2": "nw", "wheel_3": "sw", "wheel_4": "se"}

_PLAN_SALT = 0
_FAIL_SALT = 1


class SceneError(RuntimeError):
    """Scene sampling could not satisfy its constraints."""


# --------------------------------------------------------------------------
# Scene construction
# --------------------------------------------------------------------------

def build_obstacles(scene: SceneConfig, difficulty: str,
                    blocker_overrides: Optional[Mapping[int, Sequence[float]]] = None) -> tuple[Obstacle, ...]:
    walls = [Obstacle(f"wall_{i + 1}", uid, Pose2D(*c), scene.wall_half_extents, "wall")
             for i, (uid, c) in enumerate(zip(scene.wall_uids, scene.wall_centers))]
    centers = list(scene.blocker_layouts[difficulty])
    for i, xy in (blocker_overrides or {}).items():
        centers[int(i)] = (float(xy[0]), float(xy[1]))
    blockers = [Obstacle(f"blocker_{i + 1}", uid, Pose2D(*c), scene.blocker_half_extents, "blocker")
                for i, (uid, c) in enumerate(zip(scene.blocker_uids, centers))]
    return tuple(walls + blockers)


def init_scene(seed: int, difficulty: str, scene: Optional[SceneConfig] = None,
               layout: Optional[Mapping[str, str]] = None,
               blocker_overrides: Optional[Mapping[int, Sequence[float]]] = None) -> WorldState:
    """Build the initial world for ``(seed, difficulty)``.

    Components sit on the corner anchors given by ``layout`` (two of them
    share one anchor, the trunk on top).  AGVs and the humanoid are sampled
    by rejection; the result is a pure function of the arguments.
    """
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}, got {difficulty!r}")
    scene = scene or default_sim_config().scene
    layout = dict(DEFAULT_LAYOUT if layout is None else layout)
    obstacles = build_obstacles(scene, difficulty, blocker_overrides)
    cmap = CollisionMap.build(obstacles, scene.robot_radius, scene.domain)

    comps = []
    for name, uid in scene.components:
        anchor = layout[name]
        comps.append(ComponentState(name, uid, Pose2D(*scene.anchors[anchor])))

    rng = np.random.default_rng([int(seed), DIFFICULTIES.index(difficulty)])
    arm_pose = scene.arm_pose
    h_clear = scene.humanoid_clearance[difficulty]
    for _ in range(scene.max_init_attempts):
        placed: list[tuple[float, float]] = [arm_pose.xy]
        ok = True
        agv_poses = []
        x0, x1, y0, y1 = scene.agv_region
        for _agv in range(sum(1 for a in scene.agents if a[2] == "agv")):
            x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
            if not cmap.point_free(x, y) or any(math.hypot(x - px, y - py) < scene.agv_clearance for px, py in placed):
                ok = False
            placed.append((x, y))
            agv_poses.append(Pose2D(x, y, rng.uniform(-math.pi, math.pi)))
        w = scene.humanoid_half_width
        hx, hy = rng.uniform(-w, w), rng.uniform(-w, w)
        hh = rng.uniform(-math.pi, math.pi)
        if not cmap.point_free(hx, hy):
            ok = False
        if any(math.hypot(hx - px, hy - py) < max(h_clear, 2 * scene.robot_radius) for px, py in placed):
            ok = False
        if ok:
            break
    else:
        raise SceneError(f"no valid initial placement after {scene.max_init_attempts} attempts")

    agents = []
    agv_iter = iter(agv_poses)
    for name, uid, kind in scene.agents:
        if kind == "arm":
            agents.append(AgentState(name, uid, kind, arm_pose, reach=scene.arm_reach))
        elif kind == "agv":
            agents.append(AgentState(name, uid, kind, next(agv_iter)))
        else:
            agents.append(AgentState(name, uid, kind, Pose2D(hx, hy, hh)))
    return WorldState(tuple(agents), tuple(comps), obstacles, 0, int(seed))


# --------------------------------------------------------------------------
# Observation
# --------------------------------------------------------------------------

def observe(world: WorldState, agent: str, radius: Optional[float] = None) -> Observation:
    """Everything within ``radius`` (Euclidean, inclusive) of the agent."""
    me = world.agent(agent)
    r = default_sim_config().scene.perception_radius if radius is None else radius
    p = me.pose
    return Observation(
        observer=me.name,
        self_state=me,
        visible_agents=tuple((a.name, a.pose) for a in sorted(world.agents, key=lambda a: a.uid)
                             if a.name != me.name and p.distance_to(a.pose) <= r),
        visible_components=tuple((c.name, c.pose, c.attached) for c in sorted(world.components, key=lambda c: c.uid)
                                 if p.distance_to(c.pose) <= r),
        visible_obstacles=tuple((o.name, o.center) for o in sorted(world.obstacles, key=lambda o: o.uid)
                                if p.distance_to(o.center) <= r),
    )


def observe_all(world: WorldState, radius: Optional[float] = None) -> tuple[Observation, ...]:
    return tuple(observe(world, a.name, radius) for a in sorted(world.agents, key=lambda a: a.uid))


def check_assembly_complete(world: WorldState) -> bool:
    return bool(world.components) and all(c.attached for c in world.components)


# --------------------------------------------------------------------------
# Locations
# --------------------------------------------------------------------------

def free_sockets(world: WorldState, scene: SceneConfig) -> dict[str, tuple[float, float]]:
    out = {}
    for name, (x, y) in scene.sockets.items():
        taken = any(c.attached and math.hypot(c.pose.x - x, c.pose.y - y) < 1e-6 for c in world.components)
        if not taken:
            out[name] = (x, y)
    return out


def free_staging(world: WorldState, scene: SceneConfig) -> list[str]:
    """Staging spots with no loose component on them, in config order."""
    tol = scene.stack_tolerance
    return [name for name, (x, y) in scene.staging.items()
            if not any(not c.attached and math.hypot(c.pose.x - x, c.pose.y - y) <= tol for c in world.components)]


def reserve_staging(world: WorldState, scene: SceneConfig, agents: Sequence[str]) -> dict[str, str]:
    """Give each agent delivering to the assembly zone its own free staging spot.

    Reservation is by sorted agent name so that concurrent deliveries never
    target the same spot.  Agents left over when spots run out get none.
    """
    spots = free_staging(world, scene)
    return {a: s for a, s in zip(sorted(agents), spots)}


def resolve_location(location, scene: SceneConfig, reserved: Optional[str] = None) -> Optional[Pose2D]:
    """Turn a named location or pose into a ``Pose2D`` (None if unknown)."""
    if location is None:
        return None
    if isinstance(location, Pose2D):
        return location
    if isinstance(location, (tuple, list)):
        return Pose2D.from_seq(location)
    name = str(location)
    if name == ASSEMBLY_ZONE:
        return None if reserved is None else Pose2D(*scene.staging[reserved])
    locs = scene.named_locations()
    if name in locs:
        return Pose2D(*locs[name])
    return None


# --------------------------------------------------------------------------
# Step
# --------------------------------------------------------------------------

def execute_skill(world: WorldState, inv: SkillInvocation, target: Optional[Pose2D], rng,
             cfg: SimConfig) -> SkillOutcome:
    agent = world.agent(inv.agent)
    scene, skc = cfg.scene, cfg.skills
    base = SkillOutcome(success=True, new_agent_pose=agent.pose)
    if not agent.can(inv.verb):
        return base.failed("infeasible", f"{agent.name} ({agent.kind}) cannot {inv.verb}")
    if inv.verb == "wait":
        return base
    if inv.object is not None and not world.has_entity(inv.object):
        return base.failed("infeasible", f"state inconsistency: no object named {inv.object}")
    needs_target = inv.verb in ("pick", "move", "walk", "push", "carry")
    if needs_target and target is None:
        if inv.location == ASSEMBLY_ZONE:
            return base.failed("infeasible", "no free staging spot left in the assembly zone")
        return base.failed("infeasible", f"state inconsistency: unknown location {inv.location!r}")

    if inv.verb == "check":
        if inv.object is None or not any(c.name == inv.object for c in world.components):
            return base.failed("infeasible", "check needs a component")
        comp = world.component(inv.object)
        if sk.arm_check(agent, comp):
            return SkillOutcome(True, agent.pose, diagnostic=f"{comp.name} is within reach")
        return base.failed("unreachable", f"{comp.name} is {agent.pose.distance_to(comp.pose):.3f} m away, beyond reach")
    if inv.verb == "pick":
        if inv.object is None or not any(c.name == inv.object for c in world.components):
            return base.failed("infeasible", "pick needs a component")
        comp = world.component(inv.object)
        trunk_on = any(c.kind == "trunk" and c.attached for c in world.components)
        return sk.arm_pick(agent, comp, target, skc.impedance, sockets=free_sockets(world, scene),
                           trunk_mounted=trunk_on)
    if inv.verb == "move":
        return sk.agv_move(agent, target, world, rng, scene, skc)
    if inv.verb == "push":
        if inv.object is None:
            return base.failed("infeasible", "push needs an object")
        return sk.agv_push(agent, inv.object, target, world, rng, scene, skc)
    return sk.humanoid_skill(agent, inv.verb, inv.object, target, world, rng, scene, skc)


def detect_conflicts(invocations: Mapping[str, SkillInvocation], outcomes: Mapping[str, SkillOutcome],
                     world: WorldState, distance: float = 0.5, samples: int = 50) -> list[ConflictReport]:
    """Pairwise conflicts among the non-wait skills of one step.

    ``same_object``: two skills name the same object.  ``path_overlap``: two
    mobile robots' trajectories, resampled at matched arc-length fractions,
    come closer than ``distance``.
    """
    active = sorted((n for n, inv in invocations.items() if inv.verb != "wait"),
                    key=lambda n: world.agent(n).uid)
    reports = []
    for i, a in enumerate(active):
        for b in active[i + 1:]:
            ia, ib = invocations[a], invocations[b]
            if ia.object is not None and ia.object == ib.object:
                reports.append(ConflictReport((a, b), "same_object", f"{a} and {b} both targeted {ia.object}"))
                continue
            ta, tb = outcomes[a].trajectory, outcomes[b].trajectory
            if not (outcomes[a].success and outcomes[b].success) or len(ta) < 2 or len(tb) < 2:
                continue
            if world.agent(a).kind == "arm" or world.agent(b).kind == "arm":
                continue
            pa = resample([p.xy for p in ta], samples)
            pb = resample([p.xy for p in tb], samples)
            dmin, k = min((math.hypot(p[0] - q[0], p[1] - q[1]), j) for j, (p, q) in enumerate(zip(pa, pb)))
            if dmin < distance:
                x, y = pa[k]
                reports.append(ConflictReport(
                    (a, b), "path_overlap",
                    f"paths of {a} and {b} came within {dmin:.2f} m near ({x:.1f}, {y:.1f})"))
    return reports


def step(world: WorldState, actions: Mapping[str, SkillInvocation],
         cfg: Optional[SimConfig] = None) -> tuple[WorldState, EnvFeedback]:
    """Advance the world by one synchronous round."""
    cfg = cfg or default_sim_config()
    scene, skc = cfg.scene, cfg.skills
    for name, inv in actions.items():
        world.agent(name)
        if inv.agent != name:
            raise ValueError(f"action keyed by {name} belongs to {inv.agent}")
    order = sorted(world.agents, key=lambda a: a.uid)
    index = {a.name: i for i, a in enumerate(order)}
    invs = {a.name: actions.get(a.name, SkillInvocation(a.name, "wait")) for a in order}

    reserved = reserve_staging(world, scene, [n for n, inv in invs.items()
                                              if inv.verb != "wait" and inv.location == ASSEMBLY_ZONE])
    outcomes: dict[str, SkillOutcome] = {}
    for name, inv in invs.items():
        target = resolve_location(inv.location, scene, reserved.get(name))
        rng = np.random.default_rng([world.rng_seed, world.step, index[name], _PLAN_SALT])
        outcomes[name] = execute_skill(world, inv, target, rng, cfg)

    conflicts = detect_conflicts(invs, outcomes, world, skc.conflict_distance, skc.conflict_samples)
    conflicted = {n for c in conflicts for n in c.agents}
    for n in conflicted:
        others = sorted({m for c in conflicts if n in c.agents for m in c.agents} - {n})
        outcomes[n] = outcomes[n].failed("conflict", f"conflict with {', '.join(others)}",
                                         pose=world.agent(n).pose)

    counts = dict(world.skill_counts)
    forced = set(skc.forced_failures)
    for name, inv in invs.items():
        if inv.verb == "wait":
            continue
        frng = np.random.default_rng([world.rng_seed, world.step, index[name], _FAIL_SALT])
        out = outcomes[name]
        start = world.agent(name).pose
        if out.success:
            counts[inv.verb] = counts.get(inv.verb, 0) + 1
            if (inv.verb, counts[inv.verb]) in forced:
                frng.random()
                outcomes[name] = out.failed("stochastic", f"{inv.verb} failed during execution", pose=start)
                continue
        outcomes[name] = sk.apply_stochastic_failure(out, inv.verb, frng, skc.failure_rates, start)

    new = _apply(world, outcomes, cfg)
    new = replace(new, step=world.step + 1, skill_counts=tuple(sorted(counts.items())))
    fb = EnvFeedback(
        step=new.step,
        state_updates=observe_all(new, scene.perception_radius),
        conflicts=tuple(conflicts),
        outcomes=tuple((n, outcomes[n]) for n in invs if invs[n].verb != "wait"),
    )
    return new, fb


def _apply(world: WorldState, outcomes: Mapping[str, SkillOutcome], cfg: SimConfig) -> WorldState:
    new = world
    for name, out in outcomes.items():
        if not out.success:
            continue
        new = new.with_agent(replace(new.agent(name), pose=out.new_agent_pose, holding=None, busy=False))
        if out.moved_component is not None:
            cname, pose = out.moved_component
            new = new.with_component(replace(new.component(cname), pose=pose, attached=out.attached, carrier=None))
        if out.moved_obstacle is not None:
            oname, center = out.moved_obstacle
            new = new.with_obstacle(replace(new.obstacle(oname), center=center))
    return new


def initial_feedback(world: WorldState, cfg: Optional[SimConfig] = None) -> EnvFeedback:
    """Feedback describing the world before any step has been taken."""
    cfg = cfg or default_sim_config()
    return EnvFeedback(step=world.step, state_updates=observe_all(world, cfg.scene.perception_radius))


def with_skills(cfg: SimConfig, skills: SkillConfig) -> SimConfig:
    return replace(cfg, skills=skills)
