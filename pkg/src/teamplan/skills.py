"""Low-level robot skills.

AGVs plan with RRT* and track the result with a pure-pursuit unicycle
controller; a push ends with a straight-line placement segment.  The arm is
a planar point end-effector driven by a unit-mass impedance law, gated by
its reach radius and finished by a magnetic snap onto the socket.  The
humanoid relocates kinematically along an RRT* path.

All functions are pure given their inputs and the ``rng`` they receive;
world mutation happens only in ``world.step``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import DriveLimits, ImpedanceParams, RRTParams, SceneConfig, SkillConfig
from .geometry import CollisionMap, densify, polyline_length
from .state import AgentState, ComponentState, Obstacle, Pose2D, SkillOutcome, WorldState

ARM_REACH = 0.855


class SkillError(Exception):
    """A skill cannot be carried out; ``reason`` is a SkillOutcome failure reason."""

    reason = "infeasible"

    def __init__(self, message: str, reason: Optional[str] = None):
        super().__init__(message)
        if reason is not None:
            self.reason = reason


class Unreachable(SkillError):
    reason = "unreachable"


class Infeasible(SkillError):
    reason = "infeasible"


@dataclass(frozen=True)
class Path:
    waypoints: tuple[Pose2D, ...]

    @property
    def length(self) -> float:
        return polyline_length([w.xy for w in self.waypoints])

    def points(self) -> list[tuple[float, float]]:
        return [w.xy for w in self.waypoints]


def _with_headings(pts: Sequence[tuple[float, float]], start_heading: float = 0.0) -> tuple[Pose2D, ...]:
    out = []
    for i, (x, y) in enumerate(pts):
        if i + 1 < len(pts):
            nx, ny = pts[i + 1]
            h = math.atan2(ny - y, nx - x) if (nx, ny) != (x, y) else start_heading
        elif i > 0:
            px, py = pts[i - 1]
            h = math.atan2(y - py, x - px)
        else:
            h = start_heading
        out.append(Pose2D(x, y, h))
    return tuple(out)


# --------------------------------------------------------------------------
# RRT*
# --------------------------------------------------------------------------

def rrt_plan(start: Pose2D, goal: Pose2D, obstacles: Sequence[Obstacle], rng: np.random.Generator,
             params: RRTParams = RRTParams(), *, inflate: float = 0.0,
             domain: Optional[tuple[float, float, float, float]] = None,
             collision: Optional[CollisionMap] = None, shortcut: bool = True) -> Path:
    """Plan a collision-free path from ``start`` to ``goal``.

    RRT* with goal biasing: each new node picks the cheapest collision-free
    parent among its ``rewire_k`` nearest neighbours and then rewires those
    neighbours through itself.  The search stops at the first connection to
    the goal; the branch is then shortcut greedily, every shortcut being
    re-checked at ``resolution``.

    Raises ``ValueError`` if start or goal is in collision and
    ``Unreachable`` when ``max_samples`` are exhausted.
    """
    cmap = collision or CollisionMap.build(obstacles, inflate, domain)
    res = params.resolution
    sx, sy = start.xy
    gx, gy = goal.xy
    if not cmap.point_free(sx, sy):
        raise ValueError(f"start ({sx:.2f}, {sy:.2f}) is in collision")
    if not cmap.point_free(gx, gy):
        raise ValueError(f"goal ({gx:.2f}, {gy:.2f}) is in collision")

    if math.hypot(gx - sx, gy - sy) < 1e-12:
        return Path((start,))
    if cmap.segment_free(sx, sy, gx, gy, res):
        return Path(_with_headings([(sx, sy), (gx, gy)], start.heading))

    if domain is None:
        if cmap.domain is not None:
            domain = cmap.domain
        else:
            pad = 2.0
            domain = (min(sx, gx) - pad, max(sx, gx) + pad, min(sy, gy) - pad, max(sy, gy) + pad)
    lo_x, hi_x, lo_y, hi_y = domain
    m = cmap.margin

    cap = params.max_samples + 2
    xs = np.empty(cap)
    ys = np.empty(cap)
    xs[0], ys[0] = sx, sy
    parent = [-1]
    cost = [0.0]
    children: list[list[int]] = [[]]
    n = 1
    step = params.step_size
    goal_idx = -1

    for _ in range(params.max_samples):
        if rng.random() < params.goal_bias:
            qx, qy = gx, gy
        else:
            qx = rng.uniform(lo_x + m, hi_x - m)
            qy = rng.uniform(lo_y + m, hi_y - m)
        d2 = (xs[:n] - qx) ** 2 + (ys[:n] - qy) ** 2
        near = int(np.argmin(d2))
        d = math.sqrt(d2[near])
        if d < 1e-9:
            continue
        f = min(step, d) / d
        nx = xs[near] + (qx - xs[near]) * f
        ny = ys[near] + (qy - ys[near]) * f
        if not cmap.point_free(nx, ny) or not cmap.segment_free(xs[near], ys[near], nx, ny, res):
            continue

        dn = np.hypot(xs[:n] - nx, ys[:n] - ny)
        k = min(params.rewire_k, n)
        nbrs = np.argpartition(dn, k - 1)[:k] if k < n else np.arange(n)
        # cheapest collision-free parent, checked lazily in cost order
        cands = sorted((cost[j] + dn[j], int(j)) for j in nbrs)
        best_parent, best_cost = near, cost[near] + dn[near]
        for c, j in cands:
            if c >= best_cost:
                break
            if cmap.segment_free(xs[j], ys[j], nx, ny, res):
                best_parent, best_cost = j, c
                break

        idx = n
        xs[idx], ys[idx] = nx, ny
        parent.append(best_parent)
        cost.append(best_cost)
        children.append([])
        children[best_parent].append(idx)
        n += 1

        for j in nbrs:
            j = int(j)
            if j == best_parent:
                continue
            c = best_cost + dn[j]
            if c + 1e-12 < cost[j] and cmap.segment_free(nx, ny, xs[j], ys[j], res):
                children[parent[j]].remove(j)
                parent[j] = idx
                children[idx].append(j)
                delta = c - cost[j]
                stack = [j]
                while stack:
                    u = stack.pop()
                    cost[u] += delta
                    stack.extend(children[u])

        dg = math.hypot(gx - nx, gy - ny)
        if dg <= step and cmap.segment_free(nx, ny, gx, gy, res):
            xs[n], ys[n] = gx, gy
            parent.append(idx)
            cost.append(best_cost + dg)
            children.append([])
            children[idx].append(n)
            goal_idx = n
            n += 1
            break

    if goal_idx < 0:
        raise Unreachable(f"no path from ({sx:.2f}, {sy:.2f}) to ({gx:.2f}, {gy:.2f}) within {params.max_samples} samples")

    chain = []
    u = goal_idx
    while u >= 0:
        chain.append((float(xs[u]), float(ys[u])))
        u = parent[u]
    chain.reverse()
    if shortcut:
        chain = shortcut_path(chain, cmap, res)
    return Path(_with_headings(chain, start.heading))


def shortcut_path(pts: list[tuple[float, float]], cmap: CollisionMap, resolution: float) -> list[tuple[float, float]]:
    """Greedy visibility shortcut: jump to the farthest directly reachable point."""
    out = [pts[0]]
    i = 0
    last = len(pts) - 1
    while i < last:
        j = last
        while j > i + 1 and not cmap.segment_free(*pts[i], *pts[j], resolution):
            j -= 1
        out.append(pts[j])
        i = j
    return out


# --------------------------------------------------------------------------
# AGV motion
# --------------------------------------------------------------------------

def follow_path_diff_drive(pose: Pose2D, path: Path, params: DriveLimits = DriveLimits()) -> list[Pose2D]:
    """Track ``path`` with a unicycle under pure pursuit.

    Returns the integrated trajectory (one pose per ``dt``), ending within
    ``goal_tolerance`` of the last waypoint.  Large heading errors are
    handled by turning in place.  Raises ``Infeasible`` when cross-track
    error exceeds ``max_cross_track`` or the time budget runs out.
    """
    pts = path.points()
    if len(pts) < 2 or path.length < 1e-12:
        return [pose]
    cum = [0.0]
    for a, b in zip(pts, pts[1:]):
        cum.append(cum[-1] + math.hypot(b[0] - a[0], b[1] - a[1]))
    total = cum[-1]
    ex, ey = pts[-1]

    def point_at(s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), total)
        j = 0
        while j < len(pts) - 2 and cum[j + 1] < s:
            j += 1
        seg = cum[j + 1] - cum[j]
        t = 0.0 if seg == 0 else (s - cum[j]) / seg
        return (pts[j][0] + (pts[j + 1][0] - pts[j][0]) * t, pts[j][1] + (pts[j + 1][1] - pts[j][1]) * t)

    def project(x: float, y: float, seg0: int) -> tuple[float, float, int]:
        """Arc length and distance of the closest path point, searching forward."""
        best = (math.inf, 0.0, seg0)
        for j in range(seg0, min(seg0 + 4, len(pts) - 1)):
            ax, ay = pts[j]
            bx, by = pts[j + 1]
            vx, vy = bx - ax, by - ay
            L2 = vx * vx + vy * vy
            t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((x - ax) * vx + (y - ay) * vy) / L2))
            px, py = ax + vx * t, ay + vy * t
            d = math.hypot(x - px, y - py)
            if d < best[0]:
                best = (d, cum[j] + t * math.sqrt(L2), j)
        return best[1], best[0], best[2]

    x, y, th = pose.x, pose.y, pose.heading
    traj = [pose]
    seg = 0
    progress = 0.0
    dt = params.dt
    t = 0.0
    while True:
        dist_end = math.hypot(ex - x, ey - y)
        if dist_end <= params.goal_tolerance:
            break
        s, cte, seg = project(x, y, seg)
        progress = max(progress, s)
        if cte > params.max_cross_track:
            raise Infeasible(f"tracking diverged: cross-track error {cte:.2f} m")
        lx, ly = point_at(progress + params.lookahead)
        if progress + params.lookahead >= total:
            lx, ly = ex, ey
        ld = math.hypot(lx - x, ly - y)
        alpha = math.remainder(math.atan2(ly - y, lx - x) - th, 2 * math.pi) if ld > 1e-9 else 0.0
        if abs(alpha) > math.pi / 3:
            v = 0.0
            w = math.copysign(min(params.omega_max, 4.0 * abs(alpha)), alpha)
        else:
            v = min(params.v_max, max(dist_end, 0.2))
            kappa = 2.0 * math.sin(alpha) / max(ld, 1e-6)
            w = v * kappa
            if abs(w) > params.omega_max:
                w = math.copysign(params.omega_max, w)
                v = params.omega_max / abs(kappa)
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
        th += w * dt
        traj.append(Pose2D(x, y, th))
        t += dt
        if t > params.max_time:
            raise Infeasible(f"path tracking exceeded {params.max_time:.0f} s")
    return traj


def straight_line_delivery(pose: Pose2D, target: Pose2D, obstacles: Sequence[Obstacle] = (), *,
                           inflate: float = 0.0, domain=None, resolution: float = 0.1,
                           collision: Optional[CollisionMap] = None) -> list[Pose2D]:
    """Linear interpolation from ``pose`` to ``target`` at ``resolution`` spacing.

    The last sample is exactly ``target``'s position.  Raises ``Infeasible``
    if any sample is in collision.
    """
    cmap = collision or CollisionMap.build(obstacles, inflate, domain)
    d = pose.distance_to(target)
    if d < 1e-12:
        if not cmap.point_free(*pose.xy):
            raise Infeasible("delivery point is in collision")
        return [pose]
    n = max(1, math.ceil(d / resolution - 1e-9))
    heading = math.atan2(target.y - pose.y, target.x - pose.x)
    out = []
    for i in range(n + 1):
        t = i / n
        if i == n:
            px, py = target.x, target.y
        else:
            px, py = pose.x + (target.x - pose.x) * t, pose.y + (target.y - pose.y) * t
        if not cmap.point_free(px, py):
            raise Infeasible(f"straight-line segment blocked at ({px:.2f}, {py:.2f})")
        out.append(Pose2D(px, py, heading))
    return out


# --------------------------------------------------------------------------
# Arm: impedance tracking, reach gating, magnetic attachment
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImpedanceState:
    position: tuple[float, ...]
    velocity: tuple[float, ...]
    kp: float = 5.0
    kv: float = 2.0 * math.sqrt(5.0)

    @classmethod
    def at_rest(cls, position, kp: float = 5.0, kv: Optional[float] = None) -> "ImpedanceState":
        pos = tuple(float(p) for p in np.atleast_1d(position))
        return cls(pos, (0.0,) * len(pos), kp, 2.0 * math.sqrt(kp) if kv is None else kv)

    def error(self, target) -> float:
        tgt = np.broadcast_to(np.asarray(target, dtype=float), (len(self.position),))
        return float(np.linalg.norm(tgt - np.asarray(self.position)))


def impedance_track(state: ImpedanceState, target, dt: float, n_steps: int) -> ImpedanceState:
    """Integrate the unit-mass law ``a = kp*(target - x) - kv*v`` per axis.

    Classical RK4; the target is held fixed over the horizon.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(state.position, dtype=float)
    v = np.array(state.velocity, dtype=float)
    tgt = np.broadcast_to(np.asarray(target, dtype=float), x.shape)
    kp, kv = state.kp, state.kv

    def acc(xx, vv):
        return kp * (tgt - xx) - kv * vv

    for _ in range(n_steps):
        a1 = acc(x, v)
        x2, v2 = x + 0.5 * dt * v, v + 0.5 * dt * a1
        a2 = acc(x2, v2)
        x3, v3 = x + 0.5 * dt * v2, v + 0.5 * dt * a2
        a3 = acc(x3, v3)
        x4, v4 = x + dt * v3, v + dt * a3
        a4 = acc(x4, v4)
        x = x + dt / 6.0 * (v + 2 * v2 + 2 * v3 + v4)
        v = v + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    return replace(state, position=tuple(float(p) for p in x), velocity=tuple(float(q) for q in v))


def track_until(state: ImpedanceState, target, threshold: float, params: ImpedanceParams,
                chunk: int = 10) -> ImpedanceState:
    """Run the impedance law until within ``threshold`` of ``target``."""
    steps = 0
    while state.error(target) > threshold:
        if steps >= params.phase_max_steps:
            raise Infeasible(f"end effector did not settle within {threshold} m")
        state = impedance_track(state, target, params.dt, chunk)
        steps += chunk
    return state


def arm_check(arm: AgentState, obj: ComponentState, reach: Optional[float] = None) -> bool:
    """True iff the object lies within the arm's planar reach (boundary inclusive)."""
    r = reach if reach is not None else (arm.reach if arm.reach is not None else ARM_REACH)
    return arm.pose.distance_to(obj.pose) <= r + 1e-12


def magnetic_attach(component: ComponentState, socket: Pose2D, magnet_range: float = 0.03) -> ComponentState:
    """Snap ``component`` onto ``socket`` if it lies within the magnet's range.

    Out of range the component is returned unchanged.
    """
    if component.pose.distance_to(socket) <= magnet_range + 1e-12:
        return replace(component, pose=socket, attached=True, carrier=None)
    return component


def socket_kind(socket_name: str) -> str:
    return "trunk" if socket_name.startswith("trunk") else "wheel"


def arm_pick(arm: AgentState, obj: ComponentState, location: Pose2D,
             params: ImpedanceParams = ImpedanceParams(), *,
             sockets: Optional[Mapping[str, tuple[float, float]]] = None,
             trunk_mounted: bool = True, reach: Optional[float] = None) -> SkillOutcome:
    """Pick ``obj`` and place it at ``location``.

    Approach is two impedance phases (coarse to the gripper closing
    threshold, fine to the grasp radius), then the same two phases towards
    the placement point.  Placement within the magnet range of a free
    socket of the right kind attaches the component.  ``sockets`` holds
    only the free sockets.  Wheels mount on the trunk, so a wheel socket
    needs ``trunk_mounted``.
    """
    r = reach if reach is not None else (arm.reach or ARM_REACH)
    base = SkillOutcome(success=True, new_agent_pose=arm.pose)
    if arm.holding is not None:
        return base.failed("infeasible", f"state inconsistency: {arm.name} is already holding {arm.holding}")
    if obj.attached:
        return base.failed("infeasible", f"{obj.name} is already assembled")
    if obj.carrier is not None:
        return base.failed("infeasible", f"{obj.name} is being carried by {obj.carrier}")
    dist = arm.pose.distance_to(obj.pose)
    if not arm_check(arm, obj, r):
        return base.failed("unreachable", f"{obj.name} is {dist:.3f} m from {arm.name}, beyond its {r:.3f} m reach")
    if arm.pose.distance_to(location) > r + 1e-12:
        return base.failed("infeasible", f"placement point is {arm.pose.distance_to(location):.3f} m away, beyond reach")

    matched = None
    for sname, (sx, sy) in (sockets or {}).items():
        if socket_kind(sname) != obj.kind:
            continue
        if math.hypot(location.x - sx, location.y - sy) <= params.magnet_range + 1e-12:
            matched = (sname, Pose2D(sx, sy, location.heading))
            break
    if matched is not None and obj.kind == "wheel" and not trunk_mounted:
        return base.failed("infeasible", f"cannot mount {obj.name} on {matched[0]}: the trunk is not assembled yet")

    ee = ImpedanceState.at_rest(arm.pose.xy, params.kp, params.kv)
    try:
        ee = track_until(ee, obj.pose.xy, params.gripper_threshold, params)
        ee = track_until(ee, obj.pose.xy, params.grasp_radius, params)
        ee = track_until(ee, location.xy, params.gripper_threshold, params)
        ee = track_until(ee, location.xy, params.grasp_radius, params)
    except Infeasible as exc:
        return base.failed("infeasible", str(exc))

    placed = replace(obj, pose=location, carrier=None)
    if matched is not None:
        placed = magnetic_attach(placed, matched[1], params.magnet_range)
    return SkillOutcome(
        success=True,
        new_agent_pose=arm.pose,
        moved_component=(obj.name, placed.pose),
        attached=placed.attached,
        diagnostic=f"placed {obj.name} on {matched[0]}" if placed.attached else f"placed {obj.name}",
    )


# --------------------------------------------------------------------------
# World-aware skill wrappers
# --------------------------------------------------------------------------

def access_problem(world: WorldState, comp: ComponentState, scene: SceneConfig) -> Optional[str]:
    """Why ``comp`` cannot be picked up right now, or None."""
    for o in world.obstacles:
        if o.kind == "blocker" and o.distance_to_point(*comp.pose.xy) <= scene.access_clearance:
            return f"{comp.name} is blocked by {o.name}"
    if comp.kind == "wheel":
        for other in world.components:
            if other.kind == "trunk" and not other.attached and \
                    other.pose.distance_to(comp.pose) <= scene.stack_tolerance:
                return f"{comp.name} is covered by {other.name}"
    return None


def collision_map(world: WorldState, scene: SceneConfig, exclude: Sequence[str] = ()) -> CollisionMap:
    return CollisionMap.build(world.obstacles, scene.robot_radius, scene.domain, exclude)


def _raw_footprints_clear(traj: Sequence[Pose2D], world: WorldState, scene: SceneConfig,
                          exclude: Sequence[str] = ()) -> bool:
    raw = CollisionMap.build(world.obstacles, 0.0, scene.domain, exclude)
    return all(raw.point_free(p.x, p.y) for p in traj)


def _plan_and_track(start: Pose2D, goal: Pose2D, cmap: CollisionMap, rng, cfg: SkillConfig) -> list[Pose2D]:
    if not cmap.point_free(*goal.xy):
        raise Infeasible(f"target ({goal.x:.2f}, {goal.y:.2f}) is blocked or outside the workspace")
    if start.distance_to(goal) <= cfg.drive.goal_tolerance:
        return [start]
    try:
        path = rrt_plan(start, goal, (), rng, cfg.rrt, collision=cmap)
    except ValueError as exc:
        raise Infeasible(str(exc)) from exc
    return follow_path_diff_drive(start, path, cfg.drive)


def agv_move(agent: AgentState, target: Pose2D, world: WorldState, rng, scene: SceneConfig,
             cfg: SkillConfig) -> SkillOutcome:
    base = SkillOutcome(success=True, new_agent_pose=agent.pose)
    cmap = collision_map(world, scene)
    try:
        traj = _plan_and_track(agent.pose, target, cmap, rng, cfg)
    except SkillError as exc:
        return base.failed(exc.reason, str(exc))
    if not _raw_footprints_clear(traj, world, scene):
        return base.failed("infeasible", "tracked trajectory clipped an obstacle")
    return SkillOutcome(success=True, new_agent_pose=traj[-1], trajectory=tuple(traj),
                        diagnostic=f"moved to ({traj[-1].x:.2f}, {traj[-1].y:.2f})")


def agv_push(agent: AgentState, comp_name: str, target: Pose2D, world: WorldState, rng,
             scene: SceneConfig, cfg: SkillConfig) -> SkillOutcome:
    """Drive to the component, tow it along an RRT* path, and finish with a
    straight-line placement leg of at most ``cfg.final_leg`` meters."""
    base = SkillOutcome(success=True, new_agent_pose=agent.pose)
    try:
        comp = world.component(comp_name)
    except KeyError:
        return base.failed("infeasible", f"state inconsistency: no component named {comp_name}")
    if comp.kind == "trunk":
        return base.failed("infeasible", "the trunk needs both hands; an AGV cannot push it")
    if comp.attached:
        return base.failed("infeasible", f"{comp.name} is already assembled")
    problem = access_problem(world, comp, scene)
    if problem:
        return base.failed("infeasible", problem)
    cmap = collision_map(world, scene)
    if not cmap.point_free(*target.xy):
        return base.failed("infeasible", f"target ({target.x:.2f}, {target.y:.2f}) is blocked or outside the workspace")
    try:
        approach = _plan_and_track(agent.pose, comp.pose, cmap, rng, cfg)
        here = approach[-1]
        transport: list[Pose2D] = []
        if here.distance_to(target) > cfg.final_leg:
            path = rrt_plan(here, target, (), rng, cfg.rrt, collision=cmap)
            cut = _cut_path(path, path.length - cfg.final_leg)
            transport = follow_path_diff_drive(here, cut, cfg.drive)[1:]
            here = transport[-1] if transport else here
        final = straight_line_delivery(here, target, collision=cmap, resolution=cfg.rrt.resolution)
    except SkillError as exc:
        return base.failed(exc.reason, str(exc))
    except ValueError as exc:
        return base.failed("infeasible", str(exc))
    traj = approach + transport + final[1:]
    if not _raw_footprints_clear(traj, world, scene):
        return base.failed("infeasible", "tracked trajectory clipped an obstacle")
    end = traj[-1]
    return SkillOutcome(success=True, new_agent_pose=end, moved_component=(comp.name, Pose2D(target.x, target.y, end.heading)),
                        trajectory=tuple(traj), diagnostic=f"pushed {comp.name} to ({target.x:.2f}, {target.y:.2f})")


def _cut_path(path: Path, s: float) -> Path:
    """The prefix of ``path`` of arc length ``s``."""
    pts = path.points()
    if s <= 0:
        return Path((path.waypoints[0],))
    out = [pts[0]]
    acc = 0.0
    for a, b in zip(pts, pts[1:]):
        d = math.hypot(b[0] - a[0], b[1] - a[1])
        if acc + d >= s:
            t = (s - acc) / d if d > 0 else 0.0
            out.append((a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t))
            break
        out.append(b)
        acc += d
    return Path(_with_headings(out, path.waypoints[0].heading))


def humanoid_skill(agent: AgentState, verb: str, obj: Optional[str], target: Pose2D, world: WorldState,
                   rng, scene: SceneConfig, cfg: SkillConfig) -> SkillOutcome:
    """Walk, or carry a component or blocker, along an RRT* path.

    A carried blocker is excluded from the collision map while in hand and
    is released centred on ``target``; the humanoid then steps back along
    its own trajectory until it clears the dropped footprint.
    """
    base = SkillOutcome(success=True, new_agent_pose=agent.pose)
    if agent.kind != "humanoid":
        return base.failed("infeasible", f"{agent.name} is not a humanoid")
    if verb == "walk":
        cmap = collision_map(world, scene)
        try:
            traj = _kinematic(agent.pose, target, cmap, rng, cfg)
        except SkillError as exc:
            return base.failed(exc.reason, str(exc))
        return SkillOutcome(success=True, new_agent_pose=traj[-1], trajectory=tuple(traj),
                            diagnostic=f"walked to ({target.x:.2f}, {target.y:.2f})")
    if verb != "carry":
        return base.failed("infeasible", f"humanoid cannot {verb}")
    if obj is None:
        return base.failed("infeasible", "carry needs an object")

    if any(c.name == obj for c in world.components):
        comp = world.component(obj)
        if comp.attached:
            return base.failed("infeasible", f"{comp.name} is already assembled")
        held = agent.holding == obj
        d = agent.pose.distance_to(comp.pose)
        if not held and d > scene.pickup_radius:
            return base.failed("infeasible", f"{comp.name} is {d:.2f} m away, outside the {scene.pickup_radius} m pickup radius")
        problem = access_problem(world, comp, scene)
        if problem:
            return base.failed("infeasible", problem)
        cmap = collision_map(world, scene)
        try:
            traj = _kinematic(agent.pose, target, cmap, rng, cfg)
        except SkillError as exc:
            return base.failed(exc.reason, str(exc))
        return SkillOutcome(success=True, new_agent_pose=traj[-1], trajectory=tuple(traj),
                            moved_component=(comp.name, Pose2D(target.x, target.y, traj[-1].heading)),
                            diagnostic=f"carried {comp.name} to ({target.x:.2f}, {target.y:.2f})")

    try:
        blk = world.obstacle(obj)
    except KeyError:
        return base.failed("infeasible", f"state inconsistency: no object named {obj}")
    if blk.kind != "blocker":
        return base.failed("infeasible", f"{blk.name} is a fixed wall")
    d = blk.distance_to_point(*agent.pose.xy)
    if agent.holding != obj and d > scene.pickup_radius:
        return base.failed("infeasible", f"{blk.name} is {d:.2f} m away, outside the {scene.pickup_radius} m pickup radius")
    dropped = replace(blk, center=Pose2D(target.x, target.y))
    problem = _drop_problem(dropped, world, scene, agent.name)
    if problem:
        return base.failed("infeasible", problem)
    cmap = collision_map(world, scene, exclude=(blk.name,))
    try:
        traj = _kinematic(agent.pose, target, cmap, rng, cfg)
    except SkillError as exc:
        return base.failed(exc.reason, str(exc))
    clear = scene.robot_radius + 0.05
    end = None
    for p in reversed(traj):
        if dropped.distance_to_point(*p.xy) >= clear:
            end = p
            break
    if end is None:
        return base.failed("infeasible", f"no room to step away from {blk.name} at the drop point")
    cut = traj[: traj.index(end) + 1]
    return SkillOutcome(success=True, new_agent_pose=end, trajectory=tuple(cut),
                        moved_obstacle=(blk.name, dropped.center),
                        diagnostic=f"carried {blk.name} to ({target.x:.2f}, {target.y:.2f})")


def _drop_problem(dropped: Obstacle, world: WorldState, scene: SceneConfig, carrier: str) -> Optional[str]:
    x0, y0, x1, y1 = dropped.bounds
    if not (scene.in_domain(x0, y0) and scene.in_domain(x1, y1)):
        return f"{dropped.name} would not fit inside the workspace there"
    for o in world.obstacles:
        if o.name == dropped.name:
            continue
        ox0, oy0, ox1, oy1 = o.bounds
        if ox0 < x1 and x0 < ox1 and oy0 < y1 and y0 < oy1:
            return f"{dropped.name} would overlap {o.name}"
    for c in world.components:
        if dropped.distance_to_point(*c.pose.xy) <= 0.05:
            return f"{dropped.name} would cover {c.name}"
    for a in world.agents:
        if a.name != carrier and dropped.distance_to_point(*a.pose.xy) < scene.robot_radius:
            return f"{dropped.name} would land on {a.name}"
    return None


def _kinematic(start: Pose2D, target: Pose2D, cmap: CollisionMap, rng, cfg: SkillConfig) -> list[Pose2D]:
    if not cmap.point_free(*target.xy):
        raise Infeasible(f"target ({target.x:.2f}, {target.y:.2f}) is blocked or outside the workspace")
    try:
        path = rrt_plan(start, target, (), rng, cfg.rrt, collision=cmap)
    except ValueError as exc:
        raise Infeasible(str(exc)) from exc
    return densify(list(path.waypoints), cfg.rrt.resolution)


# --------------------------------------------------------------------------
# Stochastic execution failures
# --------------------------------------------------------------------------

def apply_stochastic_failure(outcome: SkillOutcome, verb: str, rng: np.random.Generator,
                             rates: Mapping[str, float], start_pose: Optional[Pose2D] = None) -> SkillOutcome:
    """With probability ``rates[verb]`` turn a success into a stochastic failure.

    One uniform draw is consumed regardless of the rate so that streams stay
    aligned across configurations.  The failed outcome carries no effects and
    leaves the agent at ``start_pose``.
    """
    u = rng.random()
    if not outcome.success:
        return outcome
    if u < rates.get(verb, 0.0):
        return outcome.failed("stochastic", f"{verb} failed during execution", pose=start_pose)
    return outcome
