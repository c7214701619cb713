"""Plain data types shared by the simulator, the skills and the planners.

Everything here is an immutable dataclass so that a ``WorldState`` can be
handed to several planners at once without defensive copies.  Mutation
happens only by building new instances (``dataclasses.replace``) inside
``world.step``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Optional

AGENT_KINDS = ("arm", "agv", "humanoid")
OBSTACLE_KINDS = ("wall", "blocker")
VERBS = ("check", "pick", "move", "push", "walk", "carry", "wait")

# which verbs each robot kind may execute
SKILLS_BY_KIND: dict[str, tuple[str, ...]] = {
    "arm": ("check", "pick", "wait"),
    "agv": ("move", "push", "wait"),
    "humanoid": ("walk", "carry", "wait"),
}

FAILURE_REASONS = ("infeasible", "conflict", "stochastic", "unreachable")


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.heading]

    @classmethod
    def from_seq(cls, seq) -> "Pose2D":
        seq = list(seq)
        return cls(seq[0], seq[1], seq[2] if len(seq) > 2 else 0.0)


@dataclass(frozen=True)
class Obstacle:
    name: str
    uid: int
    center: Pose2D
    half_extents: tuple[float, float]
    kind: str = "blocker"

    def __post_init__(self):
        if self.kind not in OBSTACLE_KINDS:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        hx, hy = self.half_extents
        if hx <= 0 or hy <= 0:
            raise ValueError("half extents must be positive")
        object.__setattr__(self, "half_extents", (float(hx), float(hy)))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        hx, hy = self.half_extents
        return (self.center.x - hx, self.center.y - hy, self.center.x + hx, self.center.y + hy)

    def distance_to_point(self, x: float, y: float) -> float:
        """Distance from (x, y) to the footprint; zero inside it."""
        x0, y0, x1, y1 = self.bounds
        dx = max(x0 - x, 0.0, x - x1)
        dy = max(y0 - y, 0.0, y - y1)
        return math.hypot(dx, dy)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "uid": self.uid,
            "center": self.center.to_list(),
            "half_extents": list(self.half_extents),
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        return cls(d["name"], d["uid"], Pose2D.from_seq(d["center"]), tuple(d["half_extents"]), d["kind"])


@dataclass(frozen=True)
class ComponentState:
    name: str
    uid: int
    pose: Pose2D
    attached: bool = False
    carrier: Optional[str] = None

    def __post_init__(self):
        if self.attached and self.carrier is not None:
            raise ValueError(f"{self.name}: attached component cannot have a carrier")

    @property
    def kind(self) -> str:
        return "trunk" if self.name.startswith("trunk") else "wheel"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "uid": self.uid,
            "pose": self.pose.to_list(),
            "attached": self.attached,
            "carrier": self.carrier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComponentState":
        return cls(d["name"], d["uid"], Pose2D.from_seq(d["pose"]), d["attached"], d["carrier"])


@dataclass(frozen=True)
class AgentState:
    name: str
    uid: int
    kind: str
    pose: Pose2D
    holding: Optional[str] = None
    busy: bool = False
    reach: Optional[float] = None

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")

    @property
    def token(self) -> str:
        """The ``name(uid)`` token used in commands and prompts."""
        return f"{self.name}({self.uid})"

    def can(self, verb: str) -> bool:
        return verb in SKILLS_BY_KIND[self.kind]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "uid": self.uid,
            "kind": self.kind,
            "pose": self.pose.to_list(),
            "holding": self.holding,
            "busy": self.busy,
            "reach": self.reach,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        return cls(d["name"], d["uid"], d["kind"], Pose2D.from_seq(d["pose"]), d["holding"], d["busy"], d["reach"])


@dataclass(frozen=True)
class WorldState:
    agents: tuple[AgentState, ...]
    components: tuple[ComponentState, ...]
    obstacles: tuple[Obstacle, ...]
    step: int = 0
    rng_seed: int = 0
    # successful executions per verb, used by deterministic failure injection
    skill_counts: tuple[tuple[str, int], ...] = ()

    def agent(self, name: str) -> AgentState:
        for a in self.agents:
            if a.name == name:
                return a
        raise KeyError(f"no such agent: {name}")

    def component(self, name: str) -> ComponentState:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(f"no such component: {name}")

    def obstacle(self, name: str) -> Obstacle:
        for o in self.obstacles:
            if o.name == name:
                return o
        raise KeyError(f"no such obstacle: {name}")

    def has_entity(self, name: str) -> bool:
        return any(e.name == name for e in (*self.agents, *self.components, *self.obstacles))

    def count(self, verb: str) -> int:
        return dict(self.skill_counts).get(verb, 0)

    def with_agent(self, agent: AgentState) -> "WorldState":
        return replace(self, agents=tuple(agent if a.name == agent.name else a for a in self.agents))

    def with_component(self, comp: ComponentState) -> "WorldState":
        return replace(self, components=tuple(comp if c.name == comp.name else c for c in self.components))

    def with_obstacle(self, obs: Obstacle) -> "WorldState":
        return replace(self, obstacles=tuple(obs if o.name == obs.name else o for o in self.obstacles))

    def to_dict(self) -> dict:
        return {
            "agents": [a.to_dict() for a in self.agents],
            "components": [c.to_dict() for c in self.components],
            "obstacles": [o.to_dict() for o in self.obstacles],
            "step": self.step,
            "rng_seed": self.rng_seed,
            "skill_counts": [list(p) for p in self.skill_counts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        return cls(
            agents=tuple(AgentState.from_dict(a) for a in d["agents"]),
            components=tuple(ComponentState.from_dict(c) for c in d["components"]),
            obstacles=tuple(Obstacle.from_dict(o) for o in d["obstacles"]),
            step=d["step"],
            rng_seed=d["rng_seed"],
            skill_counts=tuple((v, n) for v, n in d.get("skill_counts", [])),
        )


@dataclass(frozen=True)
class Observation:
    observer: str
    self_state: AgentState
    visible_agents: tuple[tuple[str, Pose2D], ...] = ()
    visible_components: tuple[tuple[str, Pose2D, bool], ...] = ()
    # blockers and walls in range; lets planners reason about blocked access
    visible_obstacles: tuple[tuple[str, Pose2D], ...] = ()

    def component(self, name: str) -> Optional[tuple[Pose2D, bool]]:
        for n, pose, attached in self.visible_components:
            if n == name:
                return pose, attached
        return None

    def to_dict(self) -> dict:
        return {
            "observer": self.observer,
            "self_state": self.self_state.to_dict(),
            "visible_agents": [[n, p.to_list()] for n, p in self.visible_agents],
            "visible_components": [[n, p.to_list(), a] for n, p, a in self.visible_components],
            "visible_obstacles": [[n, p.to_list()] for n, p in self.visible_obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(
            observer=d["observer"],
            self_state=AgentState.from_dict(d["self_state"]),
            visible_agents=tuple((n, Pose2D.from_seq(p)) for n, p in d["visible_agents"]),
            visible_components=tuple((n, Pose2D.from_seq(p), a) for n, p, a in d["visible_components"]),
            visible_obstacles=tuple((n, Pose2D.from_seq(p)) for n, p in d.get("visible_obstacles", [])),
        )


@dataclass(frozen=True)
class ConflictReport:
    agents: tuple[str, str]
    kind: str
    detail: str

    def __post_init__(self):
        a, b = self.agents
        if a == b:
            raise ValueError("conflict needs two distinct agents")
        if self.kind not in ("same_object", "path_overlap"):
            raise ValueError(f"unknown conflict kind {self.kind!r}")
        # canonical order keeps report sets independent of action order
        object.__setattr__(self, "agents", tuple(sorted((a, b))))

    def to_dict(self) -> dict:
        return {"agents": list(self.agents), "kind": self.kind, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> "ConflictReport":
        return cls(tuple(d["agents"]), d["kind"], d["detail"])


@dataclass(frozen=True)
class SkillInvocation:
    agent: str
    verb: str
    object: Optional[str] = None
    location: Any = None  # Pose2D, a named location, or None

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")

    def to_dict(self) -> dict:
        loc = self.location.to_list() if isinstance(self.location, Pose2D) else self.location
        return {"agent": self.agent, "verb": self.verb, "object": self.object, "location": loc}

    @classmethod
    def from_dict(cls, d: dict) -> "SkillInvocation":
        loc = d["location"]
        if isinstance(loc, list):
            loc = Pose2D.from_seq(loc)
        return cls(d["agent"], d["verb"], d["object"], loc)


@dataclass(frozen=True)
class SkillOutcome:
    success: bool
    new_agent_pose: Pose2D
    moved_component: Optional[tuple[str, Pose2D]] = None
    failure_reason: Optional[str] = None
    diagnostic: str = ""
    attached: bool = False
    moved_obstacle: Optional[tuple[str, Pose2D]] = None
    trajectory: tuple[Pose2D, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.success and self.failure_reason is not None:
            raise ValueError("a successful outcome carries no failure reason")
        if not self.success and self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"failed outcome needs a reason, got {self.failure_reason!r}")

    def failed(self, reason: str, diagnostic: str, pose: Optional[Pose2D] = None) -> "SkillOutcome":
        """Same agent, no effects, marked failed."""
        return SkillOutcome(
            success=False,
            new_agent_pose=pose if pose is not None else self.new_agent_pose,
            failure_reason=reason,
            diagnostic=diagnostic,
            trajectory=self.trajectory,
        )

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "new_agent_pose": self.new_agent_pose.to_list(),
            "moved_component": None if self.moved_component is None
            else [self.moved_component[0], self.moved_component[1].to_list()],
            "moved_obstacle": None if self.moved_obstacle is None
            else [self.moved_obstacle[0], self.moved_obstacle[1].to_list()],
            "attached": self.attached,
            "failure_reason": self.failure_reason,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkillOutcome":
        mc = d.get("moved_component")
        mo = d.get("moved_obstacle")
        return cls(
            success=d["success"],
            new_agent_pose=Pose2D.from_seq(d["new_agent_pose"]),
            moved_component=None if mc is None else (mc[0], Pose2D.from_seq(mc[1])),
            failure_reason=d["failure_reason"],
            diagnostic=d.get("diagnostic", ""),
            attached=d.get("attached", False),
            moved_obstacle=None if mo is None else (mo[0], Pose2D.from_seq(mo[1])),
        )


@dataclass(frozen=True)
class EnvFeedback:
    step: int
    state_updates: tuple[Observation, ...]
    conflicts: tuple[ConflictReport, ...] = ()
    # per-agent results of the skills executed in this step
    outcomes: tuple[tuple[str, SkillOutcome], ...] = ()

    def observation(self, agent: str) -> Observation:
        for o in self.state_updates:
            if o.observer == agent:
                return o
        raise KeyError(f"no observation for {agent}")

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "state_updates": [o.to_dict() for o in self.state_updates],
            "conflicts": [c.to_dict() for c in self.conflicts],
            "outcomes": [[n, o.to_dict()] for n, o in self.outcomes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvFeedback":
        return cls(
            step=d["step"],
            state_updates=tuple(Observation.from_dict(o) for o in d["state_updates"]),
            conflicts=tuple(ConflictReport.from_dict(c) for c in d["conflicts"]),
            outcomes=tuple((n, SkillOutcome.from_dict(o)) for n, o in d["outcomes"]),
        )


def poses_close(a: Pose2D, b: Pose2D, tol: float = 1e-9) -> bool:
    return a.distance_to(b) <= tol


def names(items: Iterable) -> list[str]:
    return [i.name for i in items]
