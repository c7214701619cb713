"""Command grammar, parsing, and the staged verification pipeline.

A planner command is a line of text such as::

    group 1: agent agv_2(3) [push] wheel_1(10) to assembly_zone

It is parsed into a ``StructuredCommand`` and then checked by four stages
in a fixed order: capability (S1), action selection (S2), structuring (P),
and the judge (J).  The first failing stage stops the pipeline.  Failures
are returned as data (``FailureFeedback``), never raised.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping, Optional, Sequence, Union

from .config import SceneConfig, load_yaml
from .state import SKILLS_BY_KIND, VERBS, AgentState, Observation, Pose2D, SkillInvocation

STAGES = ("capability", "selection", "parsing", "judge")
CATEGORIES = ("improper_grouping", "incorrect_agent_selection", "state_inconsistency")
FEEDBACK_STAGES = ("capability", "selection", "parsing", "judge", "execution")
RETRY_BUDGET = 3

Location = Union[str, Pose2D, None]


class ParseError(ValueError):
    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message)
        self.field = field_name


# --------------------------------------------------------------------------
# Grammar
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Grammar:
    patterns: dict[str, re.Pattern]
    field_order: tuple[str, ...]
    requires: dict[str, tuple[str, ...]]
    preposition: dict[str, str]

    @classmethod
    def from_dict(cls, d: dict) -> "Grammar":
        return cls(
            patterns={k: re.compile(v, re.IGNORECASE) for k, v in d["patterns"].items()},
            field_order=tuple(d["field_order"]),
            requires={k: tuple(v) for k, v in d["requires"].items()},
            preposition=dict(d["preposition"]),
        )


@lru_cache(maxsize=1)
def default_grammar() -> Grammar:
    return Grammar.from_dict(load_yaml("grammar.yaml"))


@dataclass(frozen=True)
class StructuredCommand:
    group: int
    agents: tuple[tuple[str, int], ...]
    verb: str
    object: Optional[tuple[str, int]] = None
    location: Location = None

    def __post_init__(self):
        if not self.agents:
            raise ValueError("a command needs at least one agent")
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        ids = [i for _, i in self.agents] + ([self.object[1]] if self.object else [])
        if len(ids) != len(set(ids)):
            raise ValueError("ids must be unique within a command")

    @property
    def agent_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.agents)

    def to_dict(self) -> dict:
        loc = self.location.to_list() if isinstance(self.location, Pose2D) else self.location
        return {"group": self.group, "agents": [list(a) for a in self.agents], "verb": self.verb,
                "object": None if self.object is None else list(self.object), "location": loc}


def _fmt_num(v: float) -> str:
    return repr(float(v))


def render_location(loc: Location) -> str:
    if isinstance(loc, Pose2D):
        if loc.heading == 0.0:
            return f"({_fmt_num(loc.x)}, {_fmt_num(loc.y)})"
        return f"({_fmt_num(loc.x)}, {_fmt_num(loc.y)}, {_fmt_num(loc.heading)})"
    return str(loc)


def render(cmd: StructuredCommand, grammar: Optional[Grammar] = None) -> str:
    """Canonical text for ``cmd``; ``parse_command(render(c)) == c``."""
    g = grammar or default_grammar()
    agents = ", ".join(f"{n}({i})" for n, i in cmd.agents)
    parts = [f"group {cmd.group}: agent {agents} [{cmd.verb}]"]
    if cmd.object is not None:
        parts.append(f"{cmd.object[0]}({cmd.object[1]})")
    if cmd.location is not None:
        parts.append(f"{g.preposition.get(cmd.verb, 'at')} {render_location(cmd.location)}")
    return " ".join(parts)


def _parse_location(text: str, g: Grammar) -> Location:
    if text.startswith("("):
        m = g.patterns["point"].match(text)
        if not m:
            raise ParseError(f"malformed coordinates {text!r}", "location")
        try:
            x, y = float(m["x"]), float(m["y"])
            h = float(m["h"]) if m["h"] is not None else 0.0
            return Pose2D(x, y, h)
        except ValueError as exc:
            raise ParseError(f"malformed coordinates {text!r}", "location") from exc
    return text


def parse_command(raw: str, grammar: Optional[Grammar] = None) -> StructuredCommand:
    """Parse one command line.  Raises ``ParseError`` naming the missing field."""
    g = grammar or default_grammar()
    text = " ".join(str(raw).split())
    if not text:
        raise ParseError("empty command", "agent")
    found: dict[str, object] = {}

    m_agents = g.patterns["agents"].search(text)
    if m_agents:
        found["agent"] = [(m["name"], int(m["id"])) for m in g.patterns["agent_item"].finditer(m_agents["agents"])]
    rest = text[m_agents.end():] if m_agents else text

    m_verb = g.patterns["verb"].search(rest)
    if m_verb and m_verb["verb"].lower() in VERBS:
        found["verb"] = m_verb["verb"].lower()
        rest = rest[m_verb.end():]
    elif m_agents:
        m_bare = re.match(r"\s*(?P<verb>[A-Za-z]+)\b", rest)
        if m_bare and m_bare["verb"].lower() in VERBS:
            found["verb"] = m_bare["verb"].lower()
            rest = rest[m_bare.end():]

    m_group = g.patterns["group"].search(text)
    if m_group:
        found["group"] = int(m_group["group"])

    verb = found.get("verb")
    needs = g.requires.get(verb, ()) if verb else ("object", "location")
    if verb:
        m_obj = g.patterns["object"].search(rest)
        if m_obj:
            found["object"] = (m_obj["name"], int(m_obj["id"]))
            rest = rest[m_obj.end():]
        m_loc = g.patterns["location"].search(rest)
        if m_loc:
            found["location"] = _parse_location(m_loc["loc"], g)

    for name in g.field_order:
        required = name in ("agent", "verb", "group") or name in needs
        if required and name not in found:
            raise ParseError(f"missing {name} field", name)
    try:
        return StructuredCommand(
            group=found["group"],
            agents=tuple(found["agent"]),
            verb=verb,
            object=found.get("object") if "object" in needs else None,
            location=found.get("location") if "location" in needs else None,
        )
    except ValueError as exc:
        raise ParseError(str(exc), "agent") from exc


# --------------------------------------------------------------------------
# Verification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FailureFeedback:
    command: str
    stage: str
    category: str
    diagnostic: str
    agents: tuple[str, ...] = ()

    def __post_init__(self):
        if self.stage not in FEEDBACK_STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if not self.diagnostic:
            raise ValueError("failure feedback needs a diagnostic")

    def to_dict(self) -> dict:
        return {"command": self.command, "stage": self.stage, "category": self.category,
                "diagnostic": self.diagnostic, "agents": list(self.agents)}

    @classmethod
    def from_dict(cls, d: dict) -> "FailureFeedback":
        return cls(d["command"], d["stage"], d["category"], d["diagnostic"], tuple(d.get("agents", ())))


@dataclass(frozen=True)
class StageResult:
    passed: bool
    score: Optional[float] = None
    detail: str = ""


@dataclass(frozen=True)
class VerificationResult:
    raw: str
    command: Optional[StructuredCommand] = None
    invocations: tuple[SkillInvocation, ...] = ()
    # v1 capability, v2 selection, v3 structured command, v4 judge
    stages: tuple[StageResult, ...] = ()
    evaluated: tuple[str, ...] = ()
    accepted: bool = False
    deferred: bool = False
    rejection_reason: Optional[str] = None
    failure: Optional[FailureFeedback] = None
    attempts: int = 0

    def __post_init__(self):
        if self.accepted and self.deferred:
            raise ValueError("a deferred command is not accepted")
        if self.accepted and len(self.evaluated) != len(STAGES):
            raise ValueError("acceptance requires every stage")

    @property
    def dropped(self) -> bool:
        return not self.accepted and not self.deferred

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "command": None if self.command is None else self.command.to_dict(),
            "invocations": [i.to_dict() for i in self.invocations],
            "evaluated": list(self.evaluated),
            "accepted": self.accepted,
            "deferred": self.deferred,
            "rejection_reason": self.rejection_reason,
            "failure": None if self.failure is None else self.failure.to_dict(),
            "attempts": self.attempts,
        }


@dataclass(frozen=True)
class VerifyContext:
    """What a subgroup's verifier may look at."""

    roster: Mapping[str, AgentState]                 # every agent in the team
    members: tuple[str, ...]                         # the commanding subgroup
    observations: Mapping[str, Observation]          # latest, members only
    scene: SceneConfig
    known: frozenset[str] = frozenset()              # entities named in the subgroup's context
    tau_c: float = 0.5
    scorer: Optional[Callable[[StructuredCommand], float]] = None
    claimed: frozenset[str] = frozenset()            # objects already taken this cycle
    available: Optional[Mapping[str, tuple[str, ...]]] = None


def _entity_uids(scene: SceneConfig) -> dict[str, int]:
    uids = {n: u for n, u, _ in scene.agents}
    uids.update({n: u for n, u in scene.components})
    uids.update({f"blocker_{i + 1}": u for i, u in enumerate(scene.blocker_uids)})
    uids.update({f"wall_{i + 1}": u for i, u in enumerate(scene.wall_uids)})
    return uids


def verify_capability(cmd: StructuredCommand, ctx: VerifyContext) -> tuple[StageResult, Optional[str], Optional[str]]:
    """S1.  Returns (result, category, diagnostic)."""
    for name, uid in cmd.agents:
        a = ctx.roster.get(name)
        if a is None or a.uid != uid:
            return StageResult(False, 0.0, f"unknown agent {name}({uid})"), "incorrect_agent_selection", \
                f"unknown agent {name}({uid})"
    outsiders = [n for n in cmd.agent_names if ctx.members and n not in ctx.members]
    if outsiders:
        diag = f"{', '.join(outsiders)} not in group {cmd.group}"
        return StageResult(False, 0.0, diag), "incorrect_agent_selection", diag
    if ctx.scorer is not None:
        score = float(min(1.0, max(0.0, ctx.scorer(cmd))))
    else:
        score = 1.0 if all(ctx.roster[n].can(cmd.verb) for n in cmd.agent_names) else 0.0
    if score >= ctx.tau_c and score > 0.0:
        return StageResult(True, score), None, None
    bad = [n for n in cmd.agent_names if not ctx.roster[n].can(cmd.verb)]
    members = [ctx.roster[m] for m in ctx.members if m in ctx.roster]
    if bad and not any(m.can(cmd.verb) for m in members):
        cat = "improper_grouping"
        diag = f"no robot in group {cmd.group} can {cmd.verb}"
    else:
        cat = "incorrect_agent_selection"
        if bad:
            kinds = ", ".join(f"{n} is a {ctx.roster[n].kind}" for n in bad)
            diag = f"{kinds} and cannot {cmd.verb}"
        else:
            diag = f"capability confidence {score:.2f} is below {ctx.tau_c:.2f}"
    return StageResult(False, score, diag), cat, diag


def select_action(cmd: StructuredCommand, available: Mapping[str, Sequence[str]]) -> list[SkillInvocation]:
    """S2.  One invocation per named agent.  Raises ``ValueError`` for an unavailable verb."""
    out = []
    for name in cmd.agent_names:
        if cmd.verb not in available.get(name, ()):
            raise ValueError(f"{cmd.verb} is not available to {name}")
        out.append(SkillInvocation(name, cmd.verb, cmd.object[0] if cmd.object else None, cmd.location))
    return out


def structure(invocations: Sequence[SkillInvocation], group: int, uids: Mapping[str, int]) -> StructuredCommand:
    """P.  Rebuild the structured command from the selected invocations."""
    first = invocations[0]
    obj = None if first.object is None else (first.object, uids.get(first.object, -1))
    return StructuredCommand(group, tuple((i.agent, uids[i.agent]) for i in invocations), first.verb, obj, first.location)


def _view(ctx: VerifyContext):
    """Entity poses as seen by the subgroup: agents, components, obstacles."""
    agents = {}
    comps: dict[str, tuple[Pose2D, bool]] = {}
    obstacles: dict[str, Pose2D] = {}
    for name in sorted(ctx.observations):
        obs = ctx.observations[name]
        agents[obs.observer] = obs.self_state.pose
        for n, p in obs.visible_agents:
            agents.setdefault(n, p)
        for n, p, att in obs.visible_components:
            comps[n] = (p, att)
        for n, p in obs.visible_obstacles:
            obstacles[n] = p
    return agents, comps, obstacles


def _footprint_distance(center: Pose2D, half: tuple[float, float], x: float, y: float) -> float:
    dx = max(abs(x - center.x) - half[0], 0.0)
    dy = max(abs(y - center.y) - half[1], 0.0)
    return math.hypot(dx, dy)


def judge(cmd: StructuredCommand, invocations: Sequence[SkillInvocation],
          ctx: VerifyContext) -> tuple[StageResult, Optional[str], bool]:
    """J: format, semantics, feasibility, safety.  Returns (result, category, deferrable)."""
    g = default_grammar()
    scene = ctx.scene
    uids = _entity_uids(scene)
    # (a) format
    for inv in invocations:
        need = g.requires[inv.verb]
        if "object" in need and inv.object is None:
            return StageResult(False, detail="format: missing object"), "state_inconsistency", False
        if "location" in need and inv.location is None:
            return StageResult(False, detail="format: missing location"), "state_inconsistency", False
    if cmd.object is not None and uids.get(cmd.object[0]) not in (None, cmd.object[1]):
        return (StageResult(False, detail=f"format: {cmd.object[0]} has id {uids[cmd.object[0]]}, not {cmd.object[1]}"),
                "state_inconsistency", False)
    if cmd.verb == "wait":
        return StageResult(True, detail="ok"), None, False

    agents, comps, obstacles = _view(ctx)
    obj = cmd.object[0] if cmd.object else None
    # (b) semantics
    if obj is not None:
        if obj not in uids:
            return StageResult(False, detail=f"semantics: {obj} does not exist"), "state_inconsistency", True
        if obj not in comps and obj not in obstacles and obj not in ctx.known:
            return (StageResult(False, detail=f"semantics: {obj} has not been observed by group {cmd.group}"),
                    "state_inconsistency", True)
        if obj.startswith("wall"):
            return StageResult(False, detail=f"semantics: {obj} is a fixed wall"), "state_inconsistency", False

    # (c) feasibility
    target = None
    if cmd.location is not None:
        from .world import ASSEMBLY_ZONE, resolve_location

        if cmd.location == ASSEMBLY_ZONE:
            if cmd.verb == "pick":
                return StageResult(False, detail="feasibility: pick needs a socket or a point"), "state_inconsistency", False
        else:
            target = resolve_location(cmd.location, scene)
            if target is None:
                return (StageResult(False, detail=f"feasibility: unknown location {cmd.location}"),
                        "state_inconsistency", False)
            if not scene.in_domain(target.x, target.y):
                return (StageResult(False, detail=f"feasibility: {render_location(cmd.location)} is outside the workspace"),
                        "state_inconsistency", False)
    problem = _feasibility(cmd, obj, target, agents, comps, obstacles, ctx)
    if problem:
        return StageResult(False, detail=f"feasibility: {problem}"), "state_inconsistency", True

    # (d) safety
    if obj is not None:
        if len(invocations) > 1:
            return (StageResult(False, detail=f"safety: {len(invocations)} robots would handle {obj} at once"),
                    "incorrect_agent_selection", False)
        if obj in ctx.claimed:
            return (StageResult(False, detail=f"safety: {obj} is already assigned this cycle"),
                    "incorrect_agent_selection", False)
    return StageResult(True, detail="ok"), None, False


def _feasibility(cmd, obj, target, agents, comps, obstacles, ctx: VerifyContext) -> Optional[str]:
    scene = ctx.scene
    for name in cmd.agent_names:
        a = ctx.roster[name]
        pose = agents.get(name, a.pose)
        if a.holding is not None and cmd.verb in ("pick", "carry") and a.holding != obj:
            return f"state inconsistency: {name} is already holding {a.holding}"
        if cmd.verb in ("pick", "check") and obj in comps:
            p, attached = comps[obj]
            d = pose.distance_to(p)
            if d > scene.arm_reach + 1e-12:
                return f"{obj} is {d:.2f} m from {name}, beyond its {scene.arm_reach} m reach"
            if attached and cmd.verb == "pick":
                return f"{obj} is already assembled"
        if cmd.verb == "pick" and target is not None:
            d = pose.distance_to(target)
            if d > scene.arm_reach + 1e-12:
                return f"placement point is {d:.2f} m from {name}, beyond reach"
            socket = _socket_at(target, scene)
            if socket and socket.startswith("wheel") and not any(
                    n == "trunk" and att for n, (_, att) in comps.items()):
                return "wheels can only be mounted after the trunk is assembled"
        if cmd.verb == "carry":
            if obj in obstacles:
                d = _footprint_distance(obstacles[obj], scene.blocker_half_extents, *pose.xy)
                if d > scene.pickup_radius:
                    return f"{obj} is {d:.2f} m from {name}, outside the {scene.pickup_radius} m pickup radius"
                if target is not None and not any(target.distance_to(Pose2D(*c)) < 1e-6
                                                  for c in scene.clearing_zones.values()):
                    return f"{obj} may only be set down in a clearing zone"
            elif obj in comps:
                d = pose.distance_to(comps[obj][0])
                if d > scene.pickup_radius:
                    return f"{obj} is {d:.2f} m from {name}, outside the {scene.pickup_radius} m pickup radius"
        if cmd.verb == "push" and obj is not None:
            if obj == "trunk":
                return "the trunk needs both hands; an AGV cannot push it"
            if obj in obstacles or obj.startswith("blocker"):
                return f"{obj} is too heavy to push"
    if cmd.verb in ("push", "carry") and obj in comps:
        p, attached = comps[obj]
        if attached:
            return f"{obj} is already assembled"
        for o, c in obstacles.items():
            if o.startswith("blocker") and _footprint_distance(c, scene.blocker_half_extents, *p.xy) <= scene.access_clearance:
                return f"{obj} is blocked by {o}"
        if obj != "trunk" and "trunk" in comps and not comps["trunk"][1] and \
                comps["trunk"][0].distance_to(p) <= scene.stack_tolerance:
            return f"{obj} is covered by trunk"
    return None


def _socket_at(target: Pose2D, scene: SceneConfig) -> Optional[str]:
    for name, (x, y) in scene.sockets.items():
        if math.hypot(target.x - x, target.y - y) <= 0.03 + 1e-12:
            return name
    return None


def verify(raw: str, ctx: VerifyContext) -> VerificationResult:
    """Run parse, then S1, S2, P, J in order, stopping at the first failure."""
    try:
        cmd = parse_command(raw)
    except ParseError as exc:
        fb = FailureFeedback(raw, "parsing", "state_inconsistency", f"could not parse command: {exc}")
        return VerificationResult(raw, rejection_reason=fb.diagnostic, failure=fb)

    def fail(stage: str, category: str, diag: str, stages, evaluated, deferred=False, invs=()):
        fb = FailureFeedback(raw, stage, category, diag, cmd.agent_names)
        return VerificationResult(raw, cmd, tuple(invs), tuple(stages), tuple(evaluated), False, deferred,
                                  diag, fb)

    s1, cat, diag = verify_capability(cmd, ctx)
    if not s1.passed:
        deferred = s1.score is not None and 0.0 < s1.score < ctx.tau_c
        return fail("capability", cat, diag, [s1], ["capability"], deferred)

    available = ctx.available or {n: SKILLS_BY_KIND[a.kind] for n, a in ctx.roster.items()}
    try:
        invs = select_action(cmd, available)
    except ValueError as exc:
        s2 = StageResult(False, detail=str(exc))
        return fail("selection", "incorrect_agent_selection", str(exc), [s1, s2], ["capability", "selection"])
    s2 = StageResult(True, detail=f"{len(invs)} invocation(s)")

    uids = {n: a.uid for n, a in ctx.roster.items()}
    uids.update(_entity_uids(ctx.scene))
    rebuilt = structure(invs, cmd.group, uids)
    if rebuilt != cmd:
        s3 = StageResult(False, detail="structured command does not match the selected actions")
        return fail("parsing", "state_inconsistency", s3.detail, [s1, s2, s3],
                    ["capability", "selection", "parsing"], invs=invs)
    s3 = StageResult(True, detail=render(rebuilt))

    s4, cat, deferrable = judge(cmd, invs, ctx)
    evaluated = list(STAGES)
    if not s4.passed:
        return fail("judge", cat, s4.detail, [s1, s2, s3, s4], evaluated, deferrable, invs)
    return VerificationResult(raw, cmd, tuple(invs), (s1, s2, s3, s4), tuple(evaluated), True, False)


def reconsider_deferred(pending: Sequence[VerificationResult], ctx_for: Callable[[VerificationResult], VerifyContext],
                        budget: int = RETRY_BUDGET) -> list[VerificationResult]:
    """Re-verify deferred commands under fresh context.

    Each result carries the number of failed attempts so far.  An entry is
    released when it now passes, stays deferred while it has failed fewer
    than ``budget`` times, and is dropped with feedback afterwards.
    """
    out = []
    for entry in pending:
        if not entry.deferred:
            raise ValueError("only deferred entries can be reconsidered")
        attempts = max(entry.attempts, 1)
        res = verify(entry.raw, ctx_for(entry))
        if res.accepted:
            out.append(replace(res, attempts=attempts))
            continue
        attempts += 1
        if attempts >= budget:
            diag = f"dropped after {attempts} failed attempts: {res.rejection_reason}"
            fb = res.failure and replace(res.failure, diagnostic=diag)
            out.append(replace(res, deferred=False, attempts=attempts, rejection_reason=diag, failure=fb))
        else:
            out.append(replace(res, deferred=True, attempts=attempts))
    return out
