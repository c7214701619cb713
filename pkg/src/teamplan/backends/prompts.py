"""Prompt templates and the deterministic text renderers that fill them."""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

from ..command import FailureFeedback
from ..config import ConfigError, SceneConfig
from ..state import SKILLS_BY_KIND, AgentState, ConflictReport, EnvFeedback, Observation

NONE = "(none)"


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    text: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(f for _, f, _, _ in string.Formatter().parse(self.text) if f))


@lru_cache(maxsize=None)
def load_template(role: str) -> PromptTemplate:
    try:
        text = resources.files("teamplan").joinpath("prompts").joinpath(f"{role}.txt").read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"no prompt template for role {role!r}") from exc
    return PromptTemplate(role, text)


# what each role's context supplies; "system" is sent verbatim
ROLE_FIELDS = {
    "system": (),
    "general_planner": ("task", "capabilities", "skills", "observations", "feedback", "history"),
    "subgroup_manager": ("task", "group", "members", "subtask", "capabilities", "skills", "observations",
                         "feedback", "history"),
    "executor": ("agent", "skills", "command", "observations"),
    "capability_scorer": ("capabilities", "command"),
}


def lint_templates(load=None) -> list[str]:
    """Problems with the shipped templates (empty when all is well)."""
    load = load or load_template
    problems = []
    for role, fields in ROLE_FIELDS.items():
        try:
            tpl = load(role)
        except ConfigError as exc:
            problems.append(str(exc))
            continue
        extra = [p for p in tpl.placeholders if p not in fields]
        if extra:
            problems.append(f"{role}: placeholder(s) {', '.join(extra)} not supplied by its context")
        if role == "executor":
            header = tpl.text.splitlines()[0] if tpl.text else ""
            if header.count("{agent}") != 1 or tpl.text.count("{agent}") != 1:
                problems.append("executor: the robot token must appear exactly once, in the header line")
    return problems


def render_prompt(template: PromptTemplate, ctx: Mapping[str, str]) -> str:
    """Substitute every placeholder; a missing one is a configuration error."""
    missing = [p for p in template.placeholders if p not in ctx]
    if missing:
        raise ConfigError(f"template {template.role!r} has unresolved placeholder(s): {', '.join(missing)}")
    values = {k: (str(v) if str(v).strip() else NONE) for k, v in ctx.items()}
    return template.text.format(**values)


def _xy(p) -> str:
    return f"({p.x:.2f}, {p.y:.2f})"


def render_capabilities(roster: Iterable[AgentState]) -> str:
    lines = []
    for a in sorted(roster, key=lambda a: a.uid):
        extra = f", reach {a.reach:.3f} m from {_xy(a.pose)}" if a.kind == "arm" and a.reach else ""
        lines.append(f"- {a.token}: {a.kind}; skills {', '.join(SKILLS_BY_KIND[a.kind])}{extra}")
    return "\n".join(lines)


def render_observations(observations: Sequence[Observation]) -> str:
    if not observations:
        return NONE
    lines = []
    for o in sorted(observations, key=lambda o: o.self_state.uid):
        s = o.self_state
        lines.append(f"- {s.token} at {_xy(s.pose)} heading {s.pose.heading:.2f}")
        comps = ", ".join(f"{n} {_xy(p)}{' attached' if att else ''}" for n, p, att in o.visible_components)
        agents = ", ".join(f"{n} {_xy(p)}" for n, p in o.visible_agents)
        obst = ", ".join(f"{n} {_xy(p)}" for n, p in o.visible_obstacles)
        lines.append(f"  components: {comps or NONE}")
        lines.append(f"  robots: {agents or NONE}")
        lines.append(f"  obstacles: {obst or NONE}")
    return "\n".join(lines)


def render_history(turns) -> str:
    if not turns:
        return NONE
    return "\n".join(f"[cycle {t.cycle}] {t.speaker}:\n{t.content.strip()}" for t in turns)


def render_feedback(agent_feedback=(), conflicts: Sequence[ConflictReport] = (), env: Optional[EnvFeedback] = None,
                    members: Optional[Iterable[str]] = None) -> str:
    keep = None if members is None else set(members)
    lines = []
    for f in agent_feedback:
        status = "ok" if f.success else f"failed ({f.category})" if f.category else "failed"
        lines.append(f"- cycle {f.cycle} {f.agent}: {status}{': ' + f.diagnostic if f.diagnostic else ''}")
    for c in conflicts:
        if keep is None or set(c.agents) & keep:
            lines.append(f"- conflict {c.kind} between {c.agents[0]} and {c.agents[1]}: {c.detail}")
    if env is not None:
        for name, out in env.outcomes:
            if not out.success and (keep is None or name in keep):
                lines.append(f"- step {env.step} {name}: {out.failure_reason}: {out.diagnostic}")
    return "\n".join(lines) if lines else NONE


def render_skills(grammar_line: str = "group <G>: agent <name>(<id>)[, <name>(<id>) ...] [<verb>] <object>(<id>) to|on|at <location>",
                  scene: Optional[SceneConfig] = None) -> str:
    lines = [
        grammar_line,
        "- check <object>: arm confirms the object is within reach",
        "- pick <object> on <location>: arm places the object; a socket location assembles it",
        "- move to <location>: AGV drives to a point",
        "- push <object> to <location>: AGV delivers a wheel",
        "- walk to <location>: humanoid walks to a point",
        "- carry <object> to <location>: humanoid carries the trunk or a blocker (blockers go to a clearing zone)",
        "- wait: do nothing this cycle",
        "Locations are names or coordinates such as (1.0, -2.0).",
    ]
    if scene is not None:
        names = ["assembly_zone", *scene.named_locations()]
        lines.append("Named locations: " + ", ".join(names))
    return "\n".join(lines)


def render_command_feedback(fb: FailureFeedback) -> str:
    return f"{fb.stage} rejected ({fb.category}): {fb.diagnostic}"
