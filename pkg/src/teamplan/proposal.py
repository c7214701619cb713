"""The general planner's seven-section proposal and its text format."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional, Sequence

SECTIONS = (
    ("situation_analysis", "Situation Analysis"),
    ("spatial_analysis", "Spatial Analysis"),
    ("task_decomposition", "Task Decomposition"),
    ("grouping_strategy", "Grouping Strategy"),
    ("subgoal_assignment", "Subgoal Assignment"),
    ("coordination_strategy", "Coordination Strategy"),
    ("risk_assessment", "Risk Assessment"),
)

ASSIGN_OPEN = "<<<ASSIGNMENTS"
ASSIGN_CLOSE = "ASSIGNMENTS>>>"
COMMANDS_OPEN = "<<<COMMANDS"
COMMANDS_CLOSE = "COMMANDS>>>"


class ProposalError(ValueError):
    pass


@dataclass(frozen=True)
class SubgroupAssignment:
    gid: int
    members: tuple[str, ...]
    subtask: str

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"group {self.gid} has no members")

    def to_dict(self) -> dict:
        return {"gid": self.gid, "members": list(self.members), "subtask": self.subtask}


@dataclass(frozen=True)
class Proposal:
    situation_analysis: str
    spatial_analysis: str
    task_decomposition: str
    grouping_strategy: str
    subgoal_assignment: str
    coordination_strategy: str
    risk_assessment: str
    assignments: tuple[SubgroupAssignment, ...]

    def __post_init__(self):
        for key, title in SECTIONS:
            if not getattr(self, key).strip():
                raise ProposalError(f"section '{title}' is empty")
        seen: set[str] = set()
        gids: set[int] = set()
        for a in self.assignments:
            if a.gid in gids:
                raise ProposalError(f"group {a.gid} assigned twice")
            gids.add(a.gid)
            overlap = seen & set(a.members)
            if overlap:
                raise ProposalError(f"{', '.join(sorted(overlap))} assigned to more than one group")
            seen |= set(a.members)

    @classmethod
    def blank(cls, note: str, assignments: Sequence[SubgroupAssignment]) -> "Proposal":
        return cls(*([note] * len(SECTIONS)), tuple(assignments))

    @property
    def assigned(self) -> set[str]:
        return {m for a in self.assignments for m in a.members}

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k, _ in SECTIONS}
        d["assignments"] = [a.to_dict() for a in self.assignments]
        return d


def format_proposal(p: Proposal) -> str:
    parts = [f"### {title}\n{getattr(p, key).strip()}\n" for key, title in SECTIONS]
    body = json.dumps([a.to_dict() for a in p.assignments], indent=1, sort_keys=True)
    parts.append(f"{ASSIGN_OPEN}\n{body}\n{ASSIGN_CLOSE}\n")
    return "\n".join(parts)


_HEADER = re.compile(r"^#{2,4}\s*(.+?)\s*$", re.MULTILINE)


def parse_proposal(text: str, roster: Optional[Sequence[str]] = None) -> Proposal:
    """Parse planner output.  Raises ``ProposalError`` on anything malformed."""
    head, sep, tail = text.partition(ASSIGN_OPEN)
    if not sep:
        raise ProposalError("missing assignments block")
    block, sep2, _ = tail.partition(ASSIGN_CLOSE)
    if not sep2:
        raise ProposalError("unterminated assignments block")
    titles = {t.lower(): k for k, t in SECTIONS}
    found: dict[str, str] = {}
    marks = list(_HEADER.finditer(head))
    for i, m in enumerate(marks):
        key = titles.get(m.group(1).strip().lower().rstrip(":"))
        if key is None:
            continue
        end = marks[i + 1].start() if i + 1 < len(marks) else len(head)
        found[key] = head[m.end():end].strip()
    missing = [t for k, t in SECTIONS if not found.get(k)]
    if missing:
        raise ProposalError(f"missing section(s): {', '.join(missing)}")
    try:
        raw = json.loads(block)
        assignments = tuple(SubgroupAssignment(int(a["gid"]), tuple(str(m) for m in a["members"]), str(a.get("subtask", "")))
                            for a in raw)
    except (ValueError, KeyError, TypeError) as exc:
        raise ProposalError(f"bad assignments block: {exc}") from exc
    if roster is not None:
        unknown = {m for a in assignments for m in a.members} - set(roster)
        if unknown:
            raise ProposalError(f"unknown agent(s) {', '.join(sorted(unknown))}")
    try:
        return Proposal(**found, assignments=assignments)
    except ValueError as exc:
        raise ProposalError(str(exc)) from exc


def extract_commands(text: str) -> list[str]:
    """Command lines from a manager response (marker-fenced if markers are present)."""
    if COMMANDS_OPEN in text:
        text = text.split(COMMANDS_OPEN, 1)[1].split(COMMANDS_CLOSE, 1)[0]
    out = []
    for line in text.splitlines():
        line = line.strip().lstrip("-* ").strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out
