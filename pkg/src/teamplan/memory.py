"""Append-only context memory with windowed views for each planning role."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

from .state import EnvFeedback, Observation

WINDOW = 5

PLANNER = "general_planner"


def manager_speaker(gid: int) -> str:
    return f"subgroup_manager:{gid}"


def executor_speaker(agent: str) -> str:
    return f"executor:{agent}"


def speaker_role(speaker: str) -> str:
    return speaker.split(":", 1)[0]


@dataclass(frozen=True)
class DialogueTurn:
    cycle: int
    speaker: str
    content: str

    def __post_init__(self):
        role = speaker_role(self.speaker)
        if role not in (PLANNER, "subgroup_manager", "executor"):
            raise ValueError(f"unknown speaker {self.speaker!r}")

    def to_dict(self) -> dict:
        return {"cycle": self.cycle, "speaker": self.speaker, "content": self.content}


@dataclass(frozen=True)
class AgentFeedback:
    agent: str
    cycle: int
    success: bool
    diagnostic: str = ""
    category: Optional[str] = None

    def __post_init__(self):
        if not self.success and not self.diagnostic:
            raise ValueError("failed feedback needs a diagnostic")

    def to_dict(self) -> dict:
        return {"agent": self.agent, "cycle": self.cycle, "success": self.success,
                "diagnostic": self.diagnostic, "category": self.category}


@dataclass(frozen=True)
class Ablations:
    no_history: bool = False
    no_feedback: bool = False
    no_grouping: bool = False

    @classmethod
    def of(cls, kind: Optional[str]) -> "Ablations":
        if kind in (None, "", "none"):
            return cls()
        if kind not in ("no_history", "no_feedback", "no_grouping"):
            raise ValueError(f"unknown ablation {kind!r}")
        return cls(**{kind: True})

    @property
    def label(self) -> str:
        on = [k for k in ("no_history", "no_feedback", "no_grouping") if getattr(self, k)]
        return "+".join(on) or "full"


@dataclass(frozen=True)
class PlannerContext:
    cycle: int
    recent_turns: tuple[DialogueTurn, ...]
    latest_env: EnvFeedback
    recent_agent_feedback: tuple[AgentFeedback, ...]

    @property
    def observations(self) -> tuple[Observation, ...]:
        return self.latest_env.state_updates


@dataclass(frozen=True)
class SubgroupContext:
    cycle: int
    gid: int
    members: tuple[str, ...]
    subtask: str
    observations: tuple[Observation, ...]
    recent_turns: tuple[DialogueTurn, ...]
    recent_agent_feedback: tuple[AgentFeedback, ...]
    conflicts: tuple = ()


Entry = Union[DialogueTurn, AgentFeedback, EnvFeedback]


def _cycle_of(entry: Entry) -> int:
    return entry.step if isinstance(entry, EnvFeedback) else entry.cycle


class ContextMemory:
    """Dialogue turns, agent feedback and environment feedback, in insertion order.

    Nothing is ever rewritten.  ``record`` refuses entries whose cycle is
    older than the newest one already stored.
    """

    def __init__(self, ablations: Ablations = Ablations()):
        self.ablations = ablations
        self._log: list[tuple[str, Entry]] = []
        self._groups: dict[int, dict[int, tuple[tuple[str, ...], str]]] = {}
        self._cycle = 0
        self._lock = threading.Lock()

    # -- writing ---------------------------------------------------------

    def record(self, entry: Entry) -> "ContextMemory":
        kind = {DialogueTurn: "turn", AgentFeedback: "feedback", EnvFeedback: "env"}.get(type(entry))
        if kind is None:
            raise TypeError(f"cannot record {type(entry).__name__}")
        c = _cycle_of(entry)
        with self._lock:
            if self._log and c < self._cycle:
                raise ValueError(f"cycle regression: {c} after {self._cycle}")
            self._log.append((kind, entry))
            self._cycle = max(self._cycle, c)
        return self

    def record_groups(self, cycle: int, groups: Mapping[int, tuple[Sequence[str], str]]) -> None:
        """Remember the subgroup partition of ``cycle`` (gid -> (members, subtask))."""
        with self._lock:
            self._groups[cycle] = {int(g): (tuple(m), s) for g, (m, s) in groups.items()}

    # -- reading ---------------------------------------------------------

    @property
    def turns(self) -> list[DialogueTurn]:
        return [e for k, e in self._log if k == "turn"]

    @property
    def agent_feedback(self) -> list[AgentFeedback]:
        return [e for k, e in self._log if k == "feedback"]

    @property
    def env_feedback(self) -> list[EnvFeedback]:
        return [e for k, e in self._log if k == "env"]

    @property
    def latest_cycle(self) -> int:
        return self._cycle

    def __len__(self) -> int:
        return len(self._log)

    def _visible_turns(self, turns: Sequence[DialogueTurn]) -> tuple[DialogueTurn, ...]:
        if self.ablations.no_history:
            return ()
        if self.ablations.no_feedback:
            turns = [t for t in turns if speaker_role(t.speaker) != "executor"]
        return tuple(turns[-WINDOW:])

    def _feedback_since_proposal(self, log) -> list[AgentFeedback]:
        last = -1
        for i, (k, e) in enumerate(log):
            if k == "turn" and e.speaker == PLANNER:
                last = i
        return [e for k, e in log[last + 1:] if k == "feedback"]

    def _env(self, env: EnvFeedback) -> EnvFeedback:
        if self.ablations.no_feedback:
            return replace(env, conflicts=(), outcomes=())
        return env

    def context_for_planner(self) -> PlannerContext:
        log = list(self._log)
        envs = [e for k, e in log if k == "env"]
        if not envs:
            raise RuntimeError("world not yet stepped")
        turns = [e for k, e in log if k == "turn"]
        fb = () if self.ablations.no_feedback else tuple(self._feedback_since_proposal(log))
        return PlannerContext(self._cycle, self._visible_turns(turns), self._env(envs[-1]), fb)

    def context_for_subgroup(self, gid: int, members: Optional[Sequence[str]] = None,
                             cycle: Optional[int] = None) -> SubgroupContext:
        cycle = self._cycle if cycle is None else cycle
        groups = self._groups.get(cycle, {})
        if gid not in groups:
            raise KeyError(f"unknown group {gid} in cycle {cycle}")
        assigned, subtask = groups[gid]
        members = tuple(assigned if members is None else members)
        log = list(self._log)
        envs = [e for k, e in log if k == "env"]
        if not envs:
            raise RuntimeError("world not yet stepped")
        env = self._env(envs[-1])
        relevant = {PLANNER, manager_speaker(gid), *(executor_speaker(m) for m in members)}
        turns = [e for k, e in log if k == "turn" and e.speaker in relevant]
        fb = () if self.ablations.no_feedback else tuple(
            f for f in self._feedback_since_proposal(log) if f.agent in members)
        return SubgroupContext(
            cycle=cycle,
            gid=gid,
            members=members,
            subtask=subtask,
            observations=tuple(o for o in env.state_updates if o.observer in members),
            recent_turns=self._visible_turns(turns),
            recent_agent_feedback=fb,
            conflicts=tuple(c for c in env.conflicts if set(c.agents) & set(members)),
        )

    def to_dict(self) -> dict:
        return {
            "ablations": self.ablations.label,
            "entries": [{"kind": k, **e.to_dict()} for k, e in self._log],
        }
