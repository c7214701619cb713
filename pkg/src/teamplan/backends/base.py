"""The interface every planner backend implements."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, runtime_checkable

ROLES = ("general_planner", "subgroup_manager", "executor", "capability_scorer")


class BackendError(RuntimeError):
    """A request the backend rejected outright (not worth retrying)."""


class TransportError(BackendError):
    """The backend could not be reached after all retries."""


class ReplayDivergence(BackendError):
    pass


@dataclass(frozen=True)
class BackendRequest:
    role: str
    rendered_prompt: str
    key: tuple = ()                 # (cycle, role, gid or agent) for logging and replay
    schema: str = "text"
    system: str = ""
    # structured view of the same context; never serialized, only the
    # deterministic offline backends read it
    context: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    usage: Optional[dict] = None
    latency: Optional[float] = None

    def to_dict(self) -> dict:
        return {"text": self.text, "usage": self.usage}


@runtime_checkable
class Backend(Protocol):
    name: str

    def complete(self, request: BackendRequest) -> BackendResponse: ...


class WaitBackend:
    """Plans nothing: every agent waits every cycle."""

    name = "wait"

    def complete(self, request: BackendRequest) -> BackendResponse:
        from ..proposal import Proposal, SubgroupAssignment, format_proposal

        if request.role == "general_planner":
            ctx = request.context
            agents = tuple(sorted(o.observer for o in ctx.observations)) if ctx is not None else ()
            prop = Proposal.blank("All robots hold position.",
                                  (SubgroupAssignment(1, agents, "hold position"),) if agents else ())
            return BackendResponse(format_proposal(prop))
        if request.role == "subgroup_manager":
            ctx = request.context
            lines = []
            if ctx is not None:
                for m in ctx.members:
                    uid = next(o.self_state.uid for o in ctx.observations if o.observer == m)
                    lines.append(f"group {ctx.gid}: agent {m}({uid}) [wait]")
            return BackendResponse("<<<COMMANDS\n" + "\n".join(lines) + "\nCOMMANDS>>>")
        if request.role == "capability_scorer":
            return BackendResponse("1.0")
        return BackendResponse("EXECUTE")
