"""The grouping, planning, execution and feedback cycle.

One cycle: the general planner proposes subgroups, each subgroup manager
issues one command per member, commands are verified and re-checked by
their executors, the world takes exactly one step, and everything that
happened is written back into memory.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Sequence

from . import world as W
from .backends.base import Backend, BackendError, BackendRequest, BackendResponse, ReplayDivergence, TransportError
from .backends.prompts import (
    load_template,
    render_capabilities,
    render_feedback,
    render_history,
    render_observations,
    render_prompt,
    render_skills,
)
from .command import (
    FailureFeedback,
    StructuredCommand,
    VerificationResult,
    VerifyContext,
    _entity_uids,
    reconsider_deferred,
    render,
    verify,
)
from .config import SimConfig, default_sim_config
from .memory import (
    PLANNER,
    Ablations,
    AgentFeedback,
    ContextMemory,
    DialogueTurn,
    PlannerContext,
    SubgroupContext,
    executor_speaker,
    manager_speaker,
)
from .proposal import Proposal, ProposalError, SubgroupAssignment, extract_commands, parse_proposal
from .state import AgentState, EnvFeedback, Observation, SkillInvocation, WorldState


@dataclass(frozen=True)
class OrchestratorConfig:
    tau_c: float = 0.5
    capability_mode: str = "rule"          # rule | backend
    max_reprompts: int = 2
    parallel_managers: bool = True
    max_workers: int = 4
    executor_confirm: bool = True          # ask the backend to confirm each command
    ablations: Ablations = Ablations()


@dataclass(frozen=True)
class ExecutorDecision:
    agent: str
    command: StructuredCommand
    decision: str                          # execute | idle
    feedback: AgentFeedback
    invocation: Optional[SkillInvocation] = None

    def __post_init__(self):
        if self.decision not in ("execute", "idle"):
            raise ValueError(f"bad decision {self.decision!r}")
        if self.decision == "idle" and not self.feedback.diagnostic:
            raise ValueError("an idle decision must explain itself")

    def to_dict(self) -> dict:
        return {"agent": self.agent, "command": render(self.command), "decision": self.decision,
                "feedback": self.feedback.to_dict()}


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    proposal: Proposal
    subgroup_commands: dict[int, tuple[str, ...]]
    verifications: tuple[VerificationResult, ...]
    decisions: tuple[ExecutorDecision, ...]
    env_feedback: EnvFeedback
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "proposal": self.proposal.to_dict(),
            "fallback": self.fallback,
            "subgroup_commands": {str(g): list(c) for g, c in sorted(self.subgroup_commands.items())},
            "verifications": [v.to_dict() for v in self.verifications],
            "decisions": [d.to_dict() for d in self.decisions],
            "env_feedback": self.env_feedback.to_dict(),
        }

    def scene_dynamics(self) -> dict:
        """One line of the subgroup/subtask log."""
        return {"cycle": self.cycle,
                "groups": [{"gid": a.gid, "members": list(a.members), "subtask": a.subtask.split("\n")[0]}
                           for a in self.proposal.assignments]}

    def parallel_execution(self) -> dict:
        """One line of the per-agent skill log."""
        outs = dict(self.env_feedback.outcomes)
        skills = []
        for d in self.decisions:
            if d.invocation is None or d.invocation.verb == "wait":
                continue
            o = outs.get(d.agent)
            skills.append({"agent": d.agent, "command": render(d.command),
                           "success": None if o is None else o.success,
                           "reason": None if o is None else o.failure_reason})
        return {"cycle": self.cycle, "skills": skills}


class RecordingBackend:
    """Wraps a backend and keeps every exchange for the episode log."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.name = getattr(inner, "name", type(inner).__name__)
        self._lock = threading.Lock()
        self.exchanges: list[dict] = []

    def complete(self, request: BackendRequest) -> BackendResponse:
        resp = self.inner.complete(request)
        entry = {"key": list(request.key), "role": request.role,
                 "prompt_sha256": hashlib.sha256(request.rendered_prompt.encode()).hexdigest(),
                 "text": resp.text}
        with self._lock:
            self.exchanges.append(entry)
        return resp

    def sorted_exchanges(self) -> list[dict]:
        return sorted(self.exchanges, key=lambda e: json.dumps(e["key"]))


# --------------------------------------------------------------------------
# Context rendering
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeContext:
    instruction: str
    sim: SimConfig
    cfg: OrchestratorConfig


def _roster(obs: Sequence[Observation]) -> dict[str, AgentState]:
    return {o.observer: o.self_state for o in obs}


def planner_prompt(ctx: PlannerContext, ep: EpisodeContext) -> str:
    obs = ctx.observations
    return render_prompt(load_template("general_planner"), {
        "task": ep.instruction,
        "capabilities": render_capabilities(_roster(obs).values()),
        "skills": render_skills(scene=ep.sim.scene),
        "observations": render_observations(obs),
        "feedback": render_feedback(ctx.recent_agent_feedback, ctx.latest_env.conflicts, ctx.latest_env),
        "history": render_history(ctx.recent_turns),
    })


def manager_prompt(ctx: SubgroupContext, roster: dict[str, AgentState], ep: EpisodeContext) -> str:
    return render_prompt(load_template("subgroup_manager"), {
        "task": ep.instruction,
        "group": str(ctx.gid),
        "members": ", ".join(roster[m].token for m in ctx.members if m in roster),
        "subtask": ctx.subtask,
        "capabilities": render_capabilities(roster[m] for m in ctx.members if m in roster),
        "skills": render_skills(scene=ep.sim.scene),
        "observations": render_observations(ctx.observations),
        "feedback": render_feedback(ctx.recent_agent_feedback, ctx.conflicts),
        "history": render_history(ctx.recent_turns),
    })


def executor_prompt(cmd: StructuredCommand, agent: AgentState, obs: Optional[Observation]) -> str:
    from .state import SKILLS_BY_KIND

    return render_prompt(load_template("executor"), {
        "agent": agent.token,
        "skills": ", ".join(SKILLS_BY_KIND[agent.kind]),
        "command": render(cmd),
        "observations": render_observations([obs] if obs is not None else []),
    })


# --------------------------------------------------------------------------
# Roles
# --------------------------------------------------------------------------

def fallback_proposal(agents: Sequence[str], instruction: str, note: str) -> Proposal:
    return Proposal.blank(note, (SubgroupAssignment(1, tuple(agents), instruction),))


def propose_grouping(ctx: PlannerContext, backend: Backend, ep: EpisodeContext) -> tuple[Proposal, str, bool]:
    """Ask for a proposal, re-prompting on malformed output.

    Returns (proposal, raw text, used_fallback).  Transport failures
    propagate.
    """
    agents = [o.observer for o in sorted(ctx.observations, key=lambda o: o.self_state.uid)]
    prompt = planner_prompt(ctx, ep)
    system = load_template("system").text
    last_err = ""
    text = ""
    for attempt in range(ep.cfg.max_reprompts + 1):
        p = prompt if attempt == 0 else (
            prompt + f"\n\nYour previous reply could not be used ({last_err}). Reply again in the exact format.")
        resp = backend.complete(BackendRequest("general_planner", p, (ctx.cycle, PLANNER, attempt),
                                               "proposal", system, ctx))
        text = resp.text
        try:
            return parse_proposal(text, agents), text, False
        except ProposalError as exc:
            last_err = str(exc)
    note = f"planner output unusable after {ep.cfg.max_reprompts} re-prompts ({last_err}); all robots form one group"
    return fallback_proposal(agents, ep.instruction, note), text, True


def subgroup_plan(ctx: SubgroupContext, roster: dict[str, AgentState], backend: Backend,
                  ep: EpisodeContext) -> tuple[list[str], str, Optional[str]]:
    """One backend call for the subgroup.  Returns (commands, raw text, error)."""
    prompt = manager_prompt(ctx, roster, ep)
    try:
        resp = backend.complete(BackendRequest("subgroup_manager", prompt,
                                               (ctx.cycle, "subgroup_manager", ctx.gid), "commands",
                                               load_template("system").text, ctx))
    except (TransportError, ReplayDivergence):
        raise
    except BackendError as exc:
        return [], "", f"manager of group {ctx.gid} failed: {exc}"
    return extract_commands(resp.text), resp.text, None


def executor_decide(cmd: StructuredCommand, agent: AgentState, obs: Optional[Observation],
                    backend: Optional[Backend] = None, cycle: int = 0, reach: Optional[float] = None) -> ExecutorDecision:
    """Re-check a verified command against the robot's own state."""

    def idle(category: str, diag: str) -> ExecutorDecision:
        return ExecutorDecision(agent.name, cmd, "idle", AgentFeedback(agent.name, cycle, False, diag, category))

    if not agent.can(cmd.verb):
        return idle("incorrect_agent_selection",
                    f"incorrect agent selection: {agent.name} is a {agent.kind} and cannot {cmd.verb}")
    obj = cmd.object[0] if cmd.object else None
    if agent.holding is not None and cmd.verb in ("pick", "carry") and agent.holding != obj:
        return idle("state_inconsistency", f"state inconsistency: {agent.name} is already holding {agent.holding}")
    if agent.kind == "arm" and cmd.verb in ("pick", "check") and obs is not None and obj is not None:
        seen = obs.component(obj)
        r = reach if reach is not None else (agent.reach or 0.855)
        if seen is not None and agent.pose.distance_to(seen[0]) > r + 1e-12:
            return idle("state_inconsistency",
                        f"state inconsistency: {obj} is {agent.pose.distance_to(seen[0]):.2f} m away, beyond reach")
    if backend is not None and cmd.verb != "wait":
        resp = backend.complete(BackendRequest("executor", executor_prompt(cmd, agent, obs),
                                               (cycle, "executor", agent.name), "decision",
                                               load_template("system").text, (cmd, agent, obs)))
        text = resp.text.strip()
        if text.upper().startswith("IDLE"):
            reason = text.split(":", 1)[1].strip() if ":" in text else "executor declined"
            return idle("state_inconsistency", reason or "executor declined")
    inv = SkillInvocation(agent.name, cmd.verb, obj, cmd.location)
    return ExecutorDecision(agent.name, cmd, "execute", AgentFeedback(agent.name, cycle, True, "accepted"), inv)


# --------------------------------------------------------------------------
# Cycle and episode
# --------------------------------------------------------------------------

def _known_entities(text: str, names: Sequence[str]) -> frozenset[str]:
    return frozenset(n for n in names if re.search(rf"\b{re.escape(n)}\b", text))


@dataclass
class EpisodeState:
    world: WorldState
    memory: ContextMemory
    pending: list[VerificationResult] = field(default_factory=list)
    records: list[CycleRecord] = field(default_factory=list)


def _scorer(backend: Backend, roster: dict[str, AgentState], cycle: int):
    def score(cmd: StructuredCommand) -> float:
        prompt = render_prompt(load_template("capability_scorer"), {
            "capabilities": render_capabilities(roster.values()), "command": render(cmd)})
        resp = backend.complete(BackendRequest("capability_scorer", prompt,
                                               (cycle, "capability_scorer", render(cmd)), "score", "", (cmd, roster)))
        m = re.search(r"[-+]?\d*\.?\d+", resp.text)
        return float(m.group()) if m else 0.0
    return score


def run_cycle(state: EpisodeState, backend: Backend, ep: EpisodeContext) -> CycleRecord:
    cfg, sim = ep.cfg, ep.sim
    mem = state.memory
    world = state.world
    cycle = world.step
    ab = mem.ablations

    # 1. grouping
    pctx = mem.context_for_planner()
    roster = _roster(pctx.observations)
    agent_names = [a.name for a in sorted(roster.values(), key=lambda a: a.uid)]
    fallback = False
    if ab.no_grouping:
        proposal = fallback_proposal(agent_names, ep.instruction, "grouping stage disabled; one group of all robots")
    else:
        proposal, text, fallback = propose_grouping(pctx, backend, ep)
        mem.record(DialogueTurn(cycle, PLANNER, text if not fallback else f"{text}\n[fallback] {proposal.situation_analysis}"))
    mem.record_groups(cycle, {a.gid: (a.members, a.subtask) for a in proposal.assignments})

    # 2. subgroup planning, concurrently across groups
    sctxs = [mem.context_for_subgroup(a.gid, cycle=cycle) for a in proposal.assignments]
    if cfg.parallel_managers and len(sctxs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            plans = list(pool.map(lambda c: subgroup_plan(c, roster, backend, ep), sctxs))
    else:
        plans = [subgroup_plan(c, roster, backend, ep) for c in sctxs]
    errors: list[AgentFeedback] = []
    for sc, (cmds, text, err) in zip(sctxs, plans):
        mem.record(DialogueTurn(cycle, manager_speaker(sc.gid), text if err is None else f"(no plan: {err})"))
        if err:
            errors.extend(AgentFeedback(m, cycle, False, err, "state_inconsistency") for m in sc.members)

    # 3. verification, serially in gid order
    uids = _entity_uids(sim.scene)
    obs_by_agent = {o.observer: o for o in pctx.observations}
    scorer = _scorer(backend, roster, cycle) if cfg.capability_mode == "backend" else None
    claimed: set[str] = set()
    commanded: set[str] = set()
    verifications: list[VerificationResult] = []
    accepted: list[VerificationResult] = []
    new_pending: list[VerificationResult] = []
    sub_cmds: dict[int, tuple[str, ...]] = {}
    for sc, (cmds, _, _) in zip(sctxs, plans):
        sub_cmds[sc.gid] = tuple(cmds)
        known = _known_entities(manager_prompt(sc, roster, ep), list(uids))
        for raw in cmds:
            vctx = VerifyContext(
                roster=roster, members=sc.members,
                observations={o.observer: o for o in sc.observations},
                scene=sim.scene, known=known, tau_c=cfg.tau_c, scorer=scorer,
                claimed=frozenset(claimed),
                available={n: (() if n in commanded else _skills(a)) for n, a in roster.items()},
            )
            res = verify(raw, vctx)
            verifications.append(res)
            if res.accepted:
                accepted.append(res)
                commanded.update(i.agent for i in res.invocations)
                claimed.update(i.object for i in res.invocations if i.object and i.verb != "wait")
            elif res.deferred:
                new_pending.append(replace(res, attempts=1))

    # deferred commands from earlier cycles: new commands take precedence
    still = []
    for entry in state.pending:
        if set(entry.command.agent_names) & commanded:
            continue
        still.append(entry)
    if still:
        def ctx_for(entry: VerificationResult) -> VerifyContext:
            names = entry.command.agent_names
            return VerifyContext(roster=roster, members=names,
                                 observations={n: obs_by_agent[n] for n in names if n in obs_by_agent},
                                 scene=sim.scene, known=_known_entities(ep.instruction, list(uids)),
                                 tau_c=cfg.tau_c, scorer=scorer, claimed=frozenset(claimed),
                                 available={n: (() if n in commanded else _skills(a)) for n, a in roster.items()})
        for res in reconsider_deferred(still, ctx_for):
            verifications.append(res)
            if res.accepted:
                accepted.append(res)
                commanded.update(i.agent for i in res.invocations)
                claimed.update(i.object for i in res.invocations if i.object and i.verb != "wait")
            elif res.deferred:
                new_pending.append(res)
    state.pending = new_pending

    # 4. executors
    decisions: list[ExecutorDecision] = []
    actions: dict[str, SkillInvocation] = {}
    confirm = backend if cfg.executor_confirm else None
    for res in accepted:
        for inv in res.invocations:
            agent = roster[inv.agent]
            cmd = replace(res.command, agents=((agent.name, agent.uid),))
            d = executor_decide(cmd, agent, obs_by_agent.get(agent.name), confirm, cycle, sim.scene.arm_reach)
            decisions.append(d)
            text = f"EXECUTE {render(cmd)}" if d.decision == "execute" else f"IDLE {render(cmd)}: {d.feedback.diagnostic}"
            mem.record(DialogueTurn(cycle, executor_speaker(agent.name), text))
            if d.decision == "execute":
                actions[agent.name] = d.invocation

    # 5. one world step
    new_world, env = W.step(world, actions, sim)

    # 6. feedback
    for f in errors:
        mem.record(f)
    for res in verifications:
        if res.failure is not None and not res.deferred:
            for a in (res.failure.agents or (f"group_{res.command.group}" if res.command else "unknown",)):
                mem.record(AgentFeedback(a, cycle, False, f"{res.failure.stage}: {res.failure.diagnostic}",
                                         res.failure.category))
        elif res.deferred and res.failure is not None:
            for a in res.failure.agents:
                mem.record(AgentFeedback(a, cycle, False, f"deferred ({res.failure.stage}): {res.failure.diagnostic}",
                                         res.failure.category))
    for d in decisions:
        if d.decision == "idle":
            mem.record(d.feedback)
    for name, out in env.outcomes:
        if out.success:
            mem.record(AgentFeedback(name, cycle, True, out.diagnostic or "done"))
        else:
            mem.record(AgentFeedback(name, cycle, False, f"execution {out.failure_reason}: {out.diagnostic}"))
    mem.record(env)

    rec = CycleRecord(cycle, proposal, sub_cmds, tuple(verifications), tuple(decisions), env, fallback)
    state.world = new_world
    state.records.append(rec)
    return rec


def _skills(agent: AgentState) -> tuple[str, ...]:
    from .state import SKILLS_BY_KIND

    return SKILLS_BY_KIND[agent.kind]


@dataclass(frozen=True)
class EpisodeResult:
    task_id: str
    trial: int
    seed: int
    success: bool
    steps: int
    budget: int
    label: str = "full"
    log: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.steps > self.budget:
            raise ValueError(f"{self.steps} steps exceed the budget of {self.budget}")

    def summary(self) -> dict:
        return {"task": self.task_id, "trial": self.trial, "seed": self.seed, "success": self.success,
                "steps": self.steps, "budget": self.budget, "label": self.label}


def run_episode(task, backend: Backend, seed: int, *, sim: Optional[SimConfig] = None,
                cfg: OrchestratorConfig = OrchestratorConfig(), trial: int = 0,
                budget: Optional[int] = None) -> EpisodeResult:
    """Run cycles until the car is assembled or the step budget is used up."""
    sim = sim or default_sim_config()
    world = task.build_world(seed, sim.scene)
    instruction = task.instruction(sim.scene)
    ep = EpisodeContext(instruction, sim, cfg)
    rec_backend = RecordingBackend(backend)
    mem = ContextMemory(cfg.ablations)
    mem.record(W.initial_feedback(world, sim))
    state = EpisodeState(world, mem)
    budget = task.budget if budget is None else budget
    while not W.check_assembly_complete(state.world) and state.world.step < budget:
        run_cycle(state, rec_backend, ep)
    success = W.check_assembly_complete(state.world)
    log = {
        "task": task.id,
        "difficulty": task.difficulty,
        "seed": seed,
        "trial": trial,
        "label": cfg.ablations.label,
        "backend": rec_backend.name,
        "success": success,
        "steps": state.world.step,
        "budget": budget,
        # enough to rerun the episode: skill parameters and orchestrator settings
        "skills": asdict(sim.skills),
        "orchestrator": {k: v for k, v in asdict(cfg).items() if k != "ablations"},
        "initial_world": world.to_dict(),
        "final_world": state.world.to_dict(),
        "cycles": [r.to_dict() for r in state.records],
        "scene_dynamics": [r.scene_dynamics() for r in state.records],
        "parallel_execution": [r.parallel_execution() for r in state.records],
        "exchanges": rec_backend.sorted_exchanges(),
        "memory": mem.to_dict(),
    }
    return EpisodeResult(task.id, trial, seed, success, state.world.step, budget, cfg.ablations.label, log)


def dump_log(result: EpisodeResult) -> str:
    """Canonical JSON for an episode log; byte-identical across identical runs."""
    return json.dumps(result.log, sort_keys=True, indent=1)
