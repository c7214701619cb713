"""Scenario builders shared by several test modules."""

from dataclasses import replace

from teamplan.state import Pose2D
from teamplan.world import init_scene


def placed(world, **poses):
    """Copy of ``world`` with the named agents moved to the given (x, y[, heading])."""
    for name, p in poses.items():
        world = world.with_agent(replace(world.agent(name), pose=Pose2D(*p)))
    return world


def crossing_world(scene=None):
    """Two AGVs on perpendicular straight lines through the origin, others out of the way."""
    w = init_scene(3, "easy", scene)
    return placed(w, agv_1=(-2.0, 1.0, 0.0), agv_2=(0.0, -1.0, 1.5707963),
                  agv_3=(2.5, 4.5, 0.0), humanoid_1=(-2.5, 4.5, 0.0))


def verify_ctx(world, members, scene, **kw):
    """A verifier context for ``members`` built from the true world."""
    from teamplan.command import VerifyContext
    from teamplan.world import observe

    roster = {a.name: a for a in world.agents}
    obs = {m: observe(world, m, scene.perception_radius) for m in members}
    return VerifyContext(roster, tuple(members), obs, scene, **kw)


def section(prompt, header):
    """Body of the ``# header`` section of a rendered prompt."""
    start = prompt.index(f"# {header}\n") + len(header) + 3
    end = prompt.find("\n# ", start)
    return prompt[start:end if end >= 0 else None].strip()


class CannedBackend:
    """Answers each request with ``reply(request)`` and keeps the requests."""

    name = "canned"

    def __init__(self, reply):
        self.reply = reply
        self.requests = []

    def complete(self, request):
        from teamplan.backends.base import BackendResponse

        self.requests.append(request)
        out = self.reply(request)
        if isinstance(out, Exception):
            raise out
        return BackendResponse(out)

    def prompts(self, role):
        return [r.rendered_prompt for r in self.requests if r.role == role]


def quiet_episode_log(task, sim, seed=0, **kw):
    from teamplan.backends.scripted import ScriptedBackend
    from teamplan.orchestrator import run_episode

    return run_episode(task, ScriptedBackend(task.script(sim.scene), sim), seed, sim=sim, **kw)
