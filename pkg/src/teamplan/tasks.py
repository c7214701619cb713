"""Task specifications: scene layout, difficulty, ground-truth step count."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

from .config import SceneConfig, SimConfig, default_sim_config, load_yaml
from .state import WorldState

ROOM_NAMES = {"ne": "north-east", "nw": "north-west", "sw": "south-west", "se": "south-east"}


@dataclass(frozen=True)
class TaskSpec:
    id: str
    difficulty: str
    gt_steps: int
    layout: Mapping[str, str]
    blockers: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    hidden: tuple[str, ...] = ()
    seed: int = 0

    @property
    def budget(self) -> int:
        return 2 * self.gt_steps

    def with_seed(self, seed: int) -> "TaskSpec":
        return replace(self, seed=seed)

    def build_world(self, seed: Optional[int] = None, scene: Optional[SceneConfig] = None) -> WorldState:
        from .world import init_scene

        return init_scene(self.seed if seed is None else seed, self.difficulty, scene, self.layout, self.blockers)

    def instruction(self, scene: Optional[SceneConfig] = None) -> str:
        scene = scene or default_sim_config().scene
        lines = [
            "Assemble the car at the fixed arm: mount the trunk on trunk_socket first, "
            "then each wheel on a free wheel socket. Loose parts must first be brought "
            "within the arm's reach (the staging spots of the assembly zone).",
        ]
        by_anchor: dict[str, list[str]] = {}
        for comp, anchor in self.layout.items():
            if comp not in self.hidden:
                by_anchor.setdefault(anchor, []).append(comp)
        for anchor in sorted(by_anchor):
            x, y = scene.anchors[anchor]
            items = " and ".join(by_anchor[anchor])
            stacked = " (stacked, the trunk on top)" if len(by_anchor[anchor]) > 1 else ""
            lines.append(f"{items} {'are' if len(by_anchor[anchor]) > 1 else 'is'} in the "
                         f"{ROOM_NAMES[anchor]} room at ({x:.1f}, {y:.1f}){stacked}.")
        for comp in self.hidden:
            lines.append(f"The location of {comp} is unknown; search the rooms for it.")
        if self.difficulty == "hard":
            lines.append("Some corridors and parts are blocked by movable 1x1 m blockers; "
                         "the humanoid can carry a blocker to a clearing zone (clearing_w or clearing_e).")
        return "\n".join(lines)

    def script(self, scene: Optional[SceneConfig] = None):
        """What the instruction reveals, in the form the scripted planner uses."""
        from .backends.scripted import TaskScript
        from .world import build_obstacles

        scene = scene or default_sim_config().scene
        comps = {c: scene.anchors[a] for c, a in self.layout.items() if c not in self.hidden}
        blockers = {o.name: o.center.xy for o in build_obstacles(scene, self.difficulty, self.blockers)
                    if o.kind == "blocker"}
        return TaskScript(self.instruction(scene), comps, blockers)


def load_tasks(path=None) -> dict[str, TaskSpec]:
    import yaml
    from pathlib import Path

    data = yaml.safe_load(Path(path).read_text()) if path else load_yaml("tasks.yaml")
    out = {}
    for tid, d in data["tasks"].items():
        out[tid] = TaskSpec(
            id=tid,
            difficulty=d["difficulty"],
            gt_steps=int(d["gt_steps"]),
            layout=dict(d["layout"]),
            blockers={int(k): (float(v[0]), float(v[1])) for k, v in (d.get("blockers") or {}).items()},
            hidden=tuple(d.get("hidden", ())),
        )
    return out
