"""Dataclass configs loaded from the YAML files under ``teamplan/configs``.

Every config has package defaults; ``load_*`` accepts an optional YAML path
whose keys override the defaults (nested mappings are merged).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .state import Pose2D


class ConfigError(ValueError):
    pass


def _read_yaml(name: str) -> dict:
    text = resources.files("teamplan").joinpath("configs").joinpath(name).read_text()
    return yaml.safe_load(text) or {}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _load(name: str, path: Optional[str | Path], overrides: Optional[dict]) -> dict:
    data = _read_yaml(name)
    if path is not None:
        data = _merge(data, yaml.safe_load(Path(path).read_text()) or {})
    if overrides:
        data = _merge(data, overrides)
    return data


def _xy(v) -> tuple[float, float]:
    return (float(v[0]), float(v[1]))


@dataclass(frozen=True)
class SceneConfig:
    domain: tuple[float, float, float, float]
    perception_radius: float
    robot_radius: float
    anchors: dict[str, tuple[float, float]]
    wall_half_extents: tuple[float, float]
    wall_centers: tuple[tuple[float, float], ...]
    blocker_half_extents: tuple[float, float]
    blocker_layouts: dict[str, tuple[tuple[float, float], ...]]
    agv_region: tuple[float, float, float, float]
    agv_clearance: float
    humanoid_half_width: float
    humanoid_clearance: dict[str, float]
    max_init_attempts: int
    arm_pose: Pose2D
    arm_reach: float
    sockets: dict[str, tuple[float, float]]
    staging: dict[str, tuple[float, float]]
    clearing_zones: dict[str, tuple[float, float]]
    lookouts: dict[str, tuple[float, float]]
    access_clearance: float
    pickup_radius: float
    stack_tolerance: float
    agents: tuple[tuple[str, int, str], ...]
    components: tuple[tuple[str, int], ...]
    blocker_uids: tuple[int, ...]
    wall_uids: tuple[int, ...]

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(
            domain=tuple(float(v) for v in d["domain"]),
            perception_radius=float(d["perception_radius"]),
            robot_radius=float(d["robot_radius"]),
            anchors={k: _xy(v) for k, v in d["anchors"].items()},
            wall_half_extents=_xy(d["walls"]["half_extents"]),
            wall_centers=tuple(_xy(c) for c in d["walls"]["centers"]),
            blocker_half_extents=_xy(d["blockers"]["half_extents"]),
            blocker_layouts={k: tuple(_xy(c) for c in d["blockers"][k]) for k in ("easy", "hard")},
            agv_region=tuple(float(v) for v in d["agv_region"]),
            agv_clearance=float(d["agv_clearance"]),
            humanoid_half_width=float(d["humanoid_half_width"]),
            humanoid_clearance={k: float(v) for k, v in d["humanoid_clearance"].items()},
            max_init_attempts=int(d["max_init_attempts"]),
            arm_pose=Pose2D.from_seq(d["arm"]["pose"]),
            arm_reach=float(d["arm"]["reach"]),
            sockets={k: _xy(v) for k, v in d["sockets"].items()},
            staging={k: _xy(v) for k, v in d["staging"].items()},
            clearing_zones={k: _xy(v) for k, v in d["clearing_zones"].items()},
            lookouts={k: _xy(v) for k, v in d["lookouts"].items()},
            access_clearance=float(d["access_clearance"]),
            pickup_radius=float(d["pickup_radius"]),
            stack_tolerance=float(d["stack_tolerance"]),
            agents=tuple((a["name"], int(a["uid"]), a["kind"]) for a in d["agents"]),
            components=tuple((c["name"], int(c["uid"])) for c in d["components"]),
            blocker_uids=tuple(int(u) for u in d["blocker_uids"]),
            wall_uids=tuple(int(u) for u in d["wall_uids"]),
        )

    def named_locations(self) -> dict[str, tuple[float, float]]:
        locs: dict[str, tuple[float, float]] = {}
        locs.update({f"anchor_{k}": v for k, v in self.anchors.items()})
        locs.update(self.sockets)
        locs.update(self.staging)
        locs.update(self.clearing_zones)
        locs.update(self.lookouts)
        return locs

    def in_domain(self, x: float, y: float, margin: float = 0.0) -> bool:
        x0, x1, y0, y1 = self.domain
        return x0 + margin <= x <= x1 - margin and y0 + margin <= y <= y1 - margin

    def uid_of(self, name: str) -> Optional[int]:
        for n, uid, _ in self.agents:
            if n == name:
                return uid
        for n, uid in self.components:
            if n == name:
                return uid
        return None


@dataclass(frozen=True)
class DriveLimits:
    v_max: float = 1.0
    omega_max: float = 2.0
    dt: float = 0.05
    goal_tolerance: float = 0.1
    lookahead: float = 0.3
    max_cross_track: float = 1.0
    max_time: float = 120.0


@dataclass(frozen=True)
class RRTParams:
    goal_bias: float = 0.1
    step_size: float = 0.3
    max_samples: int = 5000
    rewire_k: int = 32
    resolution: float = 0.1


@dataclass(frozen=True)
class ImpedanceParams:
    kp: float = 5.0
    dt: float = 0.01
    phase_max_steps: int = 1000
    gripper_threshold: float = 0.05
    grasp_radius: float = 0.03
    magnet_range: float = 0.03

    @property
    def kv(self) -> float:
        return 2.0 * math.sqrt(self.kp)


@dataclass(frozen=True)
class SkillConfig:
    drive: DriveLimits = field(default_factory=DriveLimits)
    rrt: RRTParams = field(default_factory=RRTParams)
    impedance: ImpedanceParams = field(default_factory=ImpedanceParams)
    final_leg: float = 0.5
    conflict_distance: float = 0.5
    conflict_samples: int = 50
    failure_rates: dict[str, float] = field(default_factory=dict)
    # ((verb, n), ...): the n-th successful execution of verb fails stochastically
    forced_failures: tuple[tuple[str, int], ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "SkillConfig":
        return cls(
            drive=DriveLimits(**d.get("drive", {})),
            rrt=RRTParams(**d.get("rrt", {})),
            impedance=ImpedanceParams(**d.get("impedance", {})),
            final_leg=float(d.get("final_leg", 0.5)),
            conflict_distance=float(d.get("conflict_distance", 0.5)),
            conflict_samples=int(d.get("conflict_samples", 50)),
            failure_rates={k: float(v) for k, v in d.get("failure_rates", {}).items()},
            forced_failures=tuple((v, int(n)) for v, n in d.get("forced_failures", [])),
        )

    def without_failures(self) -> "SkillConfig":
        return replace(self, failure_rates={k: 0.0 for k in self.failure_rates}, forced_failures=())

    def with_forced(self, verb: str, occurrence: int = 1) -> "SkillConfig":
        return replace(self, forced_failures=self.forced_failures + ((verb, occurrence),))


@dataclass(frozen=True)
class SimConfig:
    scene: SceneConfig
    skills: SkillConfig


def load_scene_config(path=None, overrides: Optional[dict] = None) -> SceneConfig:
    return SceneConfig.from_dict(_load("scene.yaml", path, overrides))


def load_skill_config(path=None, overrides: Optional[dict] = None) -> SkillConfig:
    return SkillConfig.from_dict(_load("skills.yaml", path, overrides))


_DEFAULT: dict[str, Any] = {}


def default_sim_config() -> SimConfig:
    if "sim" not in _DEFAULT:
        _DEFAULT["sim"] = SimConfig(load_scene_config(), load_skill_config())
    return _DEFAULT["sim"]


def load_yaml(name: str) -> dict:
    """Raw contents of a packaged config file (grammar, tasks, ...)."""
    return _read_yaml(name)
