"""Evaluation protocol: seeded trials per task, SR/AS aggregation, ablations, reports."""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .backends.base import Backend, BackendError, TransportError, WaitBackend
from .config import SimConfig, default_sim_config
from .memory import Ablations
from .orchestrator import EpisodeResult, OrchestratorConfig, dump_log, run_episode
from .tasks import TaskSpec

log = logging.getLogger(__name__)

# builds one backend per episode; scripted backends carry per-episode belief
BackendFactory = Callable[[TaskSpec, int, SimConfig], Backend]

TRUNCATION = ("budget", "budget_plus_one")


class MetricsError(ValueError):
    pass


class SuiteError(RuntimeError):
    """An episode-level transport failure; ``partial`` holds the episodes that finished."""

    def __init__(self, msg: str, partial: Sequence[EpisodeResult]):
        super().__init__(msg)
        self.partial = tuple(partial)


@dataclass(frozen=True)
class SuiteConfig:
    trials: int = 5
    suite_seed: int = 0
    workers: int = 1
    # how a failed episode counts towards AS: the steps it used (the budget on
    # timeout) or one past the budget
    truncation: str = "budget"
    results_dir: Optional[str] = None
    failures: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.truncation not in TRUNCATION:
            raise ValueError(f"truncation must be one of {TRUNCATION}")


def trial_seed(suite_seed: int, task_id: str, trial: int) -> int:
    """Episode seed as a pure function of (suite seed, task id, trial)."""
    ss = np.random.SeedSequence([suite_seed, zlib.crc32(task_id.encode()), trial])
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class TaskMetrics:
    task_id: str
    trials: int
    sr: float
    avg_steps: float
    gt_steps: int

    def to_dict(self) -> dict:
        return {"task": self.task_id, "trials": self.trials, "SR": self.sr, "AS": self.avg_steps,
                "GT": self.gt_steps}


@dataclass(frozen=True)
class RunReport:
    label: str
    tasks: tuple[TaskMetrics, ...]
    truncation: str = "budget"
    backend: str = ""
    episodes: tuple[dict, ...] = field(default=(), compare=False)

    @property
    def name(self) -> str:
        return f"{self.backend} ({self.label})" if self.backend else self.label

    @property
    def sr(self) -> float:
        return float(np.mean([t.sr for t in self.tasks]))

    @property
    def avg_steps(self) -> float:
        return float(np.mean([t.avg_steps for t in self.tasks]))

    def task(self, task_id: str) -> TaskMetrics:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    def to_dict(self) -> dict:
        return {"label": self.label, "backend": self.backend, "truncation": self.truncation,
                "tasks": [t.to_dict() for t in self.tasks],
                "average": {"SR": self.sr, "AS": self.avg_steps},
                "episodes": list(self.episodes)}


def _counted_steps(r: EpisodeResult, truncation: str) -> int:
    if r.success or truncation == "budget":
        return r.steps
    return r.budget + 1


def compute_metrics(results: Sequence[EpisodeResult], truncation: str = "budget",
                    gt_steps: Optional[dict[str, int]] = None) -> RunReport:
    """Per-task SR (success fraction) and AS (mean steps), in task id order."""
    if not results:
        raise MetricsError("no episode results")
    labels = {r.label for r in results}
    if len(labels) > 1:
        raise MetricsError(f"results mix labels {sorted(labels)}")
    backends = {r.log.get("backend", "") for r in results}
    if len(backends) > 1:
        raise MetricsError(f"results mix backends {sorted(backends)}")
    if truncation not in TRUNCATION:
        raise MetricsError(f"unknown truncation {truncation!r}")
    by_task: dict[str, list[EpisodeResult]] = {}
    for r in results:
        by_task.setdefault(r.task_id, []).append(r)
    tasks = []
    for tid in sorted(by_task):
        rs = by_task[tid]
        gt = (gt_steps or {}).get(tid, rs[0].budget // 2)
        tasks.append(TaskMetrics(
            tid, len(rs),
            sum(r.success for r in rs) / len(rs),
            sum(_counted_steps(r, truncation) for r in rs) / len(rs),
            gt,
        ))
    eps = tuple(r.summary() for r in sorted(results, key=lambda r: (r.task_id, r.trial)))
    return RunReport(labels.pop(), tuple(tasks), truncation, backends.pop(), eps)


def backend_factory(kind: str, logs_dir: Optional[str] = None, endpoint=None) -> BackendFactory:
    """Factory for the named backend: scripted, wait, http or replay (needs ``logs_dir``)."""
    if kind == "scripted":
        from .backends.scripted import ScriptedBackend

        return lambda task, trial, sim: ScriptedBackend(task.script(sim.scene), sim)
    if kind == "wait":
        return lambda task, trial, sim: WaitBackend()
    if kind == "http":
        from .backends.http import EndpointConfig, HttpChatBackend

        shared = HttpChatBackend(endpoint or EndpointConfig.from_env())
        return lambda task, trial, sim: shared
    if kind == "replay":
        from .backends.replay import ReplayBackend

        if logs_dir is None:
            raise ValueError("the replay backend needs a directory of episode logs")

        def make(task, trial, sim):
            return ReplayBackend(Path(logs_dir, episode_filename(task.id, trial)).read_text())
        return make
    raise ValueError(f"unknown backend {kind!r}")


def episode_filename(task_id: str, trial: int) -> str:
    return f"{task_id}_trial{trial}.json"


def run_suite(tasks: Sequence[TaskSpec], factory: BackendFactory, suite: SuiteConfig = SuiteConfig(),
              cfg: OrchestratorConfig = OrchestratorConfig(), sim: Optional[SimConfig] = None) -> RunReport:
    """Run ``suite.trials`` episodes of every task and aggregate them.

    Each trial's seed comes from ``trial_seed``.  Logs (and the report) are
    written to ``suite.results_dir`` when set.  A transport failure stops the
    suite after flushing whatever finished.
    """
    sim = sim or default_sim_config()
    if not suite.failures:
        sim = replace(sim, skills=sim.skills.without_failures())
    jobs = [(t, k) for t in tasks for k in range(suite.trials)]
    out_dir = Path(suite.results_dir) if suite.results_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def one(job) -> EpisodeResult:
        task, k = job
        seed = trial_seed(suite.suite_seed, task.id, k)
        res = run_episode(task, factory(task, k, sim), seed, sim=sim, cfg=cfg, trial=k)
        log.info("%s trial %d (seed %d): success=%s steps=%d", task.id, k, seed, res.success, res.steps)
        if out_dir is not None:
            (out_dir / episode_filename(task.id, k)).write_text(dump_log(res))
        return res

    results: list[EpisodeResult] = []
    try:
        if suite.workers > 1:
            with ThreadPoolExecutor(max_workers=suite.workers) as pool:
                futures = [pool.submit(one, j) for j in jobs]
                err = None
                for f in futures:
                    try:
                        results.append(f.result())
                    except TransportError as exc:
                        err = err or exc
                if err is not None:
                    raise err
        else:
            for j in jobs:
                results.append(one(j))
    except (TransportError, BackendError) as exc:
        raise SuiteError(f"suite aborted: {exc}", results) from exc

    report = compute_metrics(results, suite.truncation, {t.id: t.gt_steps for t in tasks})
    if out_dir is not None:
        (out_dir / "report.json").write_text(emit_report(report, "json"))
    return report


def run_ablation(kind: str, tasks: Sequence[TaskSpec], factory: BackendFactory,
                 suite: SuiteConfig = SuiteConfig(), cfg: OrchestratorConfig = OrchestratorConfig(),
                 sim: Optional[SimConfig] = None) -> RunReport:
    """``run_suite`` with one ablation switched on; the report carries its label."""
    return run_suite(tasks, factory, suite, replace(cfg, ablations=Ablations.of(kind)), sim)


def emit_report(report: Union[RunReport, Sequence[RunReport]], fmt: str = "table") -> str:
    """Render one or more reports as a text table (one row each) or as JSON."""
    reports = [report] if isinstance(report, RunReport) else list(report)
    if fmt == "json":
        body = [r.to_dict() for r in reports]
        return json.dumps(body[0] if isinstance(report, RunReport) else body, sort_keys=True, indent=1)
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    ids = [t.task_id for t in reports[0].tasks]
    width = max([len("Method")] + [len(r.name) for r in reports] + [len("Ground Truth (GT)")])
    head1 = f"{'':<{width}} | " + " | ".join(f"{tid:^13}" for tid in ids + ["Average"])
    head2 = f"{'Method':<{width}} | " + " | ".join(f"{'SR':>5}  {'AS':>6}" for _ in ids + ["Average"])
    rows = [head1, head2, "-" * len(head2)]
    for r in reports:
        cells = [f"{t.sr:5.3f}  {t.avg_steps:6.1f}" for t in r.tasks] + [f"{r.sr:5.3f}  {r.avg_steps:6.1f}"]
        rows.append(f"{r.name:<{width}} | " + " | ".join(cells))
    gts = [t.gt_steps for t in reports[0].tasks]
    cells = [f"{'--':>5}  {g:6.1f}" for g in gts] + [f"{'--':>5}  {float(np.mean(gts)):6.1f}"]
    rows.append(f"{'Ground Truth (GT)':<{width}} | " + " | ".join(cells))
    return "\n".join(rows)


def load_report(path: Union[str, Path]) -> RunReport:
    d = json.loads(Path(path).read_text())
    tasks = tuple(TaskMetrics(t["task"], t["trials"], t["SR"], t["AS"], t["GT"]) for t in d["tasks"])
    return RunReport(d["label"], tasks, d.get("truncation", "budget"), d.get("backend", ""),
                     tuple(d.get("episodes", ())))
