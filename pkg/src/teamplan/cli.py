"""Command-line entry point: run suites, replay logs, print reports, validate assets."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .backends.base import BackendError
from .config import SkillConfig, default_sim_config
from .memory import Ablations
from .orchestrator import OrchestratorConfig, run_episode
from .tasks import load_tasks

# config-file keys for `run`; a CLI flag, when given, wins over the file
RUN_KEYS = ("tasks", "backend", "trials", "ablation", "suite_seed", "failures", "results_dir", "workers",
            "truncation", "format", "logs", "tau_c")


def _run_settings(args) -> dict:
    settings = {"tasks": None, "backend": "scripted", "trials": 5, "ablation": None, "suite_seed": 0,
                "failures": True, "results_dir": None, "workers": 1, "truncation": "budget",
                "format": "table", "logs": None, "tau_c": 0.5}
    if args.config:
        data = yaml.safe_load(Path(args.config).read_text()) or {}
        unknown = set(data) - set(RUN_KEYS)
        if unknown:
            raise SystemExit(f"unknown config key(s): {', '.join(sorted(unknown))}")
        settings.update(data)
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def cmd_run(args) -> int:
    from .harness import SuiteConfig, SuiteError, backend_factory, emit_report, run_suite

    s = _run_settings(args)
    all_tasks = load_tasks()
    ids = s["tasks"].split(",") if isinstance(s["tasks"], str) else (s["tasks"] or sorted(all_tasks))
    tasks = [all_tasks[i] for i in ids]
    suite = SuiteConfig(trials=int(s["trials"]), suite_seed=int(s["suite_seed"]), workers=int(s["workers"]),
                        truncation=s["truncation"], results_dir=s["results_dir"], failures=bool(s["failures"]))
    cfg = OrchestratorConfig(tau_c=float(s["tau_c"]), ablations=Ablations.of(s["ablation"]))
    try:
        report = run_suite(tasks, backend_factory(s["backend"], s["logs"]), suite, cfg)
    except SuiteError as exc:
        print(f"error: {exc} ({len(exc.partial)} episode(s) finished)", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(emit_report(report, s["format"]))
    return 0


def cmd_replay(args) -> int:
    from .backends.replay import ReplayBackend

    log = json.loads(Path(args.log).read_text())
    task = load_tasks()[log["task"]]
    sim = replace(default_sim_config(), skills=SkillConfig.from_dict(log["skills"]))
    orch = dict(log.get("orchestrator", {}))
    cfg = OrchestratorConfig(**orch, ablations=Ablations(**{k: True for k in log["label"].split("+") if k != "full"}))
    try:
        res = run_episode(task, ReplayBackend(log), log["seed"], sim=sim, cfg=cfg, trial=log["trial"],
                          budget=log["budget"])
    except BackendError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 1
    same = res.success == log["success"] and res.steps == log["steps"] and \
        res.log["final_world"] == log["final_world"]
    print(json.dumps({**res.summary(), "matches_log": same}, sort_keys=True))
    return 0 if same else 1


def cmd_report(args) -> int:
    from .harness import emit_report, load_report

    paths = sorted(Path(args.results).rglob("report.json"))
    if not paths:
        print(f"error: no report.json under {args.results}", file=sys.stderr)
        return 2
    print(emit_report([load_report(p) for p in paths], args.format))
    return 0


def cmd_validate(args) -> int:
    from .backends.prompts import lint_templates
    from .backends.scripted import ScriptedBackend

    problems = lint_templates()
    sim = default_sim_config()
    sim = replace(sim, skills=sim.skills.without_failures())
    for tid, task in sorted(load_tasks().items()):
        res = run_episode(task, ScriptedBackend(task.script(sim.scene), sim), args.seed, sim=sim)
        rejected = [v["raw"] for c in res.log["cycles"] for v in c["verifications"] if not v["accepted"]]
        if not res.success or res.steps != task.gt_steps:
            problems.append(f"{tid}: scripted plan took {res.steps} steps (success={res.success}), "
                            f"expected {task.gt_steps}")
        if rejected:
            problems.append(f"{tid}: scripted commands failed verification: {rejected[:3]}")
    for p in problems:
        print(p)
    print("ok" if not problems else f"{len(problems)} problem(s)")
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="teamplan", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run tasks and print SR/AS")
    r.add_argument("--config", help="YAML file with run settings (flags override it)")
    r.add_argument("--tasks", help="comma-separated task ids (default: all)")
    r.add_argument("--backend", choices=("scripted", "wait", "http", "replay"))
    r.add_argument("--trials", type=int)
    r.add_argument("--ablation", choices=("no_history", "no_feedback", "no_grouping"))
    r.add_argument("--suite-seed", dest="suite_seed", type=int)
    r.add_argument("--no-failures", dest="failures", action="store_const", const=False,
                   help="disable stochastic skill failures")
    r.add_argument("--results-dir", dest="results_dir")
    r.add_argument("--logs", help="episode logs for the replay backend")
    r.add_argument("--workers", type=int)
    r.add_argument("--truncation", choices=("budget", "budget_plus_one"))
    r.add_argument("--tau-c", dest="tau_c", type=float)
    r.add_argument("--format", choices=("table", "json"))
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-run one episode from its log")
    p.add_argument("log")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="tabulate report.json files under a results directory")
    p.add_argument("results")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="lint prompt templates and check the scripted plans")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
