#!/usr/bin/env python3
"""Full system next to each single-component ablation, as one table.

The scripted backend ignores most of its prompt, so ablations mostly show
their effect through grouping.  Use ``--backend http`` for a real model.

    python3 scripts/run_ablations.py --backend scripted --trials 5
"""

import argparse

from teamplan.harness import SuiteConfig, backend_factory, emit_report, run_ablation, run_suite
from teamplan.tasks import load_tasks

ABLATIONS = ("no_history", "no_feedback", "no_grouping")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--backend", choices=("scripted", "http"), default="scripted")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--suite-seed", type=int, default=0)
    ap.add_argument("--tasks", help="comma-separated task ids (default: all)")
    ap.add_argument("--format", choices=("table", "json"), default="table")
    args = ap.parse_args()

    all_tasks = load_tasks()
    ids = args.tasks.split(",") if args.tasks else sorted(all_tasks)
    tasks = [all_tasks[i] for i in ids]
    suite = SuiteConfig(trials=args.trials, suite_seed=args.suite_seed)
    factory = backend_factory(args.backend)

    reports = [run_suite(tasks, factory, suite)]
    reports += [run_ablation(kind, tasks, factory, suite) for kind in ABLATIONS]
    print(emit_report(reports, args.format))


if __name__ == "__main__":
    main()
