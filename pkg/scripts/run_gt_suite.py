#!/usr/bin/env python3
"""Run the scripted ground-truth plans on every task and print the SR/AS table.

    python3 scripts/run_gt_suite.py --trials 5 --results-dir results/gt
"""

import argparse
import time

from teamplan.harness import SuiteConfig, backend_factory, emit_report, run_suite
from teamplan.tasks import load_tasks


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--suite-seed", type=int, default=0)
    ap.add_argument("--failures", action="store_true", help="keep stochastic skill failures on")
    ap.add_argument("--results-dir")
    args = ap.parse_args()

    tasks = [t for _, t in sorted(load_tasks().items())]
    suite = SuiteConfig(trials=args.trials, suite_seed=args.suite_seed, failures=args.failures,
                        results_dir=args.results_dir)
    t0 = time.perf_counter()
    report = run_suite(tasks, backend_factory("scripted"), suite)
    print(emit_report(report))
    print(f"\n{len(report.episodes)} episodes in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
