#!/usr/bin/env python3
"""Run the full finite-difference gradient verification suite.

Checks every objective's analytic gradients against central differences
on randomly initialized miniature configurations and prints one line per
(config, loss).
"""

import argparse
import sys

from vclab import gradsuite


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--processes", type=int, default=None)
    args = p.parse_args()

    entries, elapsed = gradsuite.run_suite(
        n_configs=args.configs, step=args.step, processes=args.processes
    )
    failed = 0
    for e in entries:
        status = "ok" if e.max_rel_err <= args.tol else "FAIL"
        failed += status == "FAIL"
        print(f"seed {e.seed:4d}  {e.loss:16s} rel_err {e.max_rel_err:.2e} "
              f"checked {e.checked:5d} skipped {e.skipped:3d}  {status}")
    print(f"\n{len(entries)} checks in {elapsed:.0f}s, {failed} failures")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
