"""Large-beta convergence check on random instances, written as a CSV report.

    python3 scripts/verify_suite.py --instances 1000 --out verify_report.csv
"""

import argparse

import numpy as np

from ibmcr.ib import DEFAULT_BETAS, random_instance, verify_special_case, write_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="verify_report.csv")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    for _ in range(args.instances):
        rows.extend(verify_special_case(*random_instance(rng), betas=DEFAULT_BETAS))
    write_report(rows, args.out)
    bad = sum(not r.passed for r in rows)
    worst = max(abs(r.residual - r.predicted) / r.predicted for r in rows if r.predicted > 0)
    print(f"{len(rows) - bad}/{len(rows)} rows PASS, worst relative residual error {worst:.2e}")
    raise SystemExit(1 if bad else 0)


if __name__ == "__main__":
    main()
