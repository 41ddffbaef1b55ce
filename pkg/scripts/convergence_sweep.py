#!/usr/bin/env python3
"""Run the eps sweep for a config and print the error table with observed rates."""
import argparse
from pathlib import Path

from stefan_homog.config import parse_config, with_overrides
from stefan_homog.diagnostics import TABLE_HEADER, convergence_study, observed_rates

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "stefan.json"))
    ap.add_argument("--eps", type=float, nargs="+")
    ap.add_argument("--csv", help="write the table here")
    args = ap.parse_args()
    spec = parse_config(args.config)
    if args.eps:
        spec = with_overrides(spec, eps=args.eps)
    table = convergence_study(spec)
    print("  ".join(f"{h:>12}" for h in TABLE_HEADER))
    for r in table.rows:
        print("  ".join(f"{v:12.4e}" for v in r.as_tuple()))
    print("observed L1 rates:", ", ".join(f"{q:.3f}" for q in observed_rates(table)))
    print("checks:", table.checks)
    if args.csv:
        Path(args.csv).write_bytes(table.to_csv().encode())


if __name__ == "__main__":
    main()
