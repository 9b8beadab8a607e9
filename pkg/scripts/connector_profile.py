#!/usr/bin/env python3
"""Fit a quintic connector and export its three-branch profile as CSV.

Defaults reproduce the standard smoothing profile (inner knot 0.05, outer
knot 0.4, quartic outer branch).
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from slfcert import connector
from slfcert import expr as ex


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--a", type=float, default=0.05, help="inner knot")
    parser.add_argument("--b", type=float, default=0.4, help="outer knot")
    parser.add_argument("--p", type=float, default=4.0, help="outer exponent")
    parser.add_argument("--inner", default=None,
                        help="inner function in x1 (default (a^(p-2)/2)x1^2)")
    parser.add_argument("--out", default="connector_curve.csv")
    args = parser.parse_args()

    inner = ex.parse(args.inner, 1) if args.inner else None
    spec = connector.fit_connector(args.a, args.b, args.p, inner)
    print("alpha (constant..quintic):")
    for k, coeff in enumerate(spec.alpha):
        print(f"  alpha_{k} = {coeff: .10g}")
    print(f"knot mismatch: {connector.knot_mismatch(spec):.3g}")

    path = Path(args.out)
    path.write_text(connector.connector_csv(spec))
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
