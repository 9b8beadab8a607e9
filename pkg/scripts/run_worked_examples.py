#!/usr/bin/env python3
"""Classify the three built-in example systems end to end.

For each system: origin class, weak/plain supersolution verdicts for the
weighted-abs candidate, SLF classification with the natural rate, forward
completeness via a smoothed surrogate and the resulting stability
conclusion.  Writes JSON artifacts when --out is given.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from slfcert import checker, connector, jsonio
from slfcert import expr as ex
from slfcert.candidates import PowerSum, WeightedAbsSum
from slfcert.sde_model import builtin_example, classify_origin

CASES = [
    ("ou_additive", [1.0], "abs(x1)"),
    ("geometric_half", [1.0], "abs(x1)/2"),
    ("chained3", [1.0, 1.0, 1.0], "abs(x1)+abs(x2)+abs(x3)"),
]


def run_case(name, weights, rate_src, out_dir):
    system = builtin_example(name)
    n = system.n
    candidate = WeightedAbsSum(weights)
    rate = ex.parse(rate_src, n)
    grid = checker.Grid.build(n, radius=2.0, per_axis=21 if n < 3 else 13)

    origin = classify_origin(system)
    verdict = checker.classify(system, candidate, [rate], grid)
    plain = checker.check_plain_supersolution(system, candidate, None, grid)

    specs = [connector.fit_connector(0.05, 0.4, 1.0) for _ in range(n)]
    smoothed = connector.build_smoothed(PowerSum(np.ones(n)), specs)
    cert = connector.fcip_certificate(
        system, smoothed, connector.FcipGridConfig.for_dimension(n, radius=20.0))
    conclusion = checker.stability_conclusion(
        verdict, origin, connector.fcip_conclusion(cert))

    print(f"== {name}")
    print(f"   origin:          {origin.value}")
    print(f"   classification:  {verdict.classification.value}"
          f" (rate {verdict.rate})")
    print(f"   plain check:     {plain.plain_supersolution.value}"
          f" ({len(plain.counterexamples)} counterexample(s))")
    print(f"   fcip:            verdict={cert.verdict} c={cert.c} g={cert.g:.6g}")
    print(f"   conclusion:      {conclusion.value} (grid evidence)")

    if out_dir is not None:
        payload = {
            "system": system.to_jsonable(),
            "origin": origin.value,
            "classification": verdict.classification.value,
            "plain": plain.plain_supersolution.value,
            "fcip": cert.to_jsonable(),
            "conclusion": conclusion.value,
        }
        path = out_dir / f"{name}_verdict.json"
        path.write_text(jsonio.dumps(payload))
        print(f"   wrote {path}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=None, help="artifact directory")
    args = parser.parse_args()
    out_dir = None
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
    for name, weights, rate in CASES:
        run_case(name, weights, rate, out_dir)


if __name__ == "__main__":
    main()
