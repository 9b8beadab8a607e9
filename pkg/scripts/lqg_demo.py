#!/usr/bin/env python3
"""Certify random LQG closed loops and cross-check one by simulation.

Draws problems with a symmetric state matrix and isotropic weights (the
family where the half-power identity is exact), certifies each, then runs
the stopped-process Monte Carlo profile on the first certified closed loop:
exceedance frequencies should shrink as the start point approaches the
origin, and terminal magnitudes should concentrate near zero.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from slfcert.lqg import LqgProblem, certify_nas, closed_loop
from slfcert.montecarlo import SimConfig, estimate_stability_profile


def random_problem(rng, n):
    H = rng.standard_normal((n, n))
    U, _ = np.linalg.qr(H)
    A = U @ np.diag(rng.uniform(-2.0, 2.0, n)) @ U.T
    G = rng.standard_normal((n, 1))
    return LqgProblem(A=A, B=np.eye(n), Q=np.eye(n), R=np.eye(n), G=G)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=3, help="state dimension")
    parser.add_argument("--problems", type=int, default=5)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--paths", type=int, default=20000)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    first_loop = None
    for i in range(args.problems):
        prob = random_problem(rng, args.n)
        cert = certify_nas(prob)
        print(f"problem {i}: NAS={cert.nas} "
              f"min_eig(M)={cert.min_eig_M:.4f} "
              f"chain gap={cert.chain_discrepancy:.2e} "
              f"riccati residual={cert.riccati.residual:.2e}")
        if cert.nas and first_loop is None:
            first_loop = closed_loop(prob, cert.riccati)

    if first_loop is None:
        print("no certified problem to simulate")
        return

    print(f"\nMonte Carlo probe of the first certified loop "
          f"({args.paths} paths, horizon 10):")
    cfg = SimConfig(dt=1e-3, horizon=10.0, n_paths=args.paths, seed=args.seed)
    scale = np.ones(args.n) / np.sqrt(args.n)
    x0_list = [list(r * scale) for r in (3.2, 1.6, 0.8, 0.4)]
    profile = estimate_stability_profile(first_loop, x0_list, [2.0, 4.0], cfg)
    print("|x0|      P[sup>2]   P[sup>4]   |x(T^tau)| q50")
    for x0, row, terms in zip(profile.x0_list, profile.exceedance,
                              profile.terminal_quantiles):
        print(f"{np.linalg.norm(x0):5.2f}    {row[0]:8.4f}   {row[1]:8.4f}"
              f"   {terms[0]:10.4g}")
    print("(descriptive evidence only: in dimension >= 2 the path essentially"
          " never hits the origin exactly, so the stopped process rarely"
          " freezes and small thresholds sit below the additive-noise floor)")


if __name__ == "__main__":
    main()
