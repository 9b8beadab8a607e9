"""The diffusion's second-order operator acting on explicit (p, X) data.

For a system dx = f dt + sum_a sigma_a dw_a and second-order data (p, X),

    L(x, p, X) = p . f(x) + (1/2) sum_a sigma_a(x)^T X sigma_a(x).

The Lyapunov-equation residual used throughout the checker is
F = -L - l, so "supersolution" always means F >= 0; no sign conventions
switch elsewhere.  X is symmetrized on entry since the quadratic form only
sees the symmetric part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .expr import NonSmoothPointError
from .sde_model import SdeSystem


@dataclass(frozen=True)
class GeneratorValue:
    drift_part: float  # p . f(x)
    diffusion_part: float  # (1/2) sum_a sigma_a^T X sigma_a

    @property
    def value(self) -> float:
        return self.drift_part + self.diffusion_part


def apply_generator(sys: SdeSystem, x, p, X) -> GeneratorValue:
    """Evaluate the operator at x on explicit second-order data (p, X)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    X = np.asarray(X, dtype=float)
    if x.shape != (sys.n,) or p.shape != (sys.n,) or X.shape != (sys.n, sys.n):
        raise ValueError(
            f"dimension mismatch: n={sys.n}, x{x.shape}, p{p.shape}, X{X.shape}"
        )
    Xs = 0.5 * (X + X.T)
    drift = float(p @ sys.drift_at(x))
    sigma = sys.diffusion_at(x)
    diffusion = 0.5 * float(sum(sigma[a] @ Xs @ sigma[a] for a in range(sys.d)))
    return GeneratorValue(drift_part=drift, diffusion_part=diffusion)


def apply_generator_smooth(sys: SdeSystem, phi: ex.Expr, x) -> GeneratorValue:
    """Evaluate on a smooth test function via its AD jet at x."""
    jet = ex.eval_jet(phi, np.asarray(x, dtype=float))
    if not jet.smooth:
        raise NonSmoothPointError(
            f"test function is not C^2 at {np.asarray(x).tolist()}"
        )
    return apply_generator(sys, x, jet.gradient, jet.hessian)
