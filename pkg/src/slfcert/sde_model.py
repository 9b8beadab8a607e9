"""Autonomous Ito diffusions dx = f(x) dt + sum_a sigma_a(x) dw_a.

A system is a bundle of coefficient expressions: one drift component per
state dimension and d diffusion columns of n components each.  Local
Lipschitz continuity of the coefficients is a user obligation, not checked
here; reports downstream carry that caveat.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import expr as ex


class OriginClass(enum.Enum):
    ALMOST_SURE_EQUILIBRIUM = "almost_sure_equilibrium"  # f(0)=0 and sigma(0)=0
    NOISY_EQUILIBRIUM = "noisy_equilibrium"  # f(0)=0, noise may act at 0
    NOT_EQUILIBRIUM = "not_equilibrium"

    @property
    def is_noisy_equilibrium(self):
        return self is not OriginClass.NOT_EQUILIBRIUM


@dataclass(frozen=True)
class SdeSystem:
    n: int
    d: int
    drift: tuple  # n expressions
    diffusion: tuple  # d columns, each a tuple of n expressions
    name: str = ""

    def __post_init__(self):
        if len(self.drift) != self.n:
            raise ValueError(f"drift needs {self.n} components, got {len(self.drift)}")
        if len(self.diffusion) != self.d:
            raise ValueError(
                f"diffusion needs {self.d} columns, got {len(self.diffusion)}"
            )
        for col in self.diffusion:
            if len(col) != self.n:
                raise ValueError("every diffusion column needs n components")
        for e in list(self.drift) + [e for col in self.diffusion for e in col]:
            k = ex.max_var_index(e)
            if k > self.n:
                raise ValueError(f"expression references x{k} beyond dimension {self.n}")

    # -- evaluation ---------------------------------------------------------

    def drift_at(self, x) -> np.ndarray:
        return np.array([ex.eval_expr(e, x) for e in self.drift])

    def diffusion_at(self, x) -> np.ndarray:
        """Columns sigma_1..sigma_d stacked as a (d, n) array."""
        return np.array([[ex.eval_expr(e, x) for e in col] for col in self.diffusion])

    # -- serialization ------------------------------------------------------

    def to_jsonable(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "drift": [ex.render(e) for e in self.drift],
            "diffusion": [[ex.render(e) for e in col] for col in self.diffusion],
            "name": self.name,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SdeSystem":
        n, d = int(obj["n"]), int(obj["d"])
        drift = tuple(ex.parse(s, n) for s in obj["drift"])
        diffusion = tuple(tuple(ex.parse(s, n) for s in col) for col in obj["diffusion"])
        return cls(n=n, d=d, drift=drift, diffusion=diffusion, name=obj.get("name", ""))


def from_matrices(A, G, name="") -> SdeSystem:
    """Affine system: drift A x with constant diffusion columns G[:, k]."""
    A = np.asarray(A, dtype=float)
    G = np.asarray(G, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    if G.ndim == 1:
        G = G.reshape(n, 1)
    if G.size == 0:
        G = np.zeros((n, 1))
    if G.shape[0] != n:
        raise ValueError("G must have n rows")
    d = G.shape[1]

    def row_expr(coeffs):
        node = None
        for j, c in enumerate(coeffs):
            if c == 0.0:
                continue
            term = ex.Bin("*", ex.Num(c), ex.Var(j + 1))
            node = term if node is None else ex.Bin("+", node, term)
        return node if node is not None else ex.Num(0.0)

    drift = tuple(row_expr(A[i]) for i in range(n))
    diffusion = tuple(tuple(ex.Num(float(G[i, k])) for i in range(n)) for k in range(d))
    return SdeSystem(n=n, d=d, drift=drift, diffusion=diffusion, name=name)


def classify_origin(sys: SdeSystem, tol: float = 1e-12) -> OriginClass:
    """Classify the origin by evaluating the coefficients at 0."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    zero = np.zeros(sys.n)
    if np.linalg.norm(sys.drift_at(zero)) > tol:
        return OriginClass.NOT_EQUILIBRIUM
    sigma = sys.diffusion_at(zero)
    if max(np.linalg.norm(sigma[k]) for k in range(sys.d)) <= tol:
        return OriginClass.ALMOST_SURE_EQUILIBRIUM
    return OriginClass.NOISY_EQUILIBRIUM


_BUILTINS = {
    "ou_additive": {
        "n": 1, "d": 1, "drift": ["-x1"], "diffusion": [["1"]],
        "name": "ou_additive",
    },
    "geometric_half": {
        "n": 1, "d": 1, "drift": ["-x1/2"], "diffusion": [["x1"]],
        "name": "geometric_half",
    },
    "chained3": {
        "n": 3, "d": 2, "drift": ["-x1", "-x2", "-x3"],
        "diffusion": [["1", "0", "x2"], ["0", "1", "0"]],
        "name": "chained3",
    },
}


def builtin_example(name: str) -> SdeSystem:
    """The three worked example systems, by name."""
    try:
        spec = _BUILTINS[name]
    except KeyError:
        raise ValueError(
            f"unknown builtin {name!r}; choose from {sorted(_BUILTINS)}"
        ) from None
    return SdeSystem.from_json(spec)
