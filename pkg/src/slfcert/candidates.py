"""Structured Lyapunov candidate families with analytic semijets.

Four families are supported, each positive definite and proper by
construction:

* ``PowerSum``       -- sum_i (1/p_i) |x_i|^(p_i), exponents p_i > 0;
* ``WeightedAbsSum`` -- sum_i w_i |x_i|, weights w_i > 0;
* ``Quadratic``      -- x^T P x with P symmetric positive definite;
* ``Smoothed``       -- a PowerSum whose kinks were bridged by quintic
  connector curves (see the connector module), C^2 everywhere.

Besides plain evaluation each family knows its smooth locus, its true jet
there, a canonical second-order subdifferential witness at kinks (zero
slope and zero curvature rows on kink coordinates), and adversarial
semijet samples exercising the directions a kink leaves unconstrained.
Adversarial elements are only emitted after passing a numerical membership
check of the defining lower-Taylor inequality.

Kink coordinates with exponent in (1, 2) force the subgradient entry to 0
while leaving the curvature entry free; exponents below 1 have a steep
kink (infinite one-sided slope) where every slope is admissible.  Both
boundary-slope elements (full negative-semidefinite curvature) and
interior-slope elements (free kink curvature) are sampled, since either
family can matter in dimension > 1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .expr import NonSmoothPointError


class SmoothPointError(Exception):
    """Adversarial kink elements were requested at a smooth point."""


class Provenance(enum.Enum):
    TRUE_JET = "true_jet"
    CANONICAL_WITNESS = "canonical_witness"
    ADVERSARIAL = "adversarial"


@dataclass(eq=False)
class SemijetElement:
    p: np.ndarray
    X: np.ndarray
    provenance: Provenance

    def to_jsonable(self):
        return {
            "p": self.p.tolist(),
            "X": self.X.tolist(),
            "provenance": self.provenance.value,
        }


# escalation ladder for the free curvature direction at a kink; the first
# rung mirrors the classic x^2 test function (second derivative 2)
KINK_CURVATURE_LADDER = (2.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6)

MEMBERSHIP_RADII = (1e-2, 1e-3)
MEMBERSHIP_COEFF = 1e-3
MEMBERSHIP_SAMPLES = 10_000


class Candidate:
    """Shared behavior; concrete families fill in the coordinate data."""

    n: int

    # -- family hooks --------------------------------------------------------

    def value(self, x) -> float:
        raise NotImplementedError

    def value_batch(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def kink_coords(self, x):
        """Indices where the candidate fails to be C^2 at x."""
        raise NotImplementedError

    def grad_at(self, x) -> np.ndarray:
        raise NotImplementedError

    def hess_at(self, x) -> np.ndarray:
        raise NotImplementedError

    def kink_slope_halfwidth(self, k: int) -> float:
        """Half-width of the admissible interior slope interval at a kink."""
        raise NotImplementedError

    def notes(self):
        return []

    # -- derived operations ---------------------------------------------------

    def smooth_at(self, x) -> bool:
        return not self.kink_coords(x)

    def jet(self, x) -> SemijetElement:
        if not self.smooth_at(x):
            raise NonSmoothPointError(
                f"candidate is not C^2 at {np.asarray(x).tolist()}"
            )
        return SemijetElement(self.grad_at(x), self.hess_at(x), Provenance.TRUE_JET)

    def witness(self, x) -> SemijetElement:
        kinks = self.kink_coords(x)
        if not kinks:
            return self.jet(x)
        p = self.grad_at(x)
        X = self.hess_at(x)
        for k in kinks:
            p[k] = 0.0
            X[k, :] = 0.0
            X[:, k] = 0.0
        return SemijetElement(p, X, Provenance.CANONICAL_WITNESS)

    def adversarial(self, x, count: int):
        """Membership-verified kink elements with escalating curvature."""
        kinks = self.kink_coords(x)
        if not kinks:
            raise SmoothPointError(
                "no kink at this point; the semijet is the classical jet family"
            )
        x = np.asarray(x, dtype=float)
        base = self.witness(x)
        out = []
        for element in self.adversarial_stream(x, base, kinks):
            if semijet_membership(self, x, element).ok:
                out.append(element)
                if len(out) == count:
                    break
        return out

    def adversarial_stream(self, x, base, kinks):
        slopes = {k: self.kink_slope_halfwidth(k) for k in kinks}
        for t in KINK_CURVATURE_LADDER:
            X = base.X.copy()
            for k in kinks:
                X[k, k] = t
            yield SemijetElement(base.p.copy(), X, Provenance.ADVERSARIAL)
        # interior nonzero slopes combined with free curvature
        for frac in (0.5, -0.5):
            for t in KINK_CURVATURE_LADDER[:3]:
                p = base.p.copy()
                X = base.X.copy()
                for k in kinks:
                    p[k] = frac * slopes[k]
                    X[k, k] = t
                yield SemijetElement(p, X, Provenance.ADVERSARIAL)
        # boundary-slope family: p_k at the edge, curvature kept NSD (zero)
        for sign in (1.0, -1.0):
            p = base.p.copy()
            ok = True
            for k in kinks:
                if slopes[k] == 0.0:
                    ok = False  # slope is pinned to 0, no boundary family
                p[k] = sign * self._boundary_slope(k)
            if ok:
                yield SemijetElement(p, base.X.copy(), Provenance.ADVERSARIAL)

    def _boundary_slope(self, k: int) -> float:
        return self.kink_slope_halfwidth(k)

    # -- reporting -------------------------------------------------------------

    def to_jsonable(self) -> dict:
        raise NotImplementedError


@dataclass(eq=False)
class PowerSum(Candidate):
    """V(x) = sum_i (1/p_i) |x_i|^(p_i) with every exponent positive."""

    exponents: np.ndarray

    def __init__(self, exponents):
        self.exponents = np.asarray(exponents, dtype=float)
        if self.exponents.ndim != 1 or np.any(self.exponents <= 0.0):
            raise ValueError("exponents must be a vector of positive numbers")
        self.n = self.exponents.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(np.abs(x) ** self.exponents / self.exponents))

    def value_batch(self, pts):
        return np.sum(np.abs(pts) ** self.exponents / self.exponents, axis=-1)

    def kink_coords(self, x):
        x = np.asarray(x, dtype=float)
        return [i for i in range(self.n) if x[i] == 0.0 and self.exponents[i] < 2.0]

    def grad_at(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.sign(x) * np.abs(x) ** (self.exponents - 1.0)
        g[x == 0.0] = 0.0
        return g

    def hess_at(self, x):
        x = np.asarray(x, dtype=float)
        diag = np.empty(self.n)
        for i in range(self.n):
            p = self.exponents[i]
            if x[i] == 0.0:
                diag[i] = 1.0 if p == 2.0 else 0.0
            else:
                diag[i] = (p - 1.0) * abs(x[i]) ** (p - 2.0)
        return np.diag(diag)

    def kink_slope_halfwidth(self, k):
        p = self.exponents[k]
        if p == 1.0:
            return 1.0
        if p < 1.0:
            return 1.0  # steep kink: every slope admissible; sample within 1
        return 0.0  # p in (1,2): slope pinned to 0

    def notes(self):
        if np.any(self.exponents < 1.0):
            steep = [i + 1 for i in range(self.n) if self.exponents[i] < 1.0]
            return [f"steep kink (exponent < 1) on coordinates {steep}"]
        return []

    def to_jsonable(self):
        return {"family": "power_sum", "exponents": self.exponents.tolist()}


@dataclass(eq=False)
class WeightedAbsSum(Candidate):
    """V(x) = sum_i w_i |x_i| with positive weights."""

    weights: np.ndarray

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.ndim != 1 or np.any(self.weights <= 0.0):
            raise ValueError("weights must be a vector of positive numbers")
        self.n = self.weights.shape[0]

    def value(self, x):
        return float(np.abs(np.asarray(x, dtype=float)) @ self.weights)

    def value_batch(self, pts):
        return np.abs(pts) @ self.weights

    def kink_coords(self, x):
        x = np.asarray(x, dtype=float)
        return [i for i in range(self.n) if x[i] == 0.0]

    def grad_at(self, x):
        return self.weights * np.sign(np.asarray(x, dtype=float))

    def hess_at(self, x):
        return np.zeros((self.n, self.n))

    def kink_slope_halfwidth(self, k):
        return float(self.weights[k])

    def to_jsonable(self):
        return {"family": "abs_sum", "weights": self.weights.tolist()}


@dataclass(eq=False)
class Quadratic(Candidate):
    """V(x) = x^T P x with P symmetric positive definite (Cholesky-checked)."""

    P: np.ndarray

    def __init__(self, P):
        P = np.asarray(P, dtype=float)
        if P.ndim == 0:
            P = P.reshape(1, 1)
        if P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if np.max(np.abs(P - P.T)) > 1e-12:
            raise ValueError("P must be symmetric")
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise ValueError("P must be positive definite") from None
        self.P = 0.5 * (P + P.T)
        self.n = P.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def value_batch(self, pts):
        return np.einsum("...i,ij,...j->...", pts, self.P, pts)

    def kink_coords(self, x):
        return []

    def grad_at(self, x):
        return 2.0 * self.P @ np.asarray(x, dtype=float)

    def hess_at(self, x):
        return 2.0 * self.P.copy()

    def kink_slope_halfwidth(self, k):
        raise SmoothPointError("quadratic candidates have no kinks")

    def to_jsonable(self):
        return {"family": "quadratic", "matrix": self.P.tolist()}


@dataclass(eq=False)
class Smoothed(Candidate):
    """C^2 surrogate sum_i V_i(x_i) built from per-coordinate connector specs.

    ``specs`` are connector.ConnectorSpec objects: each knows its inner
    function on [0, a), the quintic bridge on [a, b) and the power branch
    beyond, with C^2 matching at both knots.
    """

    specs: tuple

    def __init__(self, specs):
        self.specs = tuple(specs)
        self.n = len(self.specs)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(sum(s.piece_value(x[i]) for i, s in enumerate(self.specs)))

    def value_batch(self, pts):
        pts = np.asarray(pts, dtype=float)
        return sum(
            s.piece_value_batch(pts[..., i]) for i, s in enumerate(self.specs)
        )

    def kink_coords(self, x):
        return []

    def grad_at(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([s.piece_d1(x[i]) for i, s in enumerate(self.specs)])

    def hess_at(self, x):
        x = np.asarray(x, dtype=float)
        return np.diag([s.piece_d2(x[i]) for i, s in enumerate(self.specs)])

    def kink_slope_halfwidth(self, k):
        raise SmoothPointError("smoothed candidates have no kinks")

    def to_jsonable(self):
        return {
            "family": "smoothed",
            "connectors": [s.to_jsonable() for s in self.specs],
        }


# ---------------------------------------------------------------------------
# numerical semijet membership


@dataclass
class MembershipResult:
    ok: bool
    worst: dict  # radius -> most negative sampled remainder


def semijet_membership(
    candidate: Candidate,
    x,
    element: SemijetElement,
    radii=MEMBERSHIP_RADII,
    n_samples=MEMBERSHIP_SAMPLES,
    coeff=MEMBERSHIP_COEFF,
    seed=20240,
) -> MembershipResult:
    """Spot-check V(y) >= V(x) + p(y-x) + (y-x)^T X (y-x)/2 - coeff*r^2.

    Samples y uniformly in the ball |y - x| <= r for each radius; the
    tolerance scales with r^2, matching the little-o remainder the semijet
    definition allows.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    rng = np.random.Generator(np.random.Philox(key=seed))
    vx = candidate.value(x)
    worst = {}
    ok = True
    for r in radii:
        direction = rng.standard_normal((n_samples, n))
        norms = np.linalg.norm(direction, axis=1)
        norms[norms == 0.0] = 1.0
        radius = r * rng.random(n_samples) ** (1.0 / n)
        d = direction * (radius / norms)[:, None]
        y = x + d
        vy = candidate.value_batch(y)
        taylor = vx + d @ element.p + 0.5 * np.einsum("mi,ij,mj->m", d, element.X, d)
        rem = float(np.min(vy - taylor))
        worst[r] = rem
        if rem < -coeff * r * r:
            ok = False
    return MembershipResult(ok=ok, worst=worst)


# ---------------------------------------------------------------------------
# spec-style free functions


def evaluate(c: Candidate, x) -> float:
    return c.value(x)


def smooth_locus(c: Candidate, x) -> bool:
    return c.smooth_at(x)


def jet_at(c: Candidate, x) -> SemijetElement:
    return c.jet(x)


def canonical_witness(c: Candidate, x) -> SemijetElement:
    return c.witness(x)


def adversarial_elements(c: Candidate, x, count: int):
    return c.adversarial(x, count)


def candidate_from_json(obj: dict) -> Candidate:
    family = obj.get("family")
    if family == "power_sum":
        return PowerSum(obj["exponents"])
    if family == "abs_sum":
        return WeightedAbsSum(obj["weights"])
    if family == "quadratic":
        return Quadratic(np.asarray(obj["matrix"], dtype=float))
    if family == "smoothed":
        from . import connector

        specs = [connector.ConnectorSpec.from_json(s) for s in obj["connectors"]]
        return Smoothed(specs)
    raise ValueError(f"unknown candidate family {family!r}")
