"""Quintic connector curves and forward-completeness certificates.

A power-sum candidate sum_i |x_i|^(p_i)/p_i with an exponent below 2 is not
C^2 on the coordinate hyperplanes.  Each coordinate is repaired by grafting
a smooth, even, positive definite inner function v on [0, a), a quintic in
|x| on [a, b) and the original power branch beyond b, with matching value,
slope and curvature at both knots.  The resulting surrogate is C^2
everywhere, positive definite and proper, so a bound

    L V'(x) <= c V'(x) + g     with  c = 0,  g = max(0, a_bar, a_tilde)

over the three region types (all coordinates beyond their outer knot; all
inside their inner knot; every mixed archetype) certifies that solutions
cannot explode in finite time with positive probability.  The region maxima
a_bar and a_tilde are grid maximizations, and the certificate records the
largest tested radius; the outer-region sign condition is what the verdict
stands on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .candidates import PowerSum, Smoothed
from .generator import apply_generator
from .sde_model import SdeSystem

FIT_RESIDUAL_TOL = 1e-9
KNOT_MATCH_TOL = 1e-8
MONOTONE_SAMPLES = 10_000


class ConnectorError(ValueError):
    pass


def default_inner(a: float, p: float) -> ex.Expr:
    """(kappa/2) x^2 with kappa = a^(p-2), the outer branch's curvature scale."""
    kappa = a ** (p - 2.0)
    return ex.Bin("*", ex.Num(kappa / 2.0), ex.Bin("^", ex.Var(1), ex.Num(2.0)))


@dataclass(eq=False)
class ConnectorSpec:
    """One coordinate's piecewise profile: inner v, quintic bridge, power tail."""

    a: float
    b: float
    p: float
    inner: ex.Expr
    alpha: np.ndarray  # c(s) = sum_k alpha[k] s^k on s = |x| in [a, b)

    # -- bridge polynomial ----------------------------------------------------

    def _poly(self, s, order=0):
        k = np.arange(6.0)
        if order == 0:
            coeff = self.alpha
        elif order == 1:
            coeff = self.alpha * k
            k = k - 1.0
        else:
            coeff = self.alpha * k * (k - 1.0)
            k = k - 2.0
        out = 0.0
        for c, e in zip(coeff, k):
            if c != 0.0 and e >= 0.0:
                out = out + c * np.power(s, e)
        return out

    # -- piecewise profile V_i ------------------------------------------------

    def piece_value(self, t: float) -> float:
        s = abs(t)
        if s >= self.b:
            return s**self.p / self.p
        if s >= self.a:
            return float(self._poly(s))
        return ex.eval_expr(self.inner, [t])

    def piece_d1(self, t: float) -> float:
        s = abs(t)
        sign = 1.0 if t > 0 else (-1.0 if t < 0 else 0.0)
        if s >= self.b:
            return sign * s ** (self.p - 1.0)
        if s >= self.a:
            return sign * float(self._poly(s, order=1))
        jet = ex.eval_jet(self.inner, [t])
        return float(jet.gradient[0])

    def piece_d2(self, t: float) -> float:
        s = abs(t)
        if s >= self.b:
            return (self.p - 1.0) * s ** (self.p - 2.0)
        if s >= self.a:
            return float(self._poly(s, order=2))
        jet = ex.eval_jet(self.inner, [t])
        return float(jet.hessian[0, 0])

    def piece_value_batch(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = np.abs(t)
        inner_fn = getattr(self, "_inner_fn", None)
        if inner_fn is None:
            inner_fn = ex.compile_array(self.inner, 1)
            self._inner_fn = inner_fn
        with np.errstate(all="ignore"):
            power = s**self.p / self.p
            bridge = self._poly(s)
            inner = inner_fn(t.reshape(1, -1).copy()).reshape(s.shape)
        return np.where(s >= self.b, power, np.where(s >= self.a, bridge, inner))

    def to_jsonable(self):
        return {
            "a": self.a,
            "b": self.b,
            "p": self.p,
            "inner": ex.render(self.inner),
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        inner = ex.parse(obj["inner"], 1)
        spec = cls(a=float(obj["a"]), b=float(obj["b"]), p=float(obj["p"]),
                   inner=inner, alpha=np.asarray(obj["alpha"], dtype=float))
        _validate_spec(spec)
        return spec


def _inner_jet(inner, t):
    jet = ex.eval_jet(inner, [t])
    if not jet.smooth:
        raise ConnectorError(f"inner function is not C^2 at {t}")
    return jet


def _validate_inner(inner, a):
    v0 = ex.eval_expr(inner, [0.0])
    if abs(v0) > 1e-12:
        raise ConnectorError(f"inner function must vanish at 0, got {v0}")
    for t in np.linspace(0.0, a, 33):
        _inner_jet(inner, t)
        ve = ex.eval_expr(inner, [t])
        if abs(ve - ex.eval_expr(inner, [-t])) > 1e-12 * max(1.0, abs(ve)):
            raise ConnectorError("inner function must be even")
        if t > 0.0 and ve <= 0.0:
            raise ConnectorError(f"inner function must be positive at {t}, got {ve}")


def _conditions(a, b, p, inner):
    """Six boundary conditions pinning the quintic on [a, b]."""
    jet = _inner_jet(inner, a)
    rows, rhs = [], []
    for s, vals in (
        (a, (jet.value, float(jet.gradient[0]), float(jet.hessian[0, 0]))),
        (b, (b**p / p, b ** (p - 1.0), (p - 1.0) * b ** (p - 2.0))),
    ):
        powers = np.array([s**k for k in range(6)])
        d1 = np.array([0.0] + [k * s ** (k - 1) for k in range(1, 6)])
        d2 = np.array([0.0, 0.0] + [k * (k - 1) * s ** (k - 2) for k in range(2, 6)])
        rows.extend([powers, d1, d2])
        rhs.extend(vals)
    return np.array(rows), np.array(rhs)


def _validate_spec(spec: ConnectorSpec):
    if not (0.0 < spec.a < spec.b):
        raise ConnectorError(f"need 0 < a < b, got a={spec.a}, b={spec.b}")
    _validate_inner(spec.inner, spec.a)
    va = ex.eval_expr(spec.inner, [spec.a])
    if spec.b**spec.p / spec.p <= va:
        raise ConnectorError(
            f"need b^p/p > v(a): {spec.b ** spec.p / spec.p} <= {va}")
    M, rhs = _conditions(spec.a, spec.b, spec.p, spec.inner)
    residual = float(np.max(np.abs(M @ spec.alpha - rhs)))
    if residual >= FIT_RESIDUAL_TOL:
        raise ConnectorError(f"boundary-condition residual {residual:.3g} too large")
    s = np.linspace(spec.a, spec.b, MONOTONE_SAMPLES + 2)[1:-1]
    slope = spec._poly(s, order=1)
    j = int(np.argmin(slope))
    if slope[j] <= 0.0:
        raise ConnectorError(
            f"bridge has an interior extremum near |x| = {s[j]:.6g} "
            f"(slope {slope[j]:.3g})")
    return residual


def fit_connector(a: float, b: float, p: float, inner: ex.Expr | None = None
                  ) -> ConnectorSpec:
    """Solve the 6x6 boundary-condition system for the quintic bridge."""
    if not (0.0 < a < b):
        raise ConnectorError(f"need 0 < a < b, got a={a}, b={b}")
    if inner is None:
        inner = default_inner(a, p)
    _validate_inner(inner, a)
    M, rhs = _conditions(a, b, p, inner)
    try:
        alpha = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise ConnectorError(f"boundary-condition system is singular: {exc}") from exc
    spec = ConnectorSpec(a=a, b=b, p=p, inner=inner, alpha=alpha)
    _validate_spec(spec)
    return spec


def knot_mismatch(spec: ConnectorSpec) -> float:
    """Worst value/slope/curvature gap between branches at the two knots."""
    a, b, p = spec.a, spec.b, spec.p
    jet = _inner_jet(spec.inner, a)
    gaps = [
        spec._poly(a) - jet.value,
        spec._poly(a, 1) - float(jet.gradient[0]),
        spec._poly(a, 2) - float(jet.hessian[0, 0]),
        spec._poly(b) - b**p / p,
        spec._poly(b, 1) - b ** (p - 1.0),
        spec._poly(b, 2) - (p - 1.0) * b ** (p - 2.0),
    ]
    return float(np.max(np.abs(gaps)))


def build_smoothed(base: PowerSum, specs) -> Smoothed:
    """Assemble the C^2 surrogate; validates knots and positive definiteness."""
    specs = tuple(specs)
    if len(specs) != base.n:
        raise ConnectorError(
            f"need {base.n} connector specs, got {len(specs)}")
    for i, spec in enumerate(specs):
        if spec.p != base.exponents[i]:
            raise ConnectorError(
                f"spec {i} has exponent {spec.p}, base has {base.exponents[i]}")
        gap = knot_mismatch(spec)
        if gap >= KNOT_MATCH_TOL:
            raise ConnectorError(f"coordinate {i}: knot mismatch {gap:.3g}")
        ts = np.linspace(0.0, spec.b, 513)[1:]
        vals = spec.piece_value_batch(ts)
        if np.min(vals) <= 0.0:
            raise ConnectorError(
                f"coordinate {i}: surrogate not positive on (0, b]")
    return Smoothed(specs)


# ---------------------------------------------------------------------------
# FCiP certificate


@dataclass
class FcipGridConfig:
    radius: float = 100.0  # outer-region box extent L
    far_factor: float = 10.0  # far-field shell at far_factor * L
    n_outer: int = 41
    n_inner: int = 41
    n_mixed: int = 7

    @classmethod
    def for_dimension(cls, n: int, radius: float = 100.0) -> "FcipGridConfig":
        """Per-axis counts that keep the product grids at desk scale."""
        outer = {1: 41, 2: 17, 3: 9}.get(n, 5)
        inner = {1: 41, 2: 17, 3: 9}.get(n, 5)
        mixed = {1: 7, 2: 7, 3: 5}.get(n, 3)
        return cls(radius=radius, n_outer=outer, n_inner=inner, n_mixed=mixed)


@dataclass
class FcipCertificate:
    c: float
    g: float
    case_a_max: float
    case_a_ok: bool
    case_a_violation: list | None
    case_b_bound: float
    case_c_bound: float
    verdict: bool
    far_field: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    def to_jsonable(self):
        return {
            "c": self.c,
            "g": self.g,
            "case_a_max": self.case_a_max,
            "case_a_ok": self.case_a_ok,
            "case_a_violation": self.case_a_violation,
            "case_b_bound": self.case_b_bound,
            "case_c_bound": self.case_c_bound,
            "verdict": self.verdict,
            "far_field": dict(self.far_field),
            "grid": dict(self.grid),
        }


def _affine_structure(sys: SdeSystem):
    """Extract (A, const) drift and constant diffusion, or None."""
    rng = np.random.Generator(np.random.Philox(key=20242))
    probes = rng.uniform(-3.0, 3.0, size=(4, sys.n))
    A = None
    for x in probes:
        rows = []
        for e in sys.drift:
            jet = ex.eval_jet(e, x)
            if not jet.smooth or np.max(np.abs(jet.hessian)) > 1e-10:
                return None
            rows.append(jet.gradient)
        J = np.array(rows)
        if A is None:
            A = J
        elif np.max(np.abs(J - A)) > 1e-10:
            return None
        for col in sys.diffusion:
            for e in col:
                jet = ex.eval_jet(e, x)
                if not jet.smooth or np.max(np.abs(jet.gradient)) > 1e-12:
                    return None
    return A


def far_field_leading_sign(sys: SdeSystem, smoothed: Smoothed,
                           samples: int = 2048) -> dict:
    """Leading-order sign test for the outer region, affine drift only.

    With drift Ax + const, constant diffusion and a common outer exponent p,
    the generator on the power branch grows like
    t^p * sum_i sgn(u_i)|u_i|^(p-1) (A u)_i along the ray t*u.  A negative
    maximum of that form over the unit sphere certifies the outer-region
    sign condition for every sufficiently large radius, which box sampling
    alone cannot.
    """
    exponents = {s.p for s in smoothed.specs}
    if len(exponents) != 1:
        return {"applicable": False, "reason": "mixed outer exponents"}
    p = exponents.pop()
    A = _affine_structure(sys)
    if A is None:
        return {"applicable": False,
                "reason": "drift not affine or diffusion not constant"}
    n = sys.n
    rng = np.random.Generator(np.random.Philox(key=20243))
    dirs = rng.standard_normal((samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if n <= 10:
        corners = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
        dirs = np.vstack([dirs, corners / np.sqrt(n)])
    weights = np.sign(dirs) * np.abs(dirs) ** (p - 1.0)
    leading = np.einsum("mi,mi->m", weights, dirs @ A.T)
    margin = float(np.max(leading))
    return {
        "applicable": True,
        "leading_margin": margin,
        "certified": bool(margin < 0.0),
        "outer_exponent": p,
    }


def _signed_magnitudes(values):
    vals = np.concatenate([-values[::-1], values])
    return np.unique(vals)


def _generator_max(sys, smoothed, points):
    best = -np.inf
    argbest = None
    for x in points:
        jet = smoothed.jet(x)
        val = apply_generator(sys, x, jet.p, jet.X).value
        if val > best:
            best = val
            argbest = x
    return best, argbest


def fcip_certificate(sys: SdeSystem, smoothed: Smoothed,
                     grids: FcipGridConfig | None = None) -> FcipCertificate:
    """Case analysis over outer/inner/mixed regions; c = 0 throughout."""
    if not isinstance(smoothed, Smoothed):
        raise TypeError("fcip_certificate needs a Smoothed candidate")
    if grids is None:
        grids = FcipGridConfig.for_dimension(smoothed.n)
    n = smoothed.n
    specs = smoothed.specs
    L = grids.radius

    # Case (a): every coordinate beyond its outer knot, out to radius L,
    # plus a coarse far-field shell.
    outer_axes = [
        _signed_magnitudes(np.geomspace(s.b, max(L, s.b * 2.0), grids.n_outer))
        for s in specs
    ]
    case_a_points = [np.array(p) for p in itertools.product(*outer_axes)]
    far = grids.far_factor * L
    for signs in itertools.product((1.0, -1.0), repeat=n):
        case_a_points.append(far / np.sqrt(n) * np.array(signs))
    a_max, a_arg = _generator_max(sys, smoothed, case_a_points)
    case_a_ok = bool(a_max <= 0.0)

    # Case (b): every coordinate inside its inner knot.
    inner_axes = [np.linspace(-s.a, s.a, grids.n_inner) for s in specs]
    case_b_points = [np.array(p) for p in itertools.product(*inner_axes)]
    b_max, _ = _generator_max(sys, smoothed, case_b_points)

    # Case (c): every mixed archetype -- a nonempty subset of coordinates
    # below their outer knot, the rest out on the power branch.
    c_max = -np.inf
    for k in range(1, n + 1):
        for subset in itertools.combinations(range(n), k):
            axes = []
            for i, s in enumerate(specs):
                if i in subset:
                    inner_vals = np.linspace(
                        0.0, s.b * (1.0 - 1e-12), grids.n_mixed)
                    axes.append(_signed_magnitudes(inner_vals))
                else:
                    axes.append(_signed_magnitudes(
                        np.geomspace(s.b, max(L, s.b * 2.0), grids.n_mixed)))
            pts = [np.array(p) for p in itertools.product(*axes)]
            m, _ = _generator_max(sys, smoothed, pts)
            c_max = max(c_max, m)

    g = max(0.0, b_max, c_max)
    return FcipCertificate(
        c=0.0,
        g=g,
        case_a_max=a_max,
        case_a_ok=case_a_ok,
        case_a_violation=None if case_a_ok else list(np.asarray(a_arg)),
        case_b_bound=b_max,
        case_c_bound=c_max,
        verdict=case_a_ok,
        far_field=far_field_leading_sign(sys, smoothed),
        grid={
            "radius": L,
            "far_field_radius": far,
            "n_outer": grids.n_outer,
            "n_inner": grids.n_inner,
            "n_mixed": grids.n_mixed,
        },
    )


def fcip_conclusion(cert: FcipCertificate) -> bool:
    return bool(cert.verdict)


def connector_csv(spec: ConnectorSpec, x_max: float | None = None,
                  n_points: int = 601) -> str:
    """Three-branch profile table for plotting the smoothing construction."""
    if x_max is None:
        x_max = 1.5 * spec.b
    xs = np.linspace(0.0, x_max, n_points)
    lines = ["x,v_branch,c_branch,power_branch"]
    with np.errstate(all="ignore"):
        for x in xs:
            v = ex.eval_expr(spec.inner, [x])
            cbr = float(spec._poly(x))
            pbr = x**spec.p / spec.p if x > 0 else 0.0
            lines.append(",".join(format(val, ".17g") for val in (x, v, cbr, pbr)))
    return "\n".join(lines) + "\n"
