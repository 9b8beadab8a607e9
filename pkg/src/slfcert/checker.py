"""Grid verification of weak/plain supersolution properties and SLF classes.

The pointwise condition is F(x, p, X) = -L(x, p, X) - l(x) >= 0.  A weak
check asks for it at one canonical semijet witness per grid point; a plain
check asks for it at every element, which on a machine means the extreme
classical jet on the smooth locus plus adversarial kink elements with
escalating curvature.  Refutations are sound (each reported counterexample
is a numerically verified semijet member, or an explicitly analytic record
when the curvature term grows without bound); "Holds" is grid evidence
only.

Verification grids are boxes with mandatory kink slices (every subset of
coordinates zeroed) and log-spaced radial shells near the origin, since
that is where non-smooth candidates live or die.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import candidates as cand
from . import expr as ex
from .generator import apply_generator
from .sde_model import OriginClass, SdeSystem

DEFAULT_TOL = 1e-9
MAX_RECORDED_COUNTEREXAMPLES = 200


class PlainStatus(enum.Enum):
    HOLDS = "holds"
    REFUTED = "refuted"
    UNKNOWN = "unknown"


class Classification(enum.Enum):
    NOT_VERIFIED = "not_verified"
    SLF = "slf"
    STRICT_SLF = "strict_slf"


class StabilityConclusion(enum.Enum):
    NONE = "none"
    NS = "ns"
    SIP = "sip"
    NAS = "nas"
    ASIP = "asip"


@dataclass
class Grid:
    points: np.ndarray  # (m, n), lexicographically sorted, duplicate-free
    radius: float
    per_axis: int
    shell_radii: tuple
    shell_index: dict  # radius -> indices into points

    @classmethod
    def build(cls, n, radius=2.0, per_axis=21,
              shell_radii=tuple(10.0 ** -k for k in range(1, 7))):
        if per_axis < 2:
            raise ValueError("per_axis must be at least 2")
        axes = np.linspace(-radius, radius, per_axis)
        blocks = [np.array(list(itertools.product(*[axes] * n)))]
        # kink slices: every nonempty subset of coordinates pinned to zero
        for k in range(1, n + 1):
            for subset in itertools.combinations(range(n), k):
                free = [i for i in range(n) if i not in subset]
                if free:
                    sub = np.array(list(itertools.product(*[axes] * len(free))))
                else:
                    sub = np.zeros((1, 0))
                pts = np.zeros((sub.shape[0], n))
                pts[:, free] = sub
                blocks.append(pts)
        # radial shells near the origin
        shells = []
        dirs = _shell_directions(n)
        for r in shell_radii:
            shells.append(r * dirs)
        blocks.extend(shells)
        points = np.unique(np.vstack(blocks), axis=0)
        shell_index = {}
        for r in shell_radii:
            norms = np.linalg.norm(points, axis=1)
            shell_index[r] = np.where(np.abs(norms - r) <= 1e-12 * max(r, 1.0))[0]
        return cls(points=points, radius=radius, per_axis=per_axis,
                   shell_radii=tuple(shell_radii), shell_index=shell_index)

    def describe(self):
        return {
            "n_points": int(self.points.shape[0]),
            "radius": self.radius,
            "per_axis": self.per_axis,
            "shell_radii": list(self.shell_radii),
        }


def _shell_directions(n):
    dirs = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        dirs.extend([e, -e])
    if n >= 2 and n <= 6:
        for signs in itertools.product((1.0, -1.0), repeat=n):
            dirs.append(np.array(signs) / np.sqrt(n))
    return np.array(dirs)


@dataclass
class Counterexample:
    x: np.ndarray
    element: cand.SemijetElement
    margin: float
    analytic: bool = False
    membership_verified: bool = False
    note: str = ""

    def to_jsonable(self):
        return {
            "x": self.x.tolist(),
            "p": self.element.p.tolist(),
            "X": self.element.X.tolist(),
            "margin": self.margin,
            "analytic": self.analytic,
            "membership_verified": self.membership_verified,
            "note": self.note,
        }


@dataclass
class LyapunovVerdict:
    weak_supersolution: bool | None = None
    plain_supersolution: PlainStatus = PlainStatus.UNKNOWN
    classification: Classification = Classification.NOT_VERIFIED
    points: np.ndarray | None = None
    margins: np.ndarray | None = None
    counterexamples: list = field(default_factory=list)
    rate: str | None = None  # rendered l that earned the strict classification
    notes: list = field(default_factory=list)
    grid_meta: dict = field(default_factory=dict)

    @property
    def worst_margin(self):
        return float(np.min(self.margins)) if self.margins is not None else None

    def to_jsonable(self):
        return {
            "weak_supersolution": self.weak_supersolution,
            "plain_supersolution": self.plain_supersolution.value,
            "classification": self.classification.value,
            "worst_margin": self.worst_margin,
            "rate": self.rate,
            "notes": list(self.notes),
            "grid": dict(self.grid_meta),
            "counterexamples": [c.to_jsonable() for c in self.counterexamples],
        }

    def margins_csv(self):
        lines = []
        n = self.points.shape[1]
        lines.append(",".join([f"x{i+1}" for i in range(n)] + ["margin"]))
        for x, m in zip(self.points, self.margins):
            cells = [format(v, ".17g") for v in x] + [format(m, ".17g")]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _rate_values(l, points):
    if l is None:
        return np.zeros(points.shape[0])
    vals = np.array([ex.eval_expr(l, x) for x in points])
    bad = np.where(vals < 0.0)[0]
    if bad.size:
        x = points[bad[0]]
        raise ValueError(
            f"rate function is negative at grid point {x.tolist()}: {vals[bad[0]]}"
        )
    return vals


def check_weak_supersolution(sys: SdeSystem, c: cand.Candidate, l, grid: Grid,
                             tol: float = DEFAULT_TOL) -> LyapunovVerdict:
    """Weak condition: the canonical witness satisfies F >= -tol everywhere."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    rates = _rate_values(l, grid.points)
    margins = np.empty(grid.points.shape[0])
    counterexamples = []
    for idx, x in enumerate(grid.points):
        w = c.witness(x)
        margins[idx] = -apply_generator(sys, x, w.p, w.X).value - rates[idx]
        if margins[idx] < -tol and len(counterexamples) < MAX_RECORDED_COUNTEREXAMPLES:
            counterexamples.append(
                Counterexample(x=x.copy(), element=w, margin=float(margins[idx]),
                               note="canonical witness fails the weak condition")
            )
    ok = bool(np.all(margins >= -tol))
    return LyapunovVerdict(
        weak_supersolution=ok,
        points=grid.points,
        margins=margins,
        counterexamples=counterexamples,
        grid_meta=grid.describe(),
        notes=list(c.notes()),
    )


def _kink_noise_energy(sys, x, kinks):
    """sum_a sigma_{a,k}(x)^2 per kink coordinate k."""
    sigma = sys.diffusion_at(x)
    return {k: float(np.sum(sigma[:, k] ** 2)) for k in kinks}


def check_plain_supersolution(sys: SdeSystem, c: cand.Candidate, l, grid: Grid,
                              tol: float = DEFAULT_TOL) -> LyapunovVerdict:
    """Plain condition: F >= -tol for every semijet element.

    Smooth points are decided by the extreme classical jet (degenerate
    ellipticity makes X = Hess the worst admissible curvature).  Kink
    points run the adversarial curvature ladder; if the ladder tops out
    with nonnegative margins but the noise feeds the kink coordinate, the
    curvature term is unbounded above and the refutation is recorded
    analytically.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    rates = _rate_values(l, grid.points)
    margins = np.empty(grid.points.shape[0])
    counterexamples = []
    seen_signatures = set()
    refuted = False

    def record(x, element, margin, kinks=(), analytic=False, verify=False, note=""):
        # bounded log, but always keep the first example per kink signature
        nonlocal refuted
        refuted = True
        signature = tuple(kinks)
        if (len(counterexamples) >= MAX_RECORDED_COUNTEREXAMPLES
                and signature in seen_signatures):
            return
        seen_signatures.add(signature)
        verified = bool(verify and cand.semijet_membership(c, x, element).ok)
        counterexamples.append(Counterexample(
            x=x.copy(), element=element, margin=float(margin),
            analytic=analytic or (verify and not verified),
            membership_verified=verified, note=note))

    for idx, x in enumerate(grid.points):
        kinks = c.kink_coords(x)
        if not kinks:
            jet = c.jet(x)
            margin = -apply_generator(sys, x, jet.p, jet.X).value - rates[idx]
            margins[idx] = margin
            if margin < -tol:
                record(x, jet, margin, verify=True,
                       note="extreme classical jet violates the condition")
            continue
        witness = c.witness(x)
        witness_margin = (
            -apply_generator(sys, x, witness.p, witness.X).value - rates[idx]
        )
        worst = witness_margin
        refuted_here = False
        for element in c.adversarial_stream(x, witness, kinks):
            margin = -apply_generator(sys, x, element.p, element.X).value - rates[idx]
            worst = min(worst, margin)
            if margin < -tol:
                record(x, element, margin, kinks=kinks, verify=True,
                       note="adversarial kink curvature violates the condition")
                refuted_here = True
                break
        if not refuted_here:
            total = sum(_kink_noise_energy(sys, x, kinks).values())
            if total > 0.0:
                # margin decreases without bound as the kink curvature grows
                t_star = 2.0 * (witness_margin + tol) / total + 1.0
                X = witness.X.copy()
                for k in kinks:
                    X[k, k] = t_star
                element = cand.SemijetElement(
                    witness.p.copy(), X, cand.Provenance.ADVERSARIAL)
                margin = (
                    -apply_generator(sys, x, element.p, element.X).value - rates[idx]
                )
                worst = min(worst, margin)
                record(x, element, margin, kinks=kinks, analytic=True,
                       note="curvature term unbounded above at this kink "
                            f"(noise energy {total:.6g} on kink coordinates)")
        margins[idx] = worst

    status = PlainStatus.REFUTED if refuted else PlainStatus.HOLDS
    return LyapunovVerdict(
        plain_supersolution=status,
        points=grid.points,
        margins=margins,
        counterexamples=counterexamples,
        grid_meta=grid.describe(),
        notes=list(c.notes()),
    )


def _positive_on_shells(l, grid: Grid) -> bool:
    """l must clear a positive bar on every radial shell near the origin."""
    for r in grid.shell_radii:
        idx = grid.shell_index.get(r)
        if idx is None or idx.size == 0:
            continue
        vals = [ex.eval_expr(l, grid.points[i]) for i in idx]
        if min(vals) <= 0.0:
            return False
    return True


def classify(sys: SdeSystem, c: cand.Candidate, l_candidates, grid: Grid,
             tol: float = DEFAULT_TOL) -> LyapunovVerdict:
    """SLF iff weak supersolution with l = 0; strict with a shell-positive l."""
    base = check_weak_supersolution(sys, c, None, grid, tol)
    if not base.weak_supersolution:
        base.classification = Classification.NOT_VERIFIED
        return base
    base.classification = Classification.SLF
    for l in l_candidates or []:
        if not _positive_on_shells(l, grid):
            base.notes.append(
                f"rate {ex.render(l)!r} is not positive on every radial shell")
            continue
        strict = check_weak_supersolution(sys, c, l, grid, tol)
        if strict.weak_supersolution:
            strict.classification = Classification.STRICT_SLF
            strict.rate = ex.render(l)
            strict.notes = base.notes + strict.notes
            return strict
        base.notes.append(
            f"rate {ex.render(l)!r} fails the weak condition on the grid")
    return base


def stability_conclusion(verdict: LyapunovVerdict, origin: OriginClass,
                         fcip: bool) -> StabilityConclusion:
    """Table lookup combining SLF class, origin class and forward completeness."""
    if not fcip or verdict.classification is Classification.NOT_VERIFIED:
        return StabilityConclusion.NONE
    if origin is OriginClass.NOT_EQUILIBRIUM:
        return StabilityConclusion.NONE
    almost_sure = origin is OriginClass.ALMOST_SURE_EQUILIBRIUM
    if verdict.classification is Classification.SLF:
        return StabilityConclusion.SIP if almost_sure else StabilityConclusion.NS
    return StabilityConclusion.ASIP if almost_sure else StabilityConclusion.NAS
