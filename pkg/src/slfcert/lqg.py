"""Riccati-based state feedback and its weighted-abs stability certificate.

For dx = (Ax + Bu) dt + sum_k G_k dw_k with u = -R^-1 B^T P x, P solving

    A^T P + P A - P B R^-1 B^T P + Q = 0,

the closed loop has drift A_LQ x with A_LQ = A - B R^-1 B^T P.  The
quadratic value function x^T P x is no Lyapunov function once G /= 0 (its
generator picks up the constant sum_k G_k^T P G_k), but rotating to the
eigenbasis of P and using V(z) = sum_i pbar_i |z_i| gives a candidate
whose generator on the smooth locus is the drift term alone; additive
noise contributes nothing at the zero-curvature witnesses on kink slices.

The certificate checks, on a verification grid: positive definiteness of
M = T^T (Q + P B R^-1 B^T P) T, negativity of the generator of V on the
smooth locus, agreement with the half-power quadratic form
-(1/2) y(z)^T M y(z) where y(z)_i = sgn(z_i) |z_i|^(1/2), witness margins
on the kink slices, and an analytic forward-completeness bound
L(x^T P x) <= 0 * (x^T P x) + sum_k G_k^T P G_k.  The half-power identity
is exact when the transformed drift matrix is diagonal (it is whenever A
is symmetric and B R^-1 B^T and Q are isotropic); the certificate records
the worst discrepancy so a mismatch is visible rather than silent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checker as chk
from .candidates import WeightedAbsSum
from .generator import apply_generator
from .sde_model import OriginClass, SdeSystem, classify_origin, from_matrices

NK_TOL = 1e-10
NK_MAX_ITER = 100
RESIDUAL_BOUND = 1e-8  # relative: residual < RESIDUAL_BOUND * (1 + ||P||_F)
CHAIN_TOL = 1e-8


class RiccatiError(RuntimeError):
    pass


def _spd_check(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.shape[0] != M.shape[1] or np.max(np.abs(M - M.T)) > 1e-10:
        raise ValueError(f"{name} must be square symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return 0.5 * (M + M.T)


@dataclass(eq=False)
class LqgProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray  # n x d, columns are the constant noise directions

    def __init__(self, A, B, Q, R, G):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n:
            raise ValueError("B must have n rows")
        self.Q = _spd_check(Q, "Q")
        self.R = _spd_check(R, "R")
        if self.Q.shape[0] != n:
            raise ValueError("Q must be n x n")
        if self.R.shape[0] != self.B.shape[1]:
            raise ValueError("R must match the input dimension")
        G = np.asarray(G, dtype=float)
        if G.ndim <= 1:
            G = G.reshape(n, -1) if G.size else np.zeros((n, 1))
        if G.shape[0] != n:
            raise ValueError("G must have n rows")
        self.G = G

    @property
    def n(self):
        return self.A.shape[0]

    def to_jsonable(self):
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "Q": self.Q.tolist(),
            "R": self.R.tolist(), "G": self.G.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(A=obj["A"], B=obj["B"], Q=obj["Q"], R=obj["R"], G=obj["G"])


@dataclass
class RiccatiSolution:
    P: np.ndarray
    residual: float
    iterations: int


@dataclass
class SpectralTransform:
    T: np.ndarray  # orthogonal, columns are eigenvectors of P
    pbar: np.ndarray  # ascending positive eigenvalues


def _is_hurwitz(M):
    return bool(np.max(np.linalg.eigvals(M).real) < 0.0)


def _lyap_solve(M, C):
    """Solve M^T P + P M = -C for symmetric P (vectorized dense solve)."""
    n = M.shape[0]
    eye = np.eye(n)
    K = np.kron(M.T, eye) + np.kron(eye, M.T)
    P = np.linalg.solve(K, -C.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


def _bass_gain(A, B):
    """Stabilizing gain via the shifted-Gramian construction.

    The shift is kept close to the spectral abscissa: oversized shifts make
    the Gramian nearly singular and the gain explode.
    """
    n = A.shape[0]
    # the shifted Gramian converges iff beta exceeds -min Re eig(A); keep a
    # healthy margin so no mode decays too slowly
    floor = float(-np.min(np.linalg.eigvals(A).real))
    beta = max(0.0, floor) + 0.5 + 0.1 * float(np.linalg.norm(A, "fro"))
    M = A + beta * np.eye(n)
    eye = np.eye(n)
    K = np.kron(M, eye) + np.kron(eye, M)
    rhs = (2.0 * B @ B.T).reshape(-1)
    try:
        Z = np.linalg.solve(K, rhs).reshape(n, n)
    except np.linalg.LinAlgError:
        return None
    Z = 0.5 * (Z + Z.T)
    try:
        gain = B.T @ np.linalg.inv(Z)
    except np.linalg.LinAlgError:
        gain = B.T @ np.linalg.pinv(Z)
    return gain


def care_residual(prob: LqgProblem, P: np.ndarray) -> float:
    RinvBtP = np.linalg.solve(prob.R, prob.B.T @ P)
    res = prob.A.T @ P + P @ prob.A - P @ prob.B @ RinvBtP + prob.Q
    return float(np.linalg.norm(res, "fro"))


def solve_care(prob: LqgProblem, tol: float = NK_TOL,
               max_iter: int = NK_MAX_ITER) -> RiccatiSolution:
    """Newton iteration on the gain, one dense Lyapunov solve per step."""
    A, B, Q, R = prob.A, prob.B, prob.Q, prob.R
    n, m = A.shape[0], B.shape[1]
    if _is_hurwitz(A):
        K = np.zeros((m, n))
    else:
        K = _bass_gain(A, B)
        if K is None or not _is_hurwitz(A - B @ K):
            raise RiccatiError(
                "no stabilizing initial gain found; (A, B) may be unstabilizable")
    P = None
    residual = np.inf
    previous = np.inf
    stalled = 0
    for it in range(1, max_iter + 1):
        M = A - B @ K
        P = _lyap_solve(M, Q + K.T @ R @ K)
        residual = care_residual(prob, P)
        if residual < tol * (1.0 + np.linalg.norm(P, "fro")):
            break
        stalled = stalled + 1 if residual >= 0.999 * previous else 0
        if stalled >= 3:
            break  # numerical floor; the relative bound below decides
        previous = residual
        K_next = np.linalg.solve(R, B.T @ P)
        if not _is_hurwitz(A - B @ K_next):
            # damped step: ill-conditioned initial gains can make the full
            # Newton update overshoot numerically; shrink toward it instead
            step = K_next - K
            for _ in range(40):
                step = 0.5 * step
                K_next = K + step
                if _is_hurwitz(A - B @ K_next):
                    break
            else:
                raise RiccatiError("Newton step lost stabilizability; diverging")
        K = K_next
    if residual >= RESIDUAL_BOUND * (1.0 + np.linalg.norm(P, "fro")):
        raise RiccatiError(
            f"Riccati iteration did not converge: residual {residual:.3g}")
    closed = A - B @ np.linalg.solve(R, B.T @ P)
    if not _is_hurwitz(closed):
        raise RiccatiError("converged P does not stabilize the closed loop")
    return RiccatiSolution(P=P, residual=residual, iterations=it)


def gain(prob: LqgProblem, sol: RiccatiSolution) -> np.ndarray:
    """Feedback gain K with u = -K x."""
    return np.linalg.solve(prob.R, prob.B.T @ sol.P)


def closed_loop_matrix(prob: LqgProblem, sol: RiccatiSolution) -> np.ndarray:
    return prob.A - prob.B @ gain(prob, sol)


def closed_loop(prob: LqgProblem, sol: RiccatiSolution) -> SdeSystem:
    """The feedback-closed diffusion: drift A_LQ x, constant noise columns."""
    return from_matrices(closed_loop_matrix(prob, sol), prob.G, name="lqg_closed_loop")


def spectral_transform(sol: RiccatiSolution) -> SpectralTransform:
    """Orthogonal eigenbasis of P, ascending eigenvalues, fixed column signs."""
    P = sol.P
    vals, vecs = np.linalg.eigh(P)
    if np.any(vals <= 0.0):
        raise ValueError("P is not positive definite")
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0.0:
            vecs[:, j] = -vecs[:, j]
    T = vecs
    if np.linalg.norm(T.T @ T - np.eye(T.shape[0]), "fro") >= 1e-10:
        raise RuntimeError("eigenvector basis is not orthogonal")
    if np.linalg.norm(P @ T - T @ np.diag(vals), "fro") >= 1e-8 * max(
            1.0, float(np.linalg.norm(P, "fro"))):
        raise RuntimeError("eigendecomposition residual too large")
    return SpectralTransform(T=T, pbar=vals)


def transformed_system(prob: LqgProblem, sol: RiccatiSolution,
                       transform: SpectralTransform) -> SdeSystem:
    """Closed loop in z = T^T x coordinates, where P becomes diagonal."""
    T = transform.T
    diag = T.T @ sol.P @ T
    if np.linalg.norm(diag - np.diag(transform.pbar), "fro") >= 1e-8:
        raise RuntimeError("T^T P T is not the expected diagonal")
    Abar = T.T @ closed_loop_matrix(prob, sol) @ T
    Gbar = T.T @ prob.G
    return from_matrices(Abar, Gbar, name="lqg_transformed")


def vlq_value(sol: RiccatiSolution, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ sol.P @ x)


@dataclass
class LqgCertificate:
    problem: LqgProblem
    riccati: RiccatiSolution
    transform: SpectralTransform
    weights: np.ndarray  # pbar, the weighted-abs candidate coefficients
    M: np.ndarray
    min_eig_M: float
    m_positive_definite: bool
    smooth_margin_max: float  # max of L V over smooth grid points (want < 0)
    smooth_ok: bool
    chain_discrepancy: float  # worst |L V - (-(1/2) y^T M y)| over the grid
    chain_ok: bool
    kink_margin_min: float  # min of -L V at kink-slice witnesses (want >= 0)
    kink_ok: bool
    fcip_c: float
    fcip_g: float
    quadratic_generator_at_origin: float  # L(x^T P x)(0) = sum G_k^T P G_k
    asip_eligible: bool
    nas: bool
    grid_meta: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_jsonable(self):
        return {
            "problem": self.problem.to_jsonable(),
            "P": self.riccati.P.tolist(),
            "riccati_residual": self.riccati.residual,
            "T": self.transform.T.tolist(),
            "pbar": self.weights.tolist(),
            "M": self.M.tolist(),
            "min_eig_M": self.min_eig_M,
            "m_positive_definite": self.m_positive_definite,
            "smooth_margin_max": self.smooth_margin_max,
            "smooth_ok": self.smooth_ok,
            "chain_discrepancy": self.chain_discrepancy,
            "chain_ok": self.chain_ok,
            "kink_margin_min": self.kink_margin_min,
            "kink_ok": self.kink_ok,
            "fcip": {"c": self.fcip_c, "g": self.fcip_g},
            "quadratic_generator_at_origin": self.quadratic_generator_at_origin,
            "asip_eligible": self.asip_eligible,
            "nas": self.nas,
            "grid": dict(self.grid_meta),
            "notes": list(self.notes),
        }


def _default_grid(n):
    per_axis = {1: 21, 2: 13, 3: 9, 4: 7, 5: 5}.get(n, 5)
    return chk.Grid.build(n, radius=2.0, per_axis=per_axis)


def certify_nas(prob: LqgProblem, grid: chk.Grid | None = None,
                chain_tol: float = CHAIN_TOL) -> LqgCertificate:
    """Assemble the weighted-abs certificate for the closed loop."""
    sol = solve_care(prob)
    transform = spectral_transform(sol)
    zsys = transformed_system(prob, sol, transform)
    n = prob.n
    if grid is None:
        grid = _default_grid(n)
    vbar = WeightedAbsSum(transform.pbar)

    RinvBtP = np.linalg.solve(prob.R, prob.B.T @ sol.P)
    core = prob.Q + sol.P @ prob.B @ RinvBtP
    M = transform.T.T @ core @ transform.T
    M = 0.5 * (M + M.T)
    eigs = np.linalg.eigvalsh(M)
    min_eig = float(eigs[0])
    try:
        np.linalg.cholesky(M)
        m_pd = True
    except np.linalg.LinAlgError:
        m_pd = False

    smooth_max = -np.inf
    chain_gap = 0.0
    kink_min = np.inf
    for z in grid.points:
        if vbar.smooth_at(z):
            jet = vbar.jet(z)
            lv = apply_generator(zsys, z, jet.p, jet.X).value
            y = np.sign(z) * np.sqrt(np.abs(z))
            rhs = -0.5 * float(y @ M @ y)
            chain_gap = max(chain_gap, abs(lv - rhs))
            smooth_max = max(smooth_max, lv)
        else:
            w = vbar.witness(z)
            lv = apply_generator(zsys, z, w.p, w.X).value
            kink_min = min(kink_min, -lv)
    smooth_ok = bool(smooth_max < 0.0)
    chain_ok = bool(chain_gap < chain_tol)
    kink_ok = bool(kink_min >= -1e-12)

    # analytic forward-completeness bound for the quadratic x^T P x:
    # L(x^T P x) = -x^T (Q + P B R^-1 B^T P) x + sum_k G_k^T P G_k
    g = float(sum(prob.G[:, k] @ sol.P @ prob.G[:, k]
                  for k in range(prob.G.shape[1])))

    origin = classify_origin(closed_loop(prob, sol))
    asip_eligible = origin is OriginClass.ALMOST_SURE_EQUILIBRIUM

    notes = []
    if not chain_ok:
        notes.append(
            "transformed drift is not diagonal: the half-power quadratic "
            "form differs from the generator; certificate withheld")
    if asip_eligible:
        notes.append("noise matrix is zero: almost sure equilibrium, "
                     "ASiP-eligible under the same evidence")
    nas = bool(m_pd and smooth_ok and chain_ok and kink_ok)
    return LqgCertificate(
        problem=prob, riccati=sol, transform=transform,
        weights=transform.pbar, M=M, min_eig_M=min_eig,
        m_positive_definite=m_pd,
        smooth_margin_max=float(smooth_max), smooth_ok=smooth_ok,
        chain_discrepancy=float(chain_gap), chain_ok=chain_ok,
        kink_margin_min=float(kink_min), kink_ok=kink_ok,
        fcip_c=0.0, fcip_g=g,
        quadratic_generator_at_origin=g,
        asip_eligible=asip_eligible,
        nas=nas,
        grid_meta=grid.describe(),
        notes=notes,
    )
