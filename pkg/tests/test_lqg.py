import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from slfcert.candidates import WeightedAbsSum
from slfcert.generator import apply_generator
from slfcert.lqg import (
    LqgProblem,
    RiccatiError,
    RiccatiSolution,
    care_residual,
    certify_nas,
    closed_loop,
    closed_loop_matrix,
    solve_care,
    spectral_transform,
    transformed_system,
    vlq_value,
)
from slfcert.sde_model import OriginClass, classify_origin


def eye_problem(n, G=None):
    I = np.eye(n)
    return LqgProblem(A=np.zeros((n, n)), B=I, Q=I, R=I,
                      G=I if G is None else G)


def random_stabilizable(rng, n):
    A = rng.standard_normal((n, n))
    m = int(rng.integers(1, n + 1))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((n, n))
    D = rng.standard_normal((m, m))
    Q = C @ C.T + np.eye(n)
    R = D @ D.T + np.eye(m)
    G = rng.standard_normal((n, int(rng.integers(1, n + 1))))
    return LqgProblem(A=A, B=B, Q=Q, R=R, G=G)


def commuting_family(rng, n):
    """A symmetric with isotropic B, Q, R: the transformed drift is diagonal."""
    H = rng.standard_normal((n, n))
    U, _ = np.linalg.qr(H)
    A = U @ np.diag(rng.uniform(-2.0, 2.0, n)) @ U.T
    q = float(rng.uniform(0.5, 3.0))
    r = float(rng.uniform(0.5, 3.0))
    beta = float(rng.uniform(0.5, 2.0))
    G = rng.standard_normal((n, int(rng.integers(1, n + 1))))
    return LqgProblem(A=A, B=beta * np.eye(n), Q=q * np.eye(n),
                      R=r * np.eye(n), G=G)


def test_identity_riccati():
    sol = solve_care(eye_problem(2))
    assert np.max(np.abs(sol.P - np.eye(2))) < 1e-10


def test_scalar_riccati_closed_form():
    sol = solve_care(LqgProblem(A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]],
                                G=[[1.0]]))
    assert abs(sol.P[0, 0] - (1.0 + np.sqrt(2.0))) < 1e-10


def test_unstabilizable_raises():
    with pytest.raises(RiccatiError):
        solve_care(LqgProblem(A=[[0.0]], B=[[0.0]], Q=[[1.0]], R=[[1.0]],
                              G=[[0.0]]))


def test_newton_matches_scipy_oracle():
    rng = np.random.default_rng(100)
    for n in (2, 3, 5):
        prob = random_stabilizable(rng, n)
        sol = solve_care(prob)
        P_ref = solve_continuous_are(prob.A, prob.B, prob.Q, prob.R)
        assert np.max(np.abs(sol.P - P_ref)) < 1e-7 * (1 + np.linalg.norm(P_ref))


def test_residual_and_hurwitz_for_random_problems():
    rng = np.random.default_rng(101)
    for _ in range(20):
        n = int(rng.integers(1, 9))
        prob = random_stabilizable(rng, n)
        sol = solve_care(prob)
        assert sol.residual < 1e-8 * (1.0 + np.linalg.norm(sol.P, "fro"))
        assert np.max(np.abs(sol.P - sol.P.T)) < 1e-12
        eigs = np.linalg.eigvals(closed_loop_matrix(prob, sol))
        assert np.max(eigs.real) < 0.0


def test_closed_loop_scalar_drift():
    prob = LqgProblem(A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], G=[[1.0]])
    sol = solve_care(prob)
    sys = closed_loop(prob, sol)
    assert abs(sys.drift_at([1.0])[0] + np.sqrt(2.0)) < 1e-10
    assert classify_origin(sys) is OriginClass.NOISY_EQUILIBRIUM


def test_closed_loop_without_noise_is_almost_sure():
    prob = eye_problem(2, G=np.zeros((2, 1)))
    sol = solve_care(prob)
    assert classify_origin(closed_loop(prob, sol)) \
        is OriginClass.ALMOST_SURE_EQUILIBRIUM


def test_identity_case_closed_loop_is_negative_identity():
    prob = eye_problem(2)
    sol = solve_care(prob)
    sys = closed_loop(prob, sol)
    x = np.array([0.7, -0.3])
    assert np.allclose(sys.drift_at(x), -x, atol=1e-10)


def test_spectral_transform_diagonal():
    st = spectral_transform(RiccatiSolution(P=np.diag([2.0, 3.0]),
                                            residual=0.0, iterations=0))
    assert np.array_equal(st.T, np.eye(2))
    assert np.array_equal(st.pbar, [2.0, 3.0])


def test_spectral_transform_2x2_hand_computed():
    st = spectral_transform(RiccatiSolution(
        P=np.array([[2.0, 1.0], [1.0, 2.0]]), residual=0.0, iterations=0))
    assert np.allclose(st.pbar, [1.0, 3.0], atol=1e-12)
    s = 1.0 / np.sqrt(2.0)
    assert np.allclose(np.abs(st.T), [[s, s], [s, s]], atol=1e-12)
    assert np.allclose(st.T[:, 0], [s, -s], atol=1e-12)
    assert np.allclose(st.T[:, 1], [s, s], atol=1e-12)


def test_spectral_transform_invariants_random_spd():
    rng = np.random.default_rng(102)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        C = rng.standard_normal((n, n))
        P = C @ C.T + 0.1 * np.eye(n)
        st = spectral_transform(RiccatiSolution(P=P, residual=0.0, iterations=0))
        assert np.linalg.norm(st.T.T @ st.T - np.eye(n), "fro") < 1e-10
        assert np.linalg.norm(P @ st.T - st.T @ np.diag(st.pbar), "fro") < 1e-8 * (
            1 + np.linalg.norm(P))
        assert np.all(st.pbar > 0.0)
        assert np.all(np.diff(st.pbar) >= -1e-12)


def test_transformed_system_identity_case():
    prob = eye_problem(2)
    sol = solve_care(prob)
    st = spectral_transform(sol)
    zsys = transformed_system(prob, sol, st)
    x = np.array([0.4, -1.1])
    assert np.allclose(zsys.drift_at(x), -x, atol=1e-9)


def test_transformed_system_matches_direct_multiplication():
    rng = np.random.default_rng(103)
    prob = commuting_family(rng, 2)
    sol = solve_care(prob)
    st = spectral_transform(sol)
    zsys = transformed_system(prob, sol, st)
    Abar = st.T.T @ closed_loop_matrix(prob, sol) @ st.T
    z = np.array([0.9, -0.2])
    assert np.allclose(zsys.drift_at(z), Abar @ z, atol=1e-12)
    Gbar = st.T.T @ prob.G
    sigma = zsys.diffusion_at(z)
    assert np.allclose(sigma.T, Gbar, atol=1e-12)


def test_certify_identity_case():
    cert = certify_nas(eye_problem(2))
    assert cert.nas
    assert abs(cert.min_eig_M - 2.0) < 1e-9
    assert cert.chain_discrepancy < 1e-8
    assert cert.smooth_margin_max < 0.0
    assert cert.kink_margin_min >= 0.0
    # margins on the smooth locus are -(|z1| + |z2|)
    zsys = transformed_system(cert.problem, cert.riccati, cert.transform)
    vbar = WeightedAbsSum(cert.weights)
    z = np.array([0.7, -1.2])
    jet = vbar.jet(z)
    lv = apply_generator(zsys, z, jet.p, jet.X).value
    assert abs(lv + np.sum(np.abs(z))) < 1e-9


def test_certify_scalar_case():
    prob = LqgProblem(A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], G=[[1.0]])
    cert = certify_nas(prob)
    assert cert.nas and cert.chain_discrepancy < 1e-8


def test_certify_noiseless_reports_asip_eligible():
    cert = certify_nas(eye_problem(2, G=np.zeros((2, 1))))
    assert cert.nas and cert.asip_eligible


def test_certify_commuting_family():
    rng = np.random.default_rng(104)
    for n in (2, 3, 4):
        cert = certify_nas(commuting_family(rng, n))
        assert cert.nas, cert.notes
        assert cert.chain_discrepancy < 1e-8


def test_certify_generic_problem_reports_chain_gap():
    rng = np.random.default_rng(105)
    prob = random_stabilizable(rng, 3)
    cert = certify_nas(prob)
    assert cert.chain_discrepancy > 1e-6
    assert not cert.chain_ok
    assert not cert.nas
    assert any("not diagonal" in note for note in cert.notes)


def test_quadratic_value_function_is_not_slf_with_noise():
    # the generator of x^T P x at the origin equals the noise term, which is
    # positive whenever G /= 0
    prob = eye_problem(3)
    cert = certify_nas(prob)
    assert cert.quadratic_generator_at_origin > 0.0
    sol = cert.riccati
    RinvBtP = np.linalg.solve(prob.R, prob.B.T @ sol.P)
    core = prob.Q + sol.P @ prob.B @ RinvBtP
    sys = closed_loop(prob, sol)
    from slfcert.candidates import Quadratic
    v = Quadratic(sol.P)
    for x in (np.zeros(3), 0.05 * np.ones(3)):
        jet = v.jet(x)
        lv = apply_generator(sys, x, jet.p, jet.X).value
        want = -x @ core @ x + cert.quadratic_generator_at_origin
        assert abs(lv - want) < 1e-9
    assert apply_generator(sys, np.zeros(3), v.jet(np.zeros(3)).p,
                           v.jet(np.zeros(3)).X).value > 0.0


def test_fcip_bound_for_quadratic_surrogate():
    rng = np.random.default_rng(106)
    prob = commuting_family(rng, 3)
    cert = certify_nas(prob)
    sol = cert.riccati
    sys = closed_loop(prob, sol)
    from slfcert.candidates import Quadratic
    v = Quadratic(sol.P)
    for x in rng.uniform(-3, 3, size=(100, 3)):
        jet = v.jet(x)
        lv = apply_generator(sys, x, jet.p, jet.X).value
        assert lv <= cert.fcip_c * v.value(x) + cert.fcip_g + 1e-9


def test_vlq_values():
    prob = eye_problem(2)
    sol = solve_care(prob)
    assert abs(vlq_value(sol, [3.0, 4.0]) - 25.0) < 1e-9
    assert vlq_value(sol, [0.0, 0.0]) == 0.0
    scalar = solve_care(LqgProblem(A=[[1.0]], B=[[1.0]], Q=[[1.0]],
                                   R=[[1.0]], G=[[1.0]]))
    assert abs(vlq_value(scalar, [1.0]) - (1.0 + np.sqrt(2.0))) < 1e-10


def test_care_residual_definition():
    prob = eye_problem(2)
    P = np.eye(2)
    assert care_residual(prob, P) < 1e-15
    assert care_residual(prob, 2.0 * P) > 1.0
