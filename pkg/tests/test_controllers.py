import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import kalman, random_psd
from pulds.controllers import (
    GainSchedule,
    NominalTrajectory,
    average_cost,
    control_at,
    nominal_controls,
    nominal_trajectory,
    plan_dual,
    solve_cautious,
    solve_ce,
    solve_dual,
)
from pulds.info_metrics import info_accumulate
from pulds.lds_model import CostSpec, LdsModel, build_scenario, make_rng
from pulds.tensor_stats import MomentSet, conjugate4, dual_contract


def scalar(F=1.0, G=1.0, B=1.0, A_N=1.0, Q=0.0, R=1.0, N=1):
    model = LdsModel(np.array([[F]]), np.array([[G]]), np.array([[1.0]]), np.array([[Q]]), np.array([[R]]), N)
    cost = CostSpec(np.array([[A_N]]), np.zeros((1, 1)), np.array([[B]]), np.zeros(1), np.ones(1), N)
    return model, cost


def unit_nominal(N, n=1):
    eye = np.broadcast_to(np.eye(n), (N + 1, n, n))
    return NominalTrajectory(eye, eye, eye)


def bench(name="soft_landing"):
    sc = build_scenario(name)
    nominal = nominal_trajectory(sc.model, sc.prior.x0_cov)
    return sc, nominal


def dual_for(sc, nominal):
    gains, info, _ = plan_dual(sc.model, sc.cost, sc.prior.x0_mean, sc.prior.x0_cov, sc.moments, sc.prior.P)
    return gains, info


# nominal trajectory -------------------------------------------------------------


def test_nominal_trajectory_hand_value_and_blind_sensor():
    model, _ = scalar(F=0.5, Q=0.1)
    nom = nominal_trajectory(model, np.array([[1.0]]), 1)
    assert nom.alpha_pred[1, 0, 0] == pytest.approx(0.35)
    assert nom.D[1, 0, 0] == pytest.approx(1 - 0.35 / 1.35)
    assert nom.D[1, 0, 0] == pytest.approx(0.740741, abs=1e-6)
    blind, _ = scalar(F=0.5, Q=0.1, R=1e12)
    assert nominal_trajectory(blind, np.array([[1.0]]), 3).D[1:, 0, 0] == pytest.approx(1.0, abs=1e-9)


def test_nominal_trajectory_matches_kalman_filter():
    sc, nom = bench()
    m = sc.model
    P = sc.prior.x0_cov
    for k in range(25):
        _, Pp, _, P = kalman(m.Fbar, m.Gbar, m.H, m.Q, m.R, np.zeros(3), P, np.zeros(1), np.zeros(1))
        np.testing.assert_allclose(nom.alpha_pred[k + 1], Pp, atol=1e-10, rtol=0)
        np.testing.assert_allclose(nom.alpha_filt[k + 1], P, atol=1e-10, rtol=0)


# hand-evaluated gains -----------------------------------------------------------------


def test_ce_scalar_hand_values():
    model, cost = scalar(B=0.0)
    assert solve_ce(model, cost).C[0, 0, 0] == pytest.approx(1.0)
    model, cost = scalar(B=1.0)
    g = solve_ce(model, cost)
    assert g.T[0, 0, 0] == pytest.approx(2.0)
    assert g.C[0, 0, 0] == pytest.approx(0.5)


def test_cautious_scalar_terminal_step():
    model, cost = scalar(B=0.0)
    xi = MomentSet(np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
    g = solve_cautious(model, cost, xi, unit_nominal(1))
    assert g.T[0, 0, 0] == pytest.approx(2.0)
    assert g.C[0, 0, 0] == pytest.approx(0.5)
    assert g.K[0, 0, 0] == pytest.approx(0.5)  # D = 1, so K(N-1|N-1) = C'TC
    assert g.K[1, 0, 0] == 0.0


def test_control_at_cases():
    g = GainSchedule("CE", C=np.array([[[0.5]]]), T=np.ones((1, 1, 1)), A=np.ones((2, 1, 1)),
                     K=np.zeros((2, 1, 1)), lam=np.zeros(2), p=np.zeros((2, 1)), offset=np.zeros((1, 1)),
                     c_ref=np.zeros(2), singular=np.array([False]))
    u, bad = control_at(g, 0, np.array([2.0]))
    assert u[0] == -1.0 and not bad
    u, bad = control_at(g, 0, np.array([0.0]))
    assert u[0] == 0.0
    sing = GainSchedule(**{**g.__dict__, "singular": np.array([True])})
    u, bad = control_at(sing, 0, np.zeros((200_000, 1)), make_rng(1), probe_sigma=40.0)
    assert bad.all()
    assert abs(u.std() - 40.0) <= 5 * 40.0 / np.sqrt(2 * u.size)
    assert abs(u.mean()) <= 5 * 40.0 / np.sqrt(u.size)
    # oversized feedback is treated like a singular mode
    u, bad = control_at(g, 0, np.array([1e5]), probe_sigma=0.0, probe=np.zeros(1))
    assert bad and u[0] == 0.0


def test_average_cost_hand_values():
    model, cost = scalar(F=1.0, G=1.0, B=1.0, Q=0.1)
    g = solve_ce(model, cost)
    nom = nominal_trajectory(model, np.array([[1.0]]), 1)
    # x0 ~ N(2, 1), u = -x0bar / 2: E[x1^2 + u^2] / 2 = ((2-1)^2 + 1 + 0.1 + 1) / 2
    assert average_cost(g, model, cost, np.array([[1.0]]), np.array([2.0]), nom) == pytest.approx(1.55)
    zm, zc = scalar(F=0.0, G=0.0, B=1.0, A_N=0.0)
    gz = solve_ce(zm, zc)
    assert average_cost(gz, zm, zc, np.zeros((1, 1)), np.zeros(1), nominal_trajectory(zm, np.zeros((1, 1)), 1)) == 0


# structural properties ----------------------------------------------------------------


@pytest.mark.parametrize("name", ["interception", "soft_landing"])
def test_zero_uncertainty_collapse(name):
    sc, nom = bench(name)
    zero = MomentSet.zeros(3, 1, cross=False)
    ce = solve_ce(sc.model, sc.cost)
    ca = solve_cautious(sc.model, sc.cost, zero, nom)
    info = info_accumulate(np.zeros(25), sc.prior.P)
    du = solve_dual(sc.model, sc.cost, zero, info, nom)
    for g in (ca, du):
        np.testing.assert_allclose(g.C, ce.C, atol=1e-10, rtol=0)
        np.testing.assert_allclose(g.T, ce.T, atol=1e-10, rtol=0)
        np.testing.assert_allclose(g.offset, ce.offset, atol=1e-10, rtol=0)
    assert not du.lam.any()


def test_terminal_dual_step_equals_cautious():
    sc, nom = bench()
    du, _ = dual_for(sc, nom)
    ca = solve_cautious(sc.model, sc.cost, sc.moments, nom)
    assert du.lam[-1] == 0.0
    np.testing.assert_allclose(du.C[-1], ca.C[-1], atol=1e-12)
    np.testing.assert_allclose(du.T[-1], ca.T[-1], atol=1e-12)


@pytest.mark.parametrize("kind", ["CE", "cautious", "dual"])
def test_schedule_invariants(kind):
    sc, nom = bench()
    if kind == "CE":
        g = solve_ce(sc.model, sc.cost)
    elif kind == "cautious":
        g = solve_cautious(sc.model, sc.cost, sc.moments, nom)
    else:
        g, _ = dual_for(sc, nom)
    assert not g.K[-1].any()
    for k in range(25):
        np.testing.assert_allclose(g.T[k], g.T[k].T, atol=0)
        assert np.linalg.eigvalsh(g.K[k]).min() >= -1e-9 * max(1.0, np.trace(g.K[k]))
    assert np.all(np.isfinite(g.lam))


def test_cautious_precaution_on_benchmark():
    sc, nom = bench()
    ce = solve_ce(sc.model, sc.cost)
    ca = solve_cautious(sc.model, sc.cost, sc.moments, nom)
    # at the terminal step both see the same A(N|N); the precaution term can only add
    assert np.linalg.norm(ca.T[-1]) >= np.linalg.norm(ce.T[-1])
    assert np.all(ca.T[:, 0, 0] > 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 4), m=st.integers(1, 2))
def test_psd_increment_never_lowers_min_eigenvalue(seed, n, m):
    rng = make_rng(seed)
    d = n * m
    gamma = random_psd(d, rng).reshape(n, m, n, m)
    base = random_psd(m, rng) + dual_contract(gamma, random_psd(n, rng))
    T0 = base
    T1 = base + dual_contract(gamma, random_psd(n, rng, rank=1))
    assert np.linalg.eigvalsh(T1).min() >= np.linalg.eigvalsh(T0).min() - 1e-12


# lambda finite-difference oracle ----------------------------------------------------------------


def static_term(s, Gb, Fb, A1, B, Tdot, Cdot, alpha):
    T = Gb.T @ A1 @ Gb + B + s * Tdot
    Ct = Gb.T @ A1 @ Fb + s * Cdot
    C = np.linalg.solve(T, Ct)
    return 0.5 * np.trace(C.T @ T @ C @ alpha)


def lambda_increments_by_differences(sc, g, nom, xi, P, h=1e-4):
    """(lambda(k) - lambda(k+1)) as d/dI of the static cost with xi scaled by exp(-I/P)."""
    m = sc.model
    out = []
    for k in range(g.horizon):
        W = g.A[k + 1] + g.K[k + 1] + g.lam[k + 1] / m.l * g.S[k + 1]
        Tdot = dual_contract(xi.gamma, W)
        Cdot = dual_contract(conjugate4(xi.nu), W)
        f = lambda I: static_term(np.exp(-I / P), m.Gbar, m.Fbar, g.A[k + 1], sc.cost.B_stage, Tdot, Cdot,
                                  nom.alpha_filt[k])
        out.append((f(h) - f(-h)) / (2 * h))
    return np.array(out)


@pytest.mark.parametrize("name", ["interception", "soft_landing"])
def test_lambda_matches_finite_differences(name):
    sc, nom = bench(name)
    g, _ = dual_for(sc, nom)
    fd = lambda_increments_by_differences(sc, g, nom, sc.moments, sc.prior.P)
    inc = g.lam[:-1] - g.lam[1:]
    np.testing.assert_allclose(inc, fd, rtol=1e-3, atol=1e-12)
    assert np.any(np.abs(inc) > 1e-6)


def test_lambda_oracle_with_cross_coupling():
    # a learned-looking prior with nu != 0 exercises the C-dot terms
    sc, nom = bench()
    rng = make_rng(7)
    P = np.zeros((12, 12))
    idx = [6, 7, 8, 9, 10, 11]
    P[np.ix_(idx, idx)] = random_psd(6, rng, scale=0.05)
    from pulds.tensor_stats import unpack_moments

    xi = unpack_moments(P, 3, 1)
    assert np.abs(xi.nu).max() > 0
    g, _, _ = plan_dual(sc.model, sc.cost, np.array([1.0, -1.0, 2.0]), sc.prior.x0_cov, xi, 6)
    fd = lambda_increments_by_differences(sc, g, nom, xi, 6)
    np.testing.assert_allclose(g.lam[:-1] - g.lam[1:], fd, rtol=1e-3, atol=1e-12)


def test_plan_dual_uses_ce_mean_path_and_is_batched():
    sc, nom = bench()
    g, info, _ = plan_dual(sc.model, sc.cost, sc.prior.x0_mean, sc.prior.x0_cov, sc.moments, 6)
    assert info.I_z.shape == (25,) and np.all(info.I_z >= 0)
    ce = solve_ce(sc.model, sc.cost)
    assert nominal_controls(ce, sc.model, sc.prior.x0_mean).shape == (25, 1)
    # two identical episodes stacked along a batch axis give the same schedule
    B = 2
    st = lambda a: np.broadcast_to(a, (B,) + np.shape(a)).copy()
    ms = sc.moments
    gb, _, _ = plan_dual(sc.model.with_params(st(sc.model.Fbar), st(sc.model.Gbar)), sc.cost,
                         st(sc.prior.x0_mean), st(sc.prior.x0_cov),
                         MomentSet(st(ms.beta), st(ms.gamma), st(ms.nu)), 6)
    np.testing.assert_allclose(gb.C[:, 0], g.C, atol=1e-10)
    np.testing.assert_allclose(gb.lam[:, 1], g.lam, atol=1e-10)
