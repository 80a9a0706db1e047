import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import assemble, cov_se, disassemble, mean_se, random_joint, random_psd, within
from pulds.lds_model import BENCH_PLACEMENTS, THETA_MEAN, THETA_VAR, PriorSpec, make_rng, prior_to_moments
from pulds.tensor_stats import (
    DimensionError,
    MomentSet,
    bilinear_contract,
    conjugate4,
    cross_vec_contract,
    dual_contract,
    gram3_perm,
    joint_covariance,
    pack4,
    pack_moments,
    pack_psd_check,
    quad_contract,
    sample_joint,
    split_joint,
    trace_pair,
    unpack4,
    unpack_moments,
)

DRAWS = 1_000_000


def bench_prior():
    return PriorSpec(
        theta_mean=np.array(THETA_MEAN), theta_var=np.array(THETA_VAR), placements=BENCH_PLACEMENTS,
        x0_mean=np.zeros(3), x0_cov=10 * np.eye(3), theta_true=np.array(THETA_MEAN),
    )


def random_moments(n, m, rng, scale=0.05, cross=True):
    d = n * n + n * m
    ms = unpack_moments(random_psd(d, rng, scale=scale), n, m)
    if cross:
        ms = ms.with_cross(0.1 * rng.standard_normal((n, n, n)), 0.1 * rng.standard_normal((n, m, n)))
    return ms


# hand values ---------------------------------------------------------------


def test_scalar_contractions():
    one = lambda v: np.full((1, 1, 1, 1), v)
    assert quad_contract(one(0.04), [[5.0]])[0, 0] == pytest.approx(0.2)
    assert dual_contract(one(0.04), [[2.0]])[0, 0] == pytest.approx(0.08)
    assert bilinear_contract(one(0.02), [2.0], [3.0])[0, 0] == pytest.approx(0.12)
    assert cross_vec_contract(np.full((1, 1, 1), 0.1), [2.0])[0, 0] == pytest.approx(0.2)
    assert trace_pair(np.full((1, 1, 1), 0.1))[0] == pytest.approx(0.1)
    assert gram3_perm(np.full((1, 1, 1), 0.1), np.full((1, 1, 1), 0.1))[0, 0] == pytest.approx(0.01)


def test_zero_tensors_give_zero():
    z4 = np.zeros((2, 2, 2, 2))
    z3 = np.zeros((2, 2, 2))
    assert not quad_contract(z4, np.eye(2)).any()
    assert not dual_contract(z4, np.eye(2)).any()
    assert not bilinear_contract(z4, [1, 2], [3, 4]).any()
    assert not cross_vec_contract(z3, [1, 2]).any()
    assert not trace_pair(z3).any()
    assert not gram3_perm(z3, z3).any()


def test_trace_pair_two_terms():
    phi = np.zeros((2, 2, 2))
    phi[0, 0, 0] = 0.1
    phi[0, 1, 1] = 0.2
    np.testing.assert_allclose(trace_pair(phi), [0.3, 0.0])


def test_dimension_errors():
    with pytest.raises(DimensionError):
        quad_contract(np.zeros((2, 2, 2, 2)), np.eye(3))
    with pytest.raises(DimensionError):
        dual_contract(np.zeros((2, 1, 2, 1)), np.eye(3))
    with pytest.raises(DimensionError):
        bilinear_contract(np.zeros((2, 2, 2, 1)), [1, 2], [1, 2])
    with pytest.raises(DimensionError):
        trace_pair(np.zeros((2, 2, 3)))
    with pytest.raises(DimensionError):
        gram3_perm(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)))


def test_contractions_broadcast_over_batch():
    rng = make_rng(3)
    T = rng.standard_normal((4, 2, 3, 2, 3))
    W = rng.standard_normal((4, 3, 3))
    out = quad_contract(T, W)
    for b in range(4):
        np.testing.assert_allclose(out[b], quad_contract(T[b], W[b]))


# sampling oracles -----------------------------------------------------------


def test_quad_contract_matches_sampled_dF_dFT():
    rng = make_rng(11)
    _, _, ms = prior_to_moments(bench_prior(), 3, 1)
    beta2 = ms.beta[1:, 1:, 1:, 1:]  # 2-state slice of the benchmark pattern
    Fbar = np.zeros((2, 2))
    F, _, _ = sample_joint(np.zeros(2), Fbar, np.zeros((2, 1)), np.zeros((2, 2)),
                           MomentSet(beta2, np.zeros((2, 1, 2, 1)), np.zeros((2, 2, 2, 1))), DRAWS, rng)
    prod = np.einsum("bip,bjp->bij", F, F)
    est, se = mean_se(prod)
    assert within(quad_contract(beta2, np.eye(2)), est, se)


def test_dual_contract_matches_sampled_dGT_dG():
    rng = make_rng(12)
    gamma = np.zeros((2, 1, 2, 1))
    gamma[0, 0, 0, 0], gamma[1, 0, 1, 0], gamma[0, 0, 1, 0] = 0.04, 0.09, 0.01
    gamma[1, 0, 0, 0] = 0.01
    ms = MomentSet(np.zeros((2, 2, 2, 2)), gamma, np.zeros((2, 2, 2, 1)))
    _, G, _ = sample_joint(np.zeros(2), np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 2)), ms, DRAWS, rng)
    est, se = mean_se(np.einsum("bip,biq->bpq", G, G))
    assert within(dual_contract(gamma, np.eye(2)), est, se)


def test_bilinear_matches_sampled_cross_covariance():
    rng = make_rng(13)
    ms = random_moments(3, 1, rng, cross=False)
    xbar, u = np.array([1.0, -2.0, 0.5]), np.array([3.0])
    F, G, _ = sample_joint(np.zeros(3), np.zeros((3, 3)), np.zeros((3, 1)), np.zeros((3, 3)), ms, DRAWS, rng)
    a = np.einsum("bij,j->bi", F, xbar)
    b = np.einsum("bij,j->bi", G, u)
    est, se = cov_se(a, b)
    assert within(bilinear_contract(ms.nu, xbar, u), est, se)


def test_cross_vec_matches_sampled_covariance():
    rng = make_rng(14)
    J = random_joint(2, 1, rng)
    alpha, beta, gamma, nu, phi, psi = disassemble(J, 2, 1)
    ms = MomentSet(beta, gamma, nu, phi, psi)
    v = np.array([0.7, -1.3])
    F, _, x = sample_joint(np.zeros(2), np.zeros((2, 2)), np.zeros((2, 1)), alpha, ms, DRAWS, rng)
    est, se = cov_se(np.einsum("bip,p->bi", F, v), x)
    assert within(cross_vec_contract(phi, v), est, se)


def test_gram3_is_the_isserlis_pairing():
    # Var(dF dx) against sampling, asymmetric phi
    rng = make_rng(15)
    J = random_joint(2, 1, rng, scale_p=0.2)
    alpha, beta, gamma, nu, phi, psi = disassemble(J, 2, 1)
    assert not np.allclose(phi, np.swapaxes(phi, 1, 2))
    ms = MomentSet(beta, gamma, nu, phi, psi)
    F, _, x = sample_joint(np.zeros(2), np.zeros((2, 2)), np.zeros((2, 1)), alpha, ms, DRAWS, rng)
    y = np.einsum("bij,bj->bi", F, x)
    est, se = cov_se(y, y)
    ref = quad_contract(beta, alpha) + gram3_perm(phi, phi)
    assert within(ref, est, se)
    wrong = quad_contract(beta, alpha) + np.einsum("ipq,jpq->ij", phi, phi)
    assert not within(wrong, est, se)


def test_sample_joint_benchmark_variances():
    rng = make_rng(16)
    Fbar, Gbar, ms = prior_to_moments(bench_prior(), 3, 1)
    F, G, x = sample_joint(np.zeros(3), Fbar, Gbar, 10 * np.eye(3), ms, 200_000, rng)
    theta = np.c_[F[:, 2, :], G[:, :, 0]]
    var = theta.var(axis=0, ddof=1)
    tv = np.array(THETA_VAR)
    se = tv * np.sqrt(2.0 / theta.shape[0])
    assert np.all(np.abs(var - tv) <= 5 * se)
    np.testing.assert_array_equal(F[:, :2, :], np.broadcast_to(Fbar[:2], (F.shape[0], 2, 3)))


def test_sample_joint_scalar_variance_bound():
    rng = make_rng(17)
    ms = MomentSet(np.full((1, 1, 1, 1), 0.04), np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
    count = 100_000
    F, _, _ = sample_joint([0.0], [[0.0]], [[0.0]], [[0.0]], ms, count, rng)
    assert abs(F.var(ddof=1) - 0.04) <= 5 * np.sqrt(2 * 0.04**2 / count)


def test_sample_joint_degenerate_and_deterministic():
    ms = MomentSet.zeros(2, 1)
    F, G, x = sample_joint([1.0, 2.0], np.eye(2), np.ones((2, 1)), np.zeros((2, 2)), ms, 5, make_rng(0))
    np.testing.assert_array_equal(x, np.tile([1.0, 2.0], (5, 1)))
    np.testing.assert_array_equal(F, np.tile(np.eye(2), (5, 1, 1)))
    rng_ms = random_moments(2, 1, make_rng(1), cross=False)
    a = sample_joint(np.zeros(2), np.eye(2), np.ones((2, 1)), np.eye(2), rng_ms, 10, make_rng(9))
    b = sample_joint(np.zeros(2), np.eye(2), np.ones((2, 1)), np.eye(2), rng_ms, 10, make_rng(9))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


# PSD and packing -------------------------------------------------------------


def test_pack_psd_check_cases():
    assert pack_psd_check(unpack4(np.diag([1.0, 2.0, 3.0, 4.0]), (2, 2, 2, 2)))[0]
    bad = np.diag([1.0, -1.0, 1.0, 1.0])
    ok, lo = pack_psd_check(unpack4(bad, (2, 2, 2, 2)))
    assert not ok and lo == pytest.approx(-1.0)
    _, _, ms = prior_to_moments(bench_prior(), 3, 1)
    ok, lo = pack_psd_check(ms)
    assert ok and lo == pytest.approx(0.0, abs=1e-15)
    assert pack_psd_check("not a tensor") == (False, pytest.approx(np.nan, nan_ok=True))


def test_benchmark_packed_prior_is_diagonal():
    _, _, ms = prior_to_moments(bench_prior(), 3, 1)
    P = pack_moments(ms)
    assert P.shape == (12, 12)
    assert np.count_nonzero(P - np.diag(np.diag(P))) == 0
    np.testing.assert_allclose(np.sort(np.diag(P)[np.diag(P) > 0]), np.sort(THETA_VAR))


def test_conjugate4_swaps_pairs():
    rng = make_rng(2)
    nu = rng.standard_normal((3, 3, 3, 1))
    c = conjugate4(nu)
    assert c.shape == (3, 1, 3, 3)
    assert c[0, 0, 1, 2] == nu[1, 2, 0, 0]


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 4), m=st.integers(1, 2), seed=st.integers(0, 10_000))
def test_pack_round_trips_exactly(n, m, seed):
    rng = make_rng(seed)
    ms = random_moments(n, m, rng)
    back = unpack_moments(pack_moments(ms), n, m)
    for a, b in zip((ms.beta, ms.gamma, ms.nu), (back.beta, back.gamma, back.nu)):
        np.testing.assert_array_equal(a, b)
    alpha = random_psd(n, rng)
    a2, ms2 = split_joint(joint_covariance(alpha, ms), n, m)
    np.testing.assert_array_equal(a2, alpha)
    np.testing.assert_array_equal(ms2.phi, ms.phi)
    np.testing.assert_array_equal(ms2.psi, ms.psi)
    np.testing.assert_array_equal(pack4(unpack4(pack4(ms.beta), (n, n, n, n))), pack4(ms.beta))


@settings(max_examples=10, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_quad_contract_is_psd_for_psd_inputs(n, seed):
    rng = make_rng(seed)
    beta = random_moments(n, 1, rng, cross=False).beta
    W = random_psd(n, rng)
    out = quad_contract(beta, W)
    np.testing.assert_allclose(out, out.T, atol=1e-14)
    assert np.linalg.eigvalsh(out).min() >= -1e-12 * max(np.trace(out), 1.0)


def test_joint_layout_matches_loop_assembly():
    rng = make_rng(21)
    J = random_joint(3, 2, rng)
    alpha, beta, gamma, nu, phi, psi = disassemble(J, 3, 2)
    np.testing.assert_array_equal(joint_covariance(alpha, MomentSet(beta, gamma, nu, phi, psi)), J)
    np.testing.assert_array_equal(assemble(alpha, beta, gamma, nu, phi, psi), J)
