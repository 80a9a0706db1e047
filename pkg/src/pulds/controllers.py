"""
Certainty-equivalence, cautious and dual feedback synthesis.

All three share one backward recursion. With W+ the uncertainty weight of
the next step,

    T(k)   = Gb' A+ Gb + B + E[dG' W+ dG]
    Ct(k)  = Gb' A+ Fb     + E[dG' W+ dF]
    C(k)   = T^-1 Ct
    A(k|k) = Fb' A+ Fb + E[dF' W+ dF] - C' T C + A_stage
    K(k|k) = D(k)' (Fb' K+ Fb + C' T C) D(k)

CE uses W+ = 0, cautious W+ = A+ + K+, dual adds (lambda(k+1)/L) S(k+1).
A terminal target rho is tracked through an affine value term p(k) on the
mean dynamics, which shifts the control by -T^-1 Gb' p(k+1).

Schedules are indexed relative to the time the solve starts: entry k of a
schedule built at time k0 governs absolute step k0 + k. Leading batch axes
(one per episode) are carried through every array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import InfoStateIrreducible, _sym, _t, predict_irreducible
from .info_metrics import info_accumulate, info_multistep
from .tensor_stats import MomentSet, conjugate4, dual_contract

U_MAX = 1e3
SINGULAR_RTOL = 1e-8
KINDS = ("CE", "cautious", "dual")


@dataclass(frozen=True)
class NominalTrajectory:
    alpha_filt: np.ndarray  # (K+1, ..., N, N)  alpha*(k|k)
    alpha_pred: np.ndarray  # (K+1, ..., N, N)  alpha*(k|k-1); entry 0 is alpha0
    D: np.ndarray           # (K+1, ..., N, N)  D(0) = I


@dataclass(frozen=True)
class GainSchedule:
    kind: str
    C: np.ndarray         # (K, ..., M, N)
    T: np.ndarray         # (K, ..., M, M)
    A: np.ndarray         # (K+1, ..., N, N)  A(k|k)
    K: np.ndarray         # (K+1, ..., N, N)  K(k|k)
    lam: np.ndarray       # (K+1, ...)
    p: np.ndarray         # (K+1, ..., N)     affine value term
    offset: np.ndarray    # (K, ..., M)       -T^-1 Gb' p(k+1)
    c_ref: np.ndarray     # (K+1, ...)        constant of the affine value term
    singular: np.ndarray  # (K, ...) bool
    S: np.ndarray | None = None  # (K+1, ..., N, N) dual information weight

    @property
    def horizon(self):
        return self.C.shape[0]


def _mv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


def nominal_trajectory(model, alpha0, horizon=None, Fbar=None):
    """Exact-parameter Kalman covariance sequence and the gain factors D(k)."""
    K = model.horizon if horizon is None else horizon
    Fbar = model.Fbar if Fbar is None else Fbar
    H, R, Q = model.H, model.R, model.Q
    np.linalg.cholesky(R)
    a = np.asarray(alpha0, dtype=float)
    n = a.shape[-1]
    I = np.broadcast_to(np.eye(n), a.shape)
    filt, pred, D = [a], [a], [I.copy()]
    for _ in range(K):
        ap = _sym(Fbar @ a @ _t(Fbar) + Q)
        S = H @ ap @ _t(H) + R
        gain = _t(np.linalg.solve(S, H @ _t(ap)))
        Dk = np.eye(n) - gain @ H
        a = _sym(Dk @ ap)
        pred.append(ap)
        filt.append(a)
        D.append(Dk)
    return NominalTrajectory(np.array(filt), np.array(pred), np.array(D))


def _flag_singular(T):
    finite = np.all(np.isfinite(T), axis=(-1, -2))
    w = np.linalg.eigvalsh(np.where(finite[..., None, None], T, 0.0))
    norm = np.max(np.abs(w), axis=-1)
    return ~finite | (w[..., 0] <= SINGULAR_RTOL * norm)


def _backward(kind, model, cost, nominal, horizon, xi_of_k, P=1):
    """Shared backward pass.

    xi_of_k(k) returns the MomentSet used at step k in T, Ct and the
    A-recursion alike, so the completed square stays PSD.
    """
    Fb, Gb = model.Fbar, model.Gbar
    H, R = model.H, model.R
    n, m, L = model.n, model.m, model.l
    lead = np.broadcast_shapes(Fb.shape[:-2], Gb.shape[:-2], nominal.alpha_filt.shape[1:-2])
    N = horizon

    A_next = np.broadcast_to(cost.A_terminal, lead + (n, n)).astype(float)
    K_next = np.zeros(lead + (n, n))
    lam_next = np.zeros(lead)
    p_next = -np.broadcast_to(cost.A_terminal @ cost.rho, lead + (n,)).astype(float)
    c_next = np.broadcast_to(0.5 * cost.rho @ cost.A_terminal @ cost.rho, lead).astype(float)

    Cs, Ts, offs, sing = [None] * N, [None] * N, [None] * N, [None] * N
    As, Ks, lams, ps, cs = [None] * (N + 1), [None] * (N + 1), [None] * (N + 1), [None] * (N + 1), [None] * (N + 1)
    Ss = [None] * (N + 1) if kind == "dual" else None
    As[N], Ks[N], lams[N], ps[N], cs[N] = A_next, K_next, lam_next, p_next, c_next
    B = cost.B_stage
    eyeM = np.eye(m)

    with np.errstate(all="ignore"):
        for k in range(N - 1, -1, -1):
            if kind == "CE":
                W = None
            else:
                W = A_next + K_next
                if kind == "dual":
                    ap = nominal.alpha_pred[k + 1]
                    Sinn = H @ ap @ _t(H) + R
                    Sk = _t(H) @ np.linalg.solve(Sinn, np.broadcast_to(H, Sinn.shape[:-2] + H.shape))
                    Ss[k + 1] = Sk
                    W = W + (lam_next / L)[..., None, None] * Sk

            T = _t(Gb) @ A_next @ Gb + B
            Ct = _t(Gb) @ A_next @ Fb
            if W is not None:
                xi = xi_of_k(k)
                Tdot = dual_contract(xi.gamma, W)
                Cdot = dual_contract(conjugate4(xi.nu), W)
                T = T + Tdot
                Ct = Ct + Cdot
            T = _sym(T)
            flag = _flag_singular(T)
            Tsafe = np.where(flag[..., None, None], eyeM, T)
            C = np.linalg.solve(Tsafe, Ct)
            C = np.where(flag[..., None, None], 0.0, C)
            CTC = _sym(_t(C) @ T @ C)
            CTC = np.where(flag[..., None, None], 0.0, CTC)

            A_k = _t(Fb) @ A_next @ Fb - CTC + cost.A_stage
            if W is not None:
                A_k = A_k + dual_contract(xi.beta, W)
            Dk = nominal.D[k]
            if kind == "CE":
                K_k = np.zeros(lead + (n, n))
            else:
                K_k = _sym(_t(Dk) @ (_t(Fb) @ K_next @ Fb + CTC) @ Dk)

            if kind == "dual":
                Cdot_ = np.where(flag[..., None, None], 0.0, Cdot)
                M_ = _t(Cdot_) @ C + _t(C) @ Cdot_ - _t(C) @ Tdot @ C
                lam_k = lam_next - np.trace(M_ @ nominal.alpha_filt[k], axis1=-2, axis2=-1) / (2.0 * P)
            else:
                lam_k = np.zeros(lead)

            Gp = _mv(_t(Gb), p_next)
            off = -np.linalg.solve(Tsafe, Gp[..., None])[..., 0]
            off = np.where(flag[..., None], 0.0, off)
            p_k = _mv(_t(Fb - Gb @ C), p_next)
            c_k = c_next + 0.5 * np.einsum("...i,...i->...", Gp, off)

            Cs[k], Ts[k], offs[k], sing[k] = C, T, off, flag
            As[k], Ks[k], lams[k], ps[k], cs[k] = _sym(A_k), K_k, lam_k, p_k, c_k
            A_next, K_next, lam_next, p_next, c_next = As[k], K_k, lam_k, p_k, c_k

    if kind == "dual":
        Ss[0] = np.zeros(lead + (n, n))
        if N > 0 and Ss[N] is None:
            Ss[N] = np.zeros(lead + (n, n))
    return GainSchedule(
        kind=kind,
        C=np.array(Cs).reshape((N,) + lead + (m, n)),
        T=np.array(Ts).reshape((N,) + lead + (m, m)),
        A=np.array(As),
        K=np.array(Ks),
        lam=np.array(lams),
        p=np.array(ps),
        offset=np.array(offs).reshape((N,) + lead + (m,)),
        c_ref=np.array(cs),
        singular=np.array(sing, dtype=bool).reshape((N,) + lead),
        S=None if Ss is None else np.array(Ss),
    )


def _horizon(cost, horizon):
    return cost.horizon if horizon is None else horizon


def solve_ce(model, cost, horizon=None):
    """LQ gains for the mean system; parameter moments play no role."""
    N = _horizon(cost, horizon)
    n = model.n
    dummy = NominalTrajectory(*(np.broadcast_to(np.eye(n), (N + 1, n, n)),) * 3)
    return _backward("CE", model, cost, dummy, N, None)


def solve_cautious(model, cost, xi_schedule, nominal, horizon=None):
    """Gains for white-noise parameters with moments xi_schedule.

    xi_schedule is a MomentSet (constant over the horizon) or a callable
    k -> MomentSet.
    """
    N = _horizon(cost, horizon)
    xi_of_k = xi_schedule if callable(xi_schedule) else (lambda k: xi_schedule)
    return _backward("cautious", model, cost, nominal, N, xi_of_k)


def solve_dual(model, cost, xi0: MomentSet, info_pred, nominal, horizon=None):
    """Dual gains: cautious recursion plus the lambda(k) S(k) information weight."""
    N = _horizon(cost, horizon)
    if info_pred.I_cum.shape[0] < N:
        raise ValueError(f"information prediction covers {info_pred.I_cum.shape[0]} steps, need {N}")
    # the predicted information enters through lambda(k), whose increments are
    # the derivative of the static cost under exp(-I/P) scaling of xi0
    return _backward("dual", model, cost, nominal, N, lambda k: xi0, P=info_pred.P)


def nominal_controls(gains, model, xbar0):
    """Mean-path controls of a schedule applied from xbar0 on the mean dynamics."""
    x = np.asarray(xbar0, dtype=float)
    us = []
    for k in range(gains.horizon):
        u = -_mv(gains.C[k], x) + gains.offset[k]
        us.append(u)
        x = _mv(model.Fbar, x) + _mv(model.Gbar, u)
    return np.array(us)


def plan_dual(model, cost, xbar0, alpha0, xi0: MomentSet, P, horizon=None, reiterate=False):
    """Dual schedule with information predicted along the CE mean path (optimistic)."""
    from .estimation import InfoStateReducible

    N = _horizon(cost, horizon)
    nominal = nominal_trajectory(model, alpha0, N)
    ce = solve_ce(model, cost, N)
    controls = nominal_controls(ce, model, xbar0)
    state = InfoStateReducible(xbar0, model.Fbar, model.Gbar, alpha0, xi0)
    I_z, logdet = info_multistep(model, state, controls, "optimistic")
    info = info_accumulate(I_z, P, "optimistic", logdet)
    gains = solve_dual(model, cost, xi0, info, nominal, N)
    if reiterate:
        controls = nominal_controls(gains, model, xbar0)
        I_z, logdet = info_multistep(model, state, controls, "optimistic")
        info = info_accumulate(I_z, P, "optimistic", logdet)
        gains = solve_dual(model, cost, xi0, info, nominal, N)
    return gains, info, nominal


def control_at(gains, k, xbar, rng=None, probe_sigma=0.0, u_max=U_MAX, probe=None):
    """Feedback control, or a zero-mean Gaussian probe in singular modes.

    ``probe`` optionally supplies standard-normal draws (shape of u) instead
    of drawing from rng. Returns (u, was_probe).
    """
    xbar = np.asarray(xbar, dtype=float)
    with np.errstate(all="ignore"):
        u = -_mv(gains.C[k], xbar) + gains.offset[k]
    bad = gains.singular[k] | ~np.all(np.isfinite(u), axis=-1) | (np.max(np.abs(np.nan_to_num(u, nan=np.inf)), axis=-1) > u_max)
    bad = np.broadcast_to(bad, u.shape[:-1])
    if np.any(bad):
        if probe is None:
            probe = rng.standard_normal(u.shape)
        u = np.where(bad[..., None], probe_sigma * probe, u)
    return u, bad


def average_cost(gains, model, cost, alpha0, xbar0, nominal, include_reference=False):
    """Predicted mean of the quadratic cost under the schedule.

    0.5 [x0' A(0|1) x0 + tr A(0|0) a0 + sum_i (tr A(i+1|i+1) Q + tr C'TC a*(i|i))]
    with A(0|1) = A(0|0) - A_stage. With include_reference the affine tracking
    terms p(0)' x0 + c(0) are added.
    """
    xbar0 = np.asarray(xbar0, dtype=float)
    alpha0 = np.asarray(alpha0, dtype=float)
    A01 = gains.A[0] - cost.A_stage
    J = xbar0 @ A01 @ xbar0 + np.trace(gains.A[0] @ alpha0)
    for i in range(gains.horizon):
        CTC = gains.C[i].T @ gains.T[i] @ gains.C[i]
        J += np.trace(gains.A[i + 1] @ model.Q) + np.trace(CTC @ nominal.alpha_filt[i])
    J = 0.5 * J
    if include_reference:
        J += gains.p[0] @ xbar0 + gains.c_ref[0]
    return float(J)
