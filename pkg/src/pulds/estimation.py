"""
Prediction and measurement update of Gaussian information states.

Irreducible uncertainty keeps only (xbar, alpha) and treats the parameter
moments as white noise around fixed means. Reducible uncertainty carries the
full joint Gaussian of (x, F, G): parameters persist between steps and are
learned through their cross moments with the state.

The autonomous case is u = 0; there is no separate code path for it. All
functions broadcast over leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_stats import (
    MomentSet,
    NotPSDError,
    bilinear_contract,
    cross_vec_contract,
    gram3_perm,
    joint_covariance,
    psd_report,
    quad_contract,
    trace_pair,
)


class SingularInnovationError(np.linalg.LinAlgError):
    pass


def _t(a):
    return np.swapaxes(a, -1, -2)


def _sym(a):
    return 0.5 * (a + _t(a))


def _mv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


@dataclass(frozen=True)
class InfoStateIrreducible:
    xbar: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True)
class InfoStateReducible:
    xbar: np.ndarray
    Fbar: np.ndarray
    Gbar: np.ndarray
    alpha: np.ndarray
    moments: MomentSet

    @property
    def irreducible(self):
        return InfoStateIrreducible(self.xbar, self.alpha)

    def joint_covariance(self):
        return joint_covariance(self.alpha, self.moments)

    def is_psd(self):
        return psd_report(self.joint_covariance())[0]


def _check_alpha(alpha):
    if alpha.ndim == 2:
        ok, lo = psd_report(alpha)
        if not ok:
            raise NotPSDError(f"state covariance is not PSD (min eigenvalue {lo:.3e})")


def _innovation(alpha, H, R):
    S = H @ alpha @ _t(H) + R
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("innovation covariance H alpha H^T + R is not positive definite") from exc
    return S


def _uncertainty_growth(ms, xbar, alpha, u):
    """Var(dF xbar + dG u + dF dx) excluding the phi pairing; plus the nu cross term."""
    W = alpha + xbar[..., :, None] * xbar[..., None, :]
    A = bilinear_contract(ms.nu, xbar, u)
    return quad_contract(ms.beta, W) + quad_contract(ms.gamma, u[..., :, None] * u[..., None, :]) + A + _t(A)


def predict_irreducible(P: InfoStateIrreducible, Xi: MomentSet, u, model, Fbar=None, Gbar=None):
    """One-step prediction with white-noise parameters around (Fbar, Gbar)."""
    Fbar = model.Fbar if Fbar is None else Fbar
    Gbar = model.Gbar if Gbar is None else Gbar
    xbar = np.asarray(P.xbar, dtype=float)
    alpha = np.asarray(P.alpha, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), xbar.shape[:-1] + (Gbar.shape[-1],))
    _check_alpha(alpha)
    x_new = _mv(Fbar, xbar) + _mv(Gbar, u)
    a_new = Fbar @ alpha @ _t(Fbar) + model.Q + _uncertainty_growth(Xi, xbar, alpha, u)
    return InfoStateIrreducible(x_new, _sym(a_new))


def predict_reducible(P: InfoStateReducible, u, model):
    """Exact first/second moment propagation of x+ = F x + G u + w."""
    ms = P.moments
    Fbar, Gbar = P.Fbar, P.Gbar
    xbar = np.asarray(P.xbar, dtype=float)
    alpha = np.asarray(P.alpha, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), xbar.shape[:-1] + (Gbar.shape[-1],))
    _check_alpha(alpha)
    phi, psi = ms.phi, ms.psi

    x_new = _mv(Fbar, xbar) + _mv(Gbar, u) + trace_pair(phi)

    # Cov(Fbar dx, dF xbar + dG u) as an N x N block
    A = bilinear_contract(ms.nu, xbar, u)
    A = A + Fbar @ _t(cross_vec_contract(phi, xbar)) + Fbar @ _t(cross_vec_contract(psi, u))
    W = alpha + xbar[..., :, None] * xbar[..., None, :]
    a_new = (
        Fbar @ alpha @ _t(Fbar)
        + model.Q
        + A
        + _t(A)
        + quad_contract(ms.beta, W)
        + quad_contract(ms.gamma, u[..., :, None] * u[..., None, :])
        + gram3_perm(phi, phi)
    )

    phi_new = (
        np.einsum("...ipl,...kl->...ipk", phi, Fbar)
        + np.einsum("...ipkl,...l->...ipk", ms.beta, xbar)
        + np.einsum("...ipkl,...l->...ipk", ms.nu, u)
    )
    # Cov(G[i,p], F[k,l]) = nu[k,l,i,p]
    psi_new = (
        np.einsum("...ipl,...kl->...ipk", psi, Fbar)
        + np.einsum("...klip,...l->...ipk", ms.nu, xbar)
        + np.einsum("...ipkl,...l->...ipk", ms.gamma, u)
    )
    new_ms = MomentSet(ms.beta, ms.gamma, ms.nu, phi_new, psi_new)
    return InfoStateReducible(x_new, Fbar, Gbar, _sym(a_new), new_ms)


def update_irreducible(P_pred: InfoStateIrreducible, z, model):
    """Kalman-form conditioning of the state on z = H x + v."""
    H, R = model.H, model.R
    alpha = np.asarray(P_pred.alpha, dtype=float)
    xbar = np.asarray(P_pred.xbar, dtype=float)
    S = _innovation(alpha, H, R)
    AHt = alpha @ _t(H)
    gain = _t(np.linalg.solve(S, _t(AHt)))
    e = np.asarray(z, dtype=float) - _mv(H, xbar)
    x_new = xbar + _mv(gain, e)
    a_new = alpha - gain @ _t(AHt)
    return InfoStateIrreducible(x_new, _sym(a_new))


def update_reducible(P_pred: InfoStateReducible, z, model):
    """Condition the joint Gaussian of (x, F, G) on z = H x + v."""
    H, R = model.H, model.R
    alpha = np.asarray(P_pred.alpha, dtype=float)
    xbar = np.asarray(P_pred.xbar, dtype=float)
    ms = P_pred.moments
    phi, psi = ms.phi, ms.psi
    S = _innovation(alpha, H, R)
    e = np.asarray(z, dtype=float) - _mv(H, xbar)
    # A = H^T S^-1 H, B = H^T S^-1 e
    SinvH = np.linalg.solve(S, np.broadcast_to(H, S.shape[:-2] + H.shape))
    Amat = _t(H) @ SinvH
    Bvec = _mv(_t(SinvH), e)

    x_new = xbar + _mv(alpha, Bvec)
    F_new = P_pred.Fbar + np.einsum("...ipk,...k->...ip", phi, Bvec)
    G_new = P_pred.Gbar + np.einsum("...ipk,...k->...ip", psi, Bvec)
    a_new = alpha - alpha @ Amat @ alpha

    phiA = np.einsum("...ipm,...mn->...ipn", phi, Amat)
    psiA = np.einsum("...ipm,...mn->...ipn", psi, Amat)
    beta = ms.beta - np.einsum("...ipn,...jqn->...ipjq", phiA, phi)
    gamma = ms.gamma - np.einsum("...ipn,...jqn->...ipjq", psiA, psi)
    nu = ms.nu - np.einsum("...ipn,...jqn->...ipjq", phiA, psi)
    phi_new = phi - np.einsum("...ipn,...nk->...ipk", phiA, alpha)
    psi_new = psi - np.einsum("...ipn,...nk->...ipk", psiA, alpha)

    beta = 0.5 * (beta + np.swapaxes(np.swapaxes(beta, -4, -2), -3, -1))
    gamma = 0.5 * (gamma + np.swapaxes(np.swapaxes(gamma, -4, -2), -3, -1))
    return InfoStateReducible(
        x_new, F_new, G_new, _sym(a_new), MomentSet(beta, gamma, nu, phi_new, psi_new)
    )


def adequacy(P_pred, z, model):
    """Normalized innovation statistic theta (chi-square, L dof) and its normal score."""
    H, R = model.H, model.R
    alpha = np.asarray(P_pred.alpha, dtype=float)
    S = _innovation(alpha, H, R)
    e = np.asarray(z, dtype=float) - _mv(H, np.asarray(P_pred.xbar, dtype=float))
    theta = np.einsum("...i,...i->...", e, np.linalg.solve(S, e[..., None])[..., 0])
    theta = np.maximum(theta, 0.0)
    L = H.shape[-2]
    score = np.sqrt(2.0 * theta) - np.sqrt(2.0 * L - 1.0)
    return theta, score


def reducible_from_prior(xbar0, alpha0, Fbar, Gbar, ms: MomentSet):
    """Initial reducible state with uncorrelated state and parameters."""
    return InfoStateReducible(
        np.asarray(xbar0, float), np.asarray(Fbar, float), np.asarray(Gbar, float),
        np.asarray(alpha0, float), ms.uncertainty_block().with_cross(),
    )
