"""
Predicted information about (F, G) carried by future measurements.

The single-measurement content uses the first-order log-det expansion

    I = (1/L) tr[(H a_nom H^T + R)^-1 H da H^T]

where a_nom is the exact-parameter (Kalman) prediction and da the extra
state spread caused by parameter uncertainty. Accumulation discounts each
new increment by exp(-I_cum / P), P being the number of inexact parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import (
    InfoStateIrreducible,
    _innovation,
    _sym,
    _t,
    _uncertainty_growth,
    predict_irreducible,
    update_irreducible,
)
from .tensor_stats import MomentSet, pack_moments

MODES = ("pessimistic", "optimistic")


@dataclass(frozen=True)
class InfoPrediction:
    I_z: np.ndarray       # (K, ...) per-measurement content, z(1)..z(K)
    I_cum: np.ndarray     # (K, ...) damped accumulation
    I_sigma: np.ndarray   # (K, ...) plain running sum of I_z
    mode: str
    P: int
    logdet: np.ndarray | None = None  # exact log-det counterpart of I_z

    def cumulative(self, k):
        """Accumulated (damped) information after k measurements; k=0 gives 0."""
        if k == 0:
            return np.zeros_like(self.I_cum[0])
        return self.I_cum[k - 1]


def _content(H, R, a_nom, dalpha):
    S = _innovation(a_nom, H, R)
    L = H.shape[-2]
    lin = np.trace(np.linalg.solve(S, H @ dalpha @ _t(H)), axis1=-2, axis2=-1) / L
    S_full = S + H @ dalpha @ _t(H)
    exact = np.linalg.slogdet(S_full)[1] - np.linalg.slogdet(S)[1]
    return lin, exact


def info_one_step(P_R, u, model, return_exact=False):
    """Predicted information about (F, G) in the next measurement."""
    ms = P_R.moments
    xbar = np.asarray(P_R.xbar, float)
    alpha = np.asarray(P_R.alpha, float)
    Fbar, Gbar = P_R.Fbar, P_R.Gbar
    u = np.broadcast_to(np.asarray(u, dtype=float), xbar.shape[:-1] + (Gbar.shape[-1],))
    a_nom = Fbar @ alpha @ _t(Fbar) + model.Q
    dalpha = _sym(_uncertainty_growth(ms, xbar, alpha, u))
    lin, exact = _content(model.H, model.R, a_nom, dalpha)
    return (lin, exact) if return_exact else lin


def info_multistep(model, P_R0, controls, mode="optimistic", Fbar=None, Gbar=None):
    """Per-step predicted content I_z(1..K) along a control sequence.

    The spread da(k) is evaluated at the irreducible multistep estimate
    (xbar(k-1), alpha(k-1)) for both modes. The mode picks the covariance
    behind the nominal innovation: the irreducible filter (pessimistic) or the
    exact-parameter Kalman filter (optimistic). Since the former dominates the
    latter, pessimistic <= optimistic step by step.

    Returns (I_z, logdet), each of shape (K, ...).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    Fbar = P_R0.Fbar if Fbar is None else Fbar
    Gbar = P_R0.Gbar if Gbar is None else Gbar
    Xi = P_R0.moments.uncertainty_block()
    controls = np.asarray(controls, dtype=float)
    K = controls.shape[0]
    if K > model.horizon:
        raise ValueError(f"{K} controls exceed the horizon {model.horizon}")
    if controls.shape[-1] != Gbar.shape[-1]:
        raise ValueError(f"controls have {controls.shape[-1]} inputs, model has {Gbar.shape[-1]}")
    zero_xi = MomentSet.zeros(Fbar.shape[-1], Gbar.shape[-1], cross=False)

    irr = InfoStateIrreducible(np.asarray(P_R0.xbar, float), np.asarray(P_R0.alpha, float))
    kf_alpha = irr.alpha
    I_z, logdet = [], []
    for k in range(K):
        u = controls[k]
        a_base = irr.alpha if mode == "pessimistic" else kf_alpha
        a_nom = Fbar @ a_base @ _t(Fbar) + model.Q
        dalpha = _sym(_uncertainty_growth(Xi, irr.xbar, irr.alpha, u))
        lin, exact = _content(model.H, model.R, a_nom, dalpha)
        I_z.append(lin)
        logdet.append(exact)
        # measurement-independent covariance recursions; the mean is a pure prediction
        pred = predict_irreducible(irr, Xi, u, model, Fbar, Gbar)
        upd = update_irreducible(pred, np.zeros(model.l), model)
        irr = InfoStateIrreducible(pred.xbar, upd.alpha)
        if mode == "optimistic":
            kp = predict_irreducible(InfoStateIrreducible(pred.xbar, kf_alpha), zero_xi, u, model, Fbar, Gbar)
            kf_alpha = update_irreducible(kp, np.zeros(model.l), model).alpha
    return np.array(I_z), np.array(logdet)


def info_accumulate(I_z, P, mode="optimistic", logdet=None):
    """Damped accumulation I(k) = I(k-1) + exp(-I(k-1)/P) I_z(k)."""
    if P < 1:
        raise ValueError("P must be >= 1")
    I_z = np.asarray(I_z, dtype=float)
    cum = np.zeros_like(I_z)
    acc = np.zeros(I_z.shape[1:])
    for k in range(I_z.shape[0]):
        acc = acc + np.exp(-acc / P) * I_z[k]
        cum[k] = acc
    return InfoPrediction(I_z, cum, np.cumsum(I_z, axis=0), mode, int(P), logdet)


def parameter_entropy(ms: MomentSet, support=None):
    """ln det of the packed (vec F, vec G) covariance restricted to `support`.

    `support` indexes the uncertain entries; by default every entry with a
    positive variance.
    """
    Pm = pack_moments(ms)
    if support is None:
        support = np.flatnonzero(np.diagonal(Pm) > 0)
    sub = Pm[np.ix_(support, support)]
    sign, val = np.linalg.slogdet(sub)
    return val if sign > 0 else -np.inf
