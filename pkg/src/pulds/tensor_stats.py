"""
Moment tensors of random parameter matrices and their contractions.

Storage convention (Euclidean metric, so co- and contravariant indices
coincide and conjugate tensors are plain index permutations):

    beta[i, p, j, q]  = Cov(F[i, p], F[j, q])      shape (N, N, N, N)
    gamma[i, p, j, q] = Cov(G[i, p], G[j, q])      shape (N, M, N, M)
    nu[i, p, j, q]    = Cov(F[i, p], G[j, q])      shape (N, N, N, M)
    phi[i, p, k]      = Cov(F[i, p], x[k])         shape (N, N, N)
    psi[i, p, k]      = Cov(G[i, p], x[k])         shape (N, M, N)

Every function accepts optional leading batch axes; the trailing axes carry
the layout above.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PSD_RTOL = 1e-9


class DimensionError(ValueError):
    pass


class NotPSDError(ValueError):
    pass


def _require(cond, msg):
    if not cond:
        raise DimensionError(msg)


@dataclass(frozen=True)
class MomentSet:
    """Second moments of the random pair (F, G), optionally with state cross moments."""

    beta: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    phi: np.ndarray | None = None
    psi: np.ndarray | None = None

    @classmethod
    def zeros(cls, n, m, cross=True, batch=()):
        b = tuple(batch)
        return cls(
            beta=np.zeros(b + (n, n, n, n)),
            gamma=np.zeros(b + (n, m, n, m)),
            nu=np.zeros(b + (n, n, n, m)),
            phi=np.zeros(b + (n, n, n)) if cross else None,
            psi=np.zeros(b + (n, m, n)) if cross else None,
        )

    @property
    def n(self):
        return self.beta.shape[-1]

    @property
    def m(self):
        return self.gamma.shape[-1]

    def scaled(self, factor):
        """Scale the uncertainty block (beta, gamma, nu); cross moments are dropped."""
        f = np.asarray(factor, dtype=float)
        f4 = f[..., None, None, None, None]
        return MomentSet(self.beta * f4, self.gamma * f4, self.nu * f4)

    def with_cross(self, phi=None, psi=None):
        lead = self.beta.shape[:-4]
        n, m = self.n, self.m
        phi = np.zeros(lead + (n, n, n)) if phi is None else phi
        psi = np.zeros(lead + (n, m, n)) if psi is None else psi
        return replace(self, phi=phi, psi=psi)

    def uncertainty_block(self):
        return MomentSet(self.beta, self.gamma, self.nu)


def conjugate4(T):
    """Swap the two index pairs: Cov(A, B) layout -> Cov(B, A) layout."""
    return np.swapaxes(np.swapaxes(T, -4, -2), -3, -1)


def quad_contract(T, W):
    """Out[i, j] = sum_{p,q} T[i,p,j,q] W[p,q], i.e. E[dA W dB^T]."""
    T = np.asarray(T, dtype=float)
    W = np.asarray(W, dtype=float)
    _require(T.ndim >= 4 and W.ndim >= 2, "quad_contract needs a 4-index tensor and a matrix")
    _require(
        W.shape[-2] == T.shape[-3] and W.shape[-1] == T.shape[-1],
        f"quad_contract: W {W.shape[-2:]} incompatible with T {T.shape[-4:]}",
    )
    return np.einsum("...ipjq,...pq->...ij", T, W)


def dual_contract(T, W):
    """Out[p, q] = sum_{i,j} T[i,p,j,q] W[i,j], i.e. E[dA^T W dB]."""
    T = np.asarray(T, dtype=float)
    W = np.asarray(W, dtype=float)
    _require(T.ndim >= 4 and W.ndim >= 2, "dual_contract needs a 4-index tensor and a matrix")
    _require(
        W.shape[-2] == T.shape[-4] and W.shape[-1] == T.shape[-2],
        f"dual_contract: W {W.shape[-2:]} incompatible with T {T.shape[-4:]}",
    )
    return np.einsum("...ipjq,...ij->...pq", T, W)


def bilinear_contract(T, a, b):
    """Out[i, j] = sum_{p,q} T[i,p,j,q] a[p] b[q] = Cov(dA a, dB b)."""
    T = np.asarray(T, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _require(
        a.shape[-1] == T.shape[-3] and b.shape[-1] == T.shape[-1],
        f"bilinear_contract: vectors {a.shape[-1]}, {b.shape[-1]} incompatible with T {T.shape[-4:]}",
    )
    return np.einsum("...ipjq,...p,...q->...ij", T, a, b)


def cross_vec_contract(T, v):
    """Out[i, k] = sum_p T[i,p,k] v[p] = Cov((dA v)[i], x[k])."""
    T = np.asarray(T, dtype=float)
    v = np.asarray(v, dtype=float)
    _require(T.ndim >= 3, "cross_vec_contract needs a 3-index tensor")
    _require(v.shape[-1] == T.shape[-2], f"cross_vec_contract: vector {v.shape[-1]} vs T {T.shape[-3:]}")
    return np.einsum("...ipk,...p->...ik", T, v)


def trace_pair(T):
    """v[i] = sum_p T[i,p,p] = E[(dF dx)[i]]."""
    T = np.asarray(T, dtype=float)
    _require(T.ndim >= 3, "trace_pair needs a 3-index tensor")
    _require(T.shape[-2] == T.shape[-1], f"trace_pair: ranges {T.shape[-2]} and {T.shape[-1]} differ")
    return np.einsum("...ipp->...i", T)


def gram3_perm(Ta, Tb):
    """Out[i, j] = sum_{p,q} Ta[i,p,q] Tb[j,q,p].

    With Ta = Tb = phi this is the Isserlis cross-pairing term
    sum Cov(F_ip, x_q) Cov(x_p, F_jq) of Var(dF dx).
    """
    Ta = np.asarray(Ta, dtype=float)
    Tb = np.asarray(Tb, dtype=float)
    _require(Ta.ndim >= 3 and Tb.ndim >= 3, "gram3_perm needs 3-index tensors")
    _require(
        Ta.shape[-2] == Tb.shape[-1] and Ta.shape[-1] == Tb.shape[-2],
        f"gram3_perm: {Ta.shape[-3:]} and {Tb.shape[-3:]} do not pair",
    )
    return np.einsum("...ipq,...jqp->...ij", Ta, Tb)


# packing ------------------------------------------------------------------

def pack4(T):
    """Entry-covariance array -> matrix over row-major vectorized entries."""
    T = np.asarray(T)
    a, b, c, d = T.shape[-4:]
    return T.reshape(T.shape[:-4] + (a * b, c * d))


def unpack4(P, shape):
    P = np.asarray(P)
    return P.reshape(P.shape[:-2] + tuple(shape))


def pack_moments(ms: MomentSet):
    """Joint covariance of (vec F, vec G) as an (N^2 + NM) square matrix."""
    b = pack4(ms.beta)
    g = pack4(ms.gamma)
    v = pack4(ms.nu)
    top = np.concatenate([b, v], axis=-1)
    bottom = np.concatenate([np.swapaxes(v, -1, -2), g], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def unpack_moments(P, n, m):
    nn = n * n
    beta = unpack4(P[..., :nn, :nn], (n, n, n, n))
    nu = unpack4(P[..., :nn, nn:], (n, n, n, m))
    gamma = unpack4(P[..., nn:, nn:], (n, m, n, m))
    return MomentSet(beta, gamma, nu)


def psd_report(P, rtol=PSD_RTOL):
    """(is_psd, min_eigenvalue) of a symmetric matrix with tolerance -rtol*trace."""
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        return False, float("nan")
    S = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(S)
    tr = max(float(np.trace(S)), 0.0)
    lo = float(w.min()) if w.size else 0.0
    return bool(lo >= -rtol * tr), lo


def pack_psd_check(obj):
    """PSD status of a self-covariance tensor or a full MomentSet.

    Returns (is_psd, min_eigenvalue). Never raises.
    """
    try:
        if isinstance(obj, MomentSet):
            P = pack_moments(obj)
        else:
            P = pack4(obj)
        return psd_report(P)
    except Exception:
        return False, float("nan")


def joint_covariance(alpha, ms: MomentSet):
    """Covariance of the stacked vector (x, vec F, vec G)."""
    alpha = np.asarray(alpha, dtype=float)
    n, m = ms.n, ms.m
    lead = alpha.shape[:-2]
    par = pack_moments(ms)
    phi = ms.phi if ms.phi is not None else np.zeros(lead + (n, n, n))
    psi = ms.psi if ms.psi is not None else np.zeros(lead + (n, m, n))
    # rows: parameter entries, cols: state components
    cross = np.concatenate([phi.reshape(lead + (n * n, n)), psi.reshape(lead + (n * m, n))], axis=-2)
    top = np.concatenate([alpha, np.swapaxes(cross, -1, -2)], axis=-1)
    bottom = np.concatenate([cross, par], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def split_joint(J, n, m):
    """Inverse of joint_covariance: returns (alpha, MomentSet with cross moments)."""
    nn, nm = n * n, n * m
    alpha = J[..., :n, :n]
    cross = J[..., n:, :n]
    phi = cross[..., :nn, :].reshape(J.shape[:-2] + (n, n, n))
    psi = cross[..., nn:, :].reshape(J.shape[:-2] + (n, m, n))
    ms = unpack_moments(J[..., n:, n:], n, m)
    return alpha, MomentSet(ms.beta, ms.gamma, ms.nu, phi, psi)


def psd_factor(C, rtol=PSD_RTOL, name="covariance"):
    """Square-root factor L with L L^T = C after clamping round-off negatives."""
    C = np.asarray(C, dtype=float)
    S = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(S)
    tr = max(float(np.trace(S)), 0.0)
    if w.size and w.min() < -rtol * tr:
        raise NotPSDError(f"{name} is not PSD (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_joint(xbar, Fbar, Gbar, alpha, ms: MomentSet, count, rng):
    """Draw `count` joint Gaussian samples of (F, G, x).

    Returns arrays of shape (count, N, N), (count, N, M), (count, N).
    """
    xbar = np.asarray(xbar, dtype=float)
    Fbar = np.asarray(Fbar, dtype=float)
    Gbar = np.asarray(Gbar, dtype=float)
    n, m = Gbar.shape
    J = joint_covariance(alpha, ms)
    L = psd_factor(J, name="joint covariance")
    mean = np.concatenate([xbar, Fbar.ravel(), Gbar.ravel()])
    draws = mean + rng.standard_normal((count, mean.size)) @ L.T
    x = draws[:, :n]
    F = draws[:, n:n + n * n].reshape(count, n, n)
    G = draws[:, n + n * n:].reshape(count, n, m)
    return F, G, x
