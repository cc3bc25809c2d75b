"""The QKD cone.

    K = cl{ (h, s) : s > 0,  h >= -H(G(s)) + H(Z(s)) }

for completely positive maps ``G`` (Kraus map ``ghat``) and ``Z`` (a list of
Kraus maps, one per diagonal block of its output). The barrier is

    f(h, s) = -log u - logdet s,    u = h + H(G(s)) - H(Z(s)),

with barrier parameter ``n + 1``. Entropies are in nats.

Points are flat real vectors ``(h, svec(s))``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.linalg

from .. import entropy as E
from .. import hermvec as hv
from .. import precision as P
from .base import Cone, ConeState, HessianFactor, dot


class QKDCone(Cone):
    kind = "qkd"
    has_third_order = True

    def __init__(self, ghat: hv.KrausMap, zhat: hv.KrausMap | Sequence[hv.KrausMap], iscomplex: bool | None = None):
        blocks = [zhat] if isinstance(zhat, hv.KrausMap) else list(zhat)
        if not blocks:
            raise ValueError("zhat needs at least one block")
        n = ghat.in_dim
        for b in blocks:
            if b.in_dim != n:
                raise ValueError(f"zhat block input dimension {b.in_dim} != {n}")
        if iscomplex is None:
            iscomplex = ghat.iscomplex or any(b.iscomplex for b in blocks)
        elif not iscomplex and (ghat.iscomplex or any(b.iscomplex for b in blocks)):
            raise ValueError("real-mode cone needs real Kraus operators")
        self.ghat = ghat
        self.zhat = blocks
        self.n = n
        self.iscomplex = bool(iscomplex)
        self.ghat_is_identity = ghat.is_identity or (
            len(ghat.ops) == 1
            and ghat.out_dim == n
            and np.array_equal(P.to_double(ghat.ops[0]), np.eye(n))
        )
        self.sdim = hv.svec_dim(n, self.iscomplex)
        self.dim = 1 + self.sdim
        self.nu = n + 1

    def __repr__(self):
        return f"QKDCone(n={self.n}, blocks={len(self.zhat)}, complex={self.iscomplex})"

    def to_precision(self, precision: str) -> "QKDCone":
        g = self.ghat.to_precision(precision)
        if self.ghat_is_identity:
            g = hv.KrausMap.identity(self.n, precision)
        return QKDCone(g, [b.to_precision(precision) for b in self.zhat], self.iscomplex)

    # -- coordinates -----------------------------------------------------
    def pack(self, h, sigma) -> np.ndarray:
        v = hv.svec(sigma, self.iscomplex)
        out = np.empty(self.dim, dtype=v.dtype)
        out[0] = h
        out[1:] = v
        return out

    def unpack(self, x):
        return x[0], hv.smat(x[1:], self.iscomplex)

    # -- maps --------------------------------------------------------------
    def apply_g(self, sigma):
        return sigma if self.ghat_is_identity else self.ghat.apply(sigma)

    def objective_value(self, sigma):
        """``-H(G(s)) + H(Z(s))`` in nats."""
        val = -E.entropy(self.apply_g(sigma))
        for b in self.zhat:
            val = val + E.entropy(b.apply(sigma))
        return val

    def initial_point(self, precision: str = "double") -> np.ndarray:
        eye = P.asarray(np.eye(self.n, dtype=complex if self.iscomplex else float), precision)
        with P.context(precision):
            D = self.objective_value(eye)
            h = D / 2 + P.sqrt(1 + D * D / 4)
            return self.pack(h, eye)

    def state(self, x) -> "QKDState | None":
        return QKDState.create(self, np.asarray(x))

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "ghat": None if self.ghat_is_identity else [K for K in self.ghat.ops],
            "zhat": [[K for K in b.ops] for b in self.zhat],
        }


def _pd_eig(X, n_scale):
    """Eigendecomposition if ``X`` is numerically positive definite, else ``None``."""
    eig = E.eig_hermitian(X)
    lam = eig.lam
    top = max(abs(v) for v in lam)
    if not lam[0] > n_scale * P.machine_eps(eig.precision) * top:
        return None
    return eig


def _rotate_svec(U, V, iscomplex, inverse=False):
    """``svec(U^dagger smat(v) U)`` for each column ``v`` of ``V`` (``U smat U^dagger`` if inverse)."""
    M = hv.smat(V.T, iscomplex)
    if inverse:
        R = U @ M @ U.conj().T
    else:
        R = U.conj().T @ M @ U
    return hv.svec(R, iscomplex).T


class QKDState(ConeState):
    """Barrier data at one interior point of a :class:`QKDCone`."""

    @classmethod
    def create(cls, cone: QKDCone, x):
        if x.shape != (cone.dim,):
            raise ValueError(f"point has shape {x.shape}, expected ({cone.dim},)")
        h, sigma = cone.unpack(x)
        n = cone.n
        try:
            eig_s = _pd_eig(sigma, n)
            if eig_s is None:
                return None
            if cone.ghat_is_identity:
                eig_g = eig_s
            else:
                eig_g = _pd_eig(cone.ghat.apply(sigma), cone.ghat.out_dim)
                if eig_g is None:
                    return None
            eig_z = []
            for b in cone.zhat:
                ez = _pd_eig(b.apply(sigma), b.out_dim)
                if ez is None:
                    return None
                eig_z.append(ez)
        except np.linalg.LinAlgError:
            return None
        H_g = E.entropy(eig_g)
        H_z = sum(E.entropy(ez) for ez in eig_z[1:]) + E.entropy(eig_z[0])
        u = h + H_g - H_z
        eps = P.machine_eps(eig_s.precision)
        if not u > eps * (1 + abs(h)):
            return None
        self = cls()
        self.cone = cone
        self.x = x
        self.h = h
        self.sigma = sigma
        self.u = u
        self.eig_s = eig_s
        self.eig_g = eig_g
        self.eig_z = eig_z
        one = P.scalar(1, eig_s.precision)
        eye_g = np.eye(eig_g.dim) * one
        grad_u = -cone.ghat.adjoint(eye_g + eig_g.log_matrix) if not cone.ghat_is_identity else -(eye_g + eig_g.log_matrix)
        for b, ez in zip(cone.zhat, eig_z):
            grad_u = grad_u + b.adjoint(np.eye(ez.dim) * one + ez.log_matrix)
        self.grad_u = hv.hermitian_part(grad_u)
        U = eig_s.U
        self.sigma_inv = (U / eig_s.lam[None, :]) @ U.conj().T
        return self

    # -- scalar and first order ---------------------------------------------
    def barrier(self):
        lam = self.eig_s.lam
        return -P.log(self.u) - sum(P.log(lam))

    def gradient(self):
        c = self.cone
        g_sigma = -self.grad_u / self.u - self.sigma_inv
        return c.pack(-1 / self.u, g_sigma)

    # -- second order ----------------------------------------------------------
    def _d2u(self, xi):
        """``grad^2 u [xi]``."""
        c = self.cone
        if c.ghat_is_identity:
            out = -E.dlog(self.eig_g, xi)
        else:
            out = -c.ghat.adjoint(E.dlog(self.eig_g, c.ghat.apply(xi)))
        for b, ez in zip(c.zhat, self.eig_z):
            out = out + b.adjoint(E.dlog(ez, b.apply(xi)))
        return hv.hermitian_part(out)

    def hess_apply(self, v):
        c = self.cone
        dh, xi = c.unpack(np.asarray(v))
        u = self.u
        a = dh + hv.inner(self.grad_u, xi)
        Hs = (a / (u * u)) * self.grad_u - self._d2u(xi) / u + self.sigma_inv @ xi @ self.sigma_inv
        return c.pack(a / (u * u), hv.hermitian_part(Hs))

    def third_order(self, v):
        c = self.cone
        dh, xi = c.unpack(np.asarray(v))
        u = self.u
        a = dh + hv.inner(self.grad_u, xi)
        d2u = self._d2u(xi)
        b = hv.inner(d2u, xi)
        # grad^3 u [xi, xi]
        if c.ghat_is_identity:
            d3u = -E.d2log(self.eig_g, xi)
        else:
            d3u = -c.ghat.adjoint(E.d2log(self.eig_g, c.ghat.apply(xi)))
        for blk, ez in zip(c.zhat, self.eig_z):
            d3u = d3u + blk.adjoint(E.d2log(ez, blk.apply(xi)))
        u2 = u * u
        u3 = u2 * u
        t_h = -2 * a * a / u3 + b / u2
        si = self.sigma_inv
        t_s = (
            (2 * a / u2) * d2u
            - (2 * a * a / u3) * self.grad_u
            - d3u / u
            + (b / u2) * self.grad_u
            - 2 * (si @ xi @ si @ xi @ si)
        )
        return c.pack(t_h, hv.hermitian_part(t_s))

    # -- dense Hessian in the eigenbasis of sigma ------------------------------
    def rotated_parts(self):
        """Pieces of the Hessian in the coordinates ``(h, svec(U^dagger s U))``.

        Returns ``(D, B, coef)`` with ``H = D + B^T diag(coef) B``: ``D`` is
        the ``svec``-block (a vector of diagonal entries when ``Ghat`` is the
        identity, a dense matrix otherwise; the ``h`` entry is zero), ``B`` stacks
        the rotated ``Zhat`` block maps and the gradient of ``u``.
        """
        c = self.cone
        cplx = c.iscomplex
        U = self.eig_s.U
        lam = self.eig_s.lam
        u = self.u
        one = P.scalar(1, self.eig_s.precision)
        w_inv = one / (lam[:, None] * lam[None, :])
        N = c.sdim
        if c.ghat_is_identity:
            D = hv.svec_weights(w_inv + self.eig_g.gamma1 / u, cplx)
        else:
            D = np.diag(hv.svec_weights(w_inv, cplx))
            Ug = self.eig_g.U.conj().T
            Wg = sum(hv.skron(Ug @ K @ U, cplx) for K in c.ghat.ops)
            wg = hv.svec_weights(self.eig_g.gamma1, cplx)
            D = D + Wg.T @ (wg[:, None] * Wg) / u
        rows, coefs = [], []
        for b, ez in zip(c.zhat, self.eig_z):
            Ub = ez.U.conj().T
            Wb = sum(hv.skron(Ub @ K @ U, cplx) for K in b.ops)
            rows.append(np.concatenate([np.zeros((Wb.shape[0], 1), dtype=Wb.dtype), Wb], axis=1))
            coefs.append(-hv.svec_weights(ez.gamma1, cplx) / u)
        gt = np.empty((1, 1 + N), dtype=rows[0].dtype)
        gt[0, 0] = one
        gt[0, 1:] = hv.svec(self.eig_s.rotate_in(self.grad_u), cplx)
        rows.append(gt)
        coefs.append(np.array([one / (u * u)]))
        return D, np.concatenate(rows, axis=0), np.concatenate(coefs)

    def rotated_hessian(self):
        """Hessian in the coordinates ``(h, svec(U^dagger s U))``, ``U`` the eigenvectors of ``s``."""
        D, B, coef = self.rotated_parts()
        H = B.T @ (coef[:, None] * B)
        if D.ndim == 1:
            idx = np.arange(1, H.shape[0])
            H[idx, idx] += D
        else:
            H[1:, 1:] += D
        return (H + H.T) / 2

    def rotate(self, V, inverse=False):
        """Change coordinates of vectors (columns of ``V``) to/from the eigenbasis frame."""
        V = np.asarray(V)
        vec = V.ndim == 1
        V2 = V.reshape(V.shape[0], -1)
        out = np.empty(V2.shape, dtype=V2.dtype)
        out[0] = V2[0]
        out[1:] = _rotate_svec(self.eig_s.U, V2[1:], self.cone.iscomplex, inverse)
        return out[:, 0] if vec else out

    def hessian(self):
        Ht = self.rotated_hessian()
        # H = R^T Ht R with R the (orthogonal) rotation
        R = self.rotate(P.asarray(np.eye(self.cone.dim), P.precision_of(Ht)))
        H = R.T @ Ht @ R
        return (H + H.T) / 2

    def factor(self):
        return _RotatedFactor(self)


class _RotatedFactor(HessianFactor):
    """Inverse Hessian through the eigenbasis of ``sigma``.

    When ``Ghat`` is the identity the rotated Hessian is a positive diagonal
    plus a term of rank ``r`` (the ``Zhat`` blocks and ``grad u``); if ``r`` is
    small against the dimension the Woodbury identity is used, with a dense
    Cholesky fallback when the small capacitance system is ill-conditioned.
    """

    #: use the low-rank update only if rank <= WOODBURY_FRACTION * dim
    WOODBURY_FRACTION = 0.5
    #: largest acceptable condition number of the capacitance matrix
    WOODBURY_MAX_COND = 1e10

    def __init__(self, st: QKDState):
        self.st = st
        self.L = None
        self.lowrank = None
        D, B, coef = st.rotated_parts()
        if D.ndim == 1 and not P.is_extended(D) and B.shape[0] <= self.WOODBURY_FRACTION * B.shape[1]:
            self.lowrank = self._woodbury(D, B, coef)
        if self.lowrank is None:
            H = B.T @ (coef[:, None] * B)
            if D.ndim == 1:
                idx = np.arange(1, H.shape[0])
                H[idx, idx] += D
            else:
                H[1:, 1:] += D
            self.L = P.cholesky((H + H.T) / 2)

    def _woodbury(self, D, B, coef):
        # h has no diagonal part; it enters only through the grad-u row of B
        # (coefficient 1/u^2). Move a 1/u^2 diagonal entry for h into D and
        # subtract it again through an extra rank-one row.
        u2inv = coef[-1]
        Dfull = np.concatenate([[u2inv], D])
        e0 = np.zeros((1, B.shape[1]))
        e0[0, 0] = 1.0
        B = np.concatenate([B, e0], axis=0)
        coef = np.concatenate([coef, [-u2inv]])
        Dinv = 1 / Dfull
        BD = B * Dinv[None, :]
        K = np.diag(1 / coef) + BD @ B.T
        try:
            lu = scipy.linalg.lu_factor(K, check_finite=True)
        except (ValueError, np.linalg.LinAlgError):
            return None
        if np.linalg.cond(K) > self.WOODBURY_MAX_COND:
            return None
        return Dinv, B, BD, lu

    def solve(self, V):
        st = self.st
        Vt = st.rotate(V)
        if self.lowrank is not None:
            Dinv, B, BD, lu = self.lowrank
            Vt2 = Vt.reshape(Vt.shape[0], -1)
            X = Dinv[:, None] * Vt2 - BD.T @ scipy.linalg.lu_solve(lu, BD @ Vt2, check_finite=False)
            X = X.reshape(Vt.shape)
        else:
            X = P.cho_solve(self.L, Vt)
        return st.rotate(X, inverse=True)


__all__ = ["QKDCone", "QKDState", "dot"]
