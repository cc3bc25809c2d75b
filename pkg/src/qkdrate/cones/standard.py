"""Nonnegative orthant, second-order cone and quantum relative entropy cone."""

from __future__ import annotations

import numpy as np
import scipy.optimize

from .. import entropy as E
from .. import hermvec as hv
from .. import precision as P
from .base import Cone, ConeState, dot


class NonnegCone(Cone):
    """``{x : x_i >= 0}`` with barrier ``-sum log x_i``."""

    kind = "nonneg"

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("nonnegative cone needs dimension >= 1")
        self.dim = n
        self.nu = n

    def __repr__(self):
        return f"NonnegCone({self.dim})"

    def initial_point(self, precision: str = "double"):
        return P.asarray(np.ones(self.dim), precision)

    def state(self, x):
        x = np.asarray(x)
        if x.shape != (self.dim,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.dim},)")
        if not all(v > 0 for v in x):
            return None
        return _NonnegState(x)

    def descriptor(self):
        return {"kind": self.kind, "dim": self.dim}


class _NonnegState(ConeState):
    def __init__(self, x):
        self.x = x

    def barrier(self):
        return -sum(P.log(self.x))

    def gradient(self):
        return -1 / self.x

    def hess_apply(self, v):
        return v / (self.x * self.x)

    def hessian(self):
        return np.diag(1 / (self.x * self.x))

    def third_order(self, v):
        return -2 * v * v / (self.x * self.x * self.x)


def nonneg_barrier(v):
    """``(f, grad, hess)`` of ``-sum log v``; raises outside the open orthant."""
    st = NonnegCone(len(v)).state(np.asarray(v))
    if st is None:
        raise ValueError("point is not in the interior of the nonnegative orthant")
    return st.barrier(), st.gradient(), st.hessian()


class SOCCone(Cone):
    """``{(t, z) : t >= ||z||}`` with barrier ``-log(t^2 - ||z||^2)``."""

    kind = "second_order"
    nu = 2

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError("second-order cone needs dimension >= 2")
        self.dim = dim

    def __repr__(self):
        return f"SOCCone({self.dim})"

    def initial_point(self, precision: str = "double"):
        x = P.asarray(np.zeros(self.dim), precision)
        x[0] = P.sqrt(P.scalar(2, precision))
        return x

    def state(self, x):
        x = np.asarray(x)
        if x.shape != (self.dim,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.dim},)")
        if not x[0] > 0:
            return None
        s = x[0] * x[0] - dot(x[1:], x[1:])
        if not s > P.machine_eps(P.precision_of(x)) * x[0] * x[0]:
            return None
        return _SOCState(x, s)

    def descriptor(self):
        return {"kind": self.kind, "dim": self.dim}


def soc_is_interior(v) -> bool:
    """``t > ||x||`` for ``v = (t, x)``."""
    v = np.asarray(v)
    return bool(v[0] > P.norm(v[1:]))


class _SOCState(ConeState):
    def __init__(self, x, s):
        self.x = x
        self.s = s
        self.Jx = x.copy()
        self.Jx[1:] = -x[1:]

    def barrier(self):
        return -P.log(self.s)

    def gradient(self):
        return -2 * self.Jx / self.s

    def hess_apply(self, v):
        Jv = v.copy()
        Jv[1:] = -v[1:]
        return -2 * Jv / self.s + 4 * self.Jx * dot(self.Jx, v) / (self.s * self.s)

    def hessian(self):
        J = np.diag([1.0] + [-1.0] * (self.x.shape[0] - 1))
        if P.is_extended(self.x):
            J = P.asarray(J, "extended")
        return -2 * J / self.s + 4 * np.outer(self.Jx, self.Jx) / (self.s * self.s)

    def third_order(self, v):
        s = self.s
        Jv = v.copy()
        Jv[1:] = -v[1:]
        q = dot(self.Jx, v)
        vJv = dot(v, Jv)
        return 8 * q * Jv / (s * s) + 4 * vJv * self.Jx / (s * s) - 16 * q * q * self.Jx / (s * s * s)


class RelEntropyCone(Cone):
    """``cl{(h, X, Y) : X, Y > 0, h >= D(X || Y)}`` with ``D(X||Y) = tr X (log X - log Y)``.

    Barrier ``-log(h - D(X||Y)) - logdet X - logdet Y``, parameter ``1 + 2n``.
    Dense and unstructured: it exists to cross-check the QKD cone and for
    problems that state relative entropy constraints directly. No third-order
    oracle is provided.
    """

    kind = "rel_entropy"
    has_third_order = False

    def __init__(self, n: int, iscomplex: bool = True):
        self.n = n
        self.iscomplex = bool(iscomplex)
        self.sdim = hv.svec_dim(n, self.iscomplex)
        self.dim = 1 + 2 * self.sdim
        self.nu = 1 + 2 * n

    def __repr__(self):
        return f"RelEntropyCone(n={self.n}, complex={self.iscomplex})"

    def pack(self, h, X, Y):
        vx = hv.svec(X, self.iscomplex)
        vy = hv.svec(Y, self.iscomplex)
        out = np.empty(self.dim, dtype=vx.dtype)
        out[0] = h
        out[1 : 1 + self.sdim] = vx
        out[1 + self.sdim :] = vy
        return out

    def unpack(self, x):
        N = self.sdim
        return x[0], hv.smat(x[1 : 1 + N], self.iscomplex), hv.smat(x[1 + N :], self.iscomplex)

    def initial_point(self, precision: str = "double"):
        # central point restricted to (h, a I, b I): solve the scalar system -g(x) = x
        n = self.n

        def resid(z):
            h, a, b = np.exp(z)
            u = h - n * a * np.log(a / b)
            return [h * u - 1, (np.log(a / b) + 1) / u - 1 / a + a, -(a / b) / u - 1 / b + b]

        sol = scipy.optimize.fsolve(resid, np.log([1.0, 1.0, 1.0]), full_output=True)
        h, a, b = np.exp(sol[0])
        if sol[2] != 1 or not h - n * a * np.log(a / b) > 0:
            h, a, b = 1.0, 1.0, 1.0
        eye = np.eye(n, dtype=complex if self.iscomplex else float)
        with P.context(precision):
            return self.pack(P.scalar(h, precision), P.asarray(a * eye, precision), P.asarray(b * eye, precision))

    def state(self, x):
        x = np.asarray(x)
        if x.shape != (self.dim,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.dim},)")
        h, X, Y = self.unpack(x)
        try:
            ex = _pd(X)
            ey = _pd(Y)
        except np.linalg.LinAlgError:
            return None
        if ex is None or ey is None:
            return None
        D = relative_entropy_eig(ex, ey)
        u = h - D
        if not u > P.machine_eps(ex.precision) * (1 + abs(h)):
            return None
        return _REState(self, x, X, Y, ex, ey, u)

    def descriptor(self):
        return {"kind": self.kind, "n": self.n}


def _pd(X):
    eig = E.eig_hermitian(X)
    top = max(abs(v) for v in eig.lam)
    if not eig.lam[0] > X.shape[0] * P.machine_eps(eig.precision) * top:
        return None
    return eig


def relative_entropy_eig(ex: E.Eig, ey: E.Eig):
    """``D(X||Y) = tr X log X - tr X log Y`` from eigendecompositions (nats)."""
    X = ex.reconstruct()
    return -E.entropy_of_eigenvalues(ex.lam) - hv.inner(X, ey.log_matrix)


def relative_entropy(X, Y):
    """Quantum relative entropy ``D(X||Y)`` in nats (``X``, ``Y`` positive definite)."""
    return relative_entropy_eig(E.eig_hermitian(X), E.eig_hermitian(Y))


class _REState(ConeState):
    def __init__(self, cone, x, X, Y, ex, ey, u):
        self.cone = cone
        self.x = x
        self.X = X
        self.Y = Y
        self.ex = ex
        self.ey = ey
        self.u = u
        one = P.scalar(1, ex.precision)
        eye = np.eye(cone.n) * one
        self.gx = hv.hermitian_part(-(ex.log_matrix + eye) + ey.log_matrix)  # d u / d X
        self.gy = hv.hermitian_part(E.dlog(ey, X))  # d u / d Y
        self.Xinv = (ex.U / ex.lam[None, :]) @ ex.U.conj().T
        self.Yinv = (ey.U / ey.lam[None, :]) @ ey.U.conj().T
        self.Xt = ey.rotate_in(X)

    def barrier(self):
        return -P.log(self.u) - sum(P.log(self.ex.lam)) - sum(P.log(self.ey.lam))

    def gradient(self):
        u = self.u
        return self.cone.pack(-1 / u, -self.gx / u - self.Xinv, -self.gy / u - self.Yinv)

    def hess_apply(self, v):
        c = self.cone
        dh, xi, eta = c.unpack(np.asarray(v))
        u = self.u
        ex, ey = self.ex, self.ey
        a = dh + hv.inner(self.gx, xi) + hv.inner(self.gy, eta)
        # Hessian of u applied to (xi, eta)
        dyx = E.dlog(ey, xi)
        hxx = -E.dlog(ex, xi) + E.dlog(ey, eta)
        hyy = dyx + ey.rotate_out(E.d2log_polar_rotated(ey, self.Xt, ey.rotate_in(eta)))
        u2 = u * u
        HX = (a / u2) * self.gx - hxx / u + self.Xinv @ xi @ self.Xinv
        HY = (a / u2) * self.gy - hyy / u + self.Yinv @ eta @ self.Yinv
        return c.pack(a / u2, hv.hermitian_part(HX), hv.hermitian_part(HY))

    def hessian(self):
        c = self.cone
        cplx = c.iscomplex
        N = c.sdim
        u = self.u
        ex, ey = self.ex, self.ey
        Rx = hv.skron(ex.U.conj().T, cplx)
        Ry = hv.skron(ey.U.conj().T, cplx)
        dlog_x = Rx.T @ (hv.svec_weights(ex.gamma1, cplx)[:, None] * Rx)
        dlog_y = Ry.T @ (hv.svec_weights(ey.gamma1, cplx)[:, None] * Ry)
        # second derivative of tr X log Y in Y, in the eigenbasis of Y:
        # R_ij = sum_k G_ijk (Xt_ik eta_kj + eta_ik Xt_kj)
        G = ey.gamma2
        n = c.n
        I = np.eye(n)
        T4 = np.einsum("ijk,ik,lj->ijkl", G, self.Xt, I) + np.einsum("ijl,lj,ik->ijkl", G, self.Xt, I)
        polar = Ry.T @ hv.svec_operator(T4, cplx) @ Ry
        g = self.cone.pack(1, self.gx, self.gy)
        H = np.outer(g, g) / (u * u)
        H[1 : 1 + N, 1 : 1 + N] += dlog_x / u + hv.skron(self.Xinv, cplx)
        H[1 : 1 + N, 1 + N :] -= dlog_y / u
        H[1 + N :, 1 : 1 + N] -= dlog_y / u
        H[1 + N :, 1 + N :] += -polar / u + hv.skron(self.Yinv, cplx)
        return (H + H.T) / 2


__all__ = ["NonnegCone", "SOCCone", "RelEntropyCone", "nonneg_barrier", "soc_is_interior", "relative_entropy"]
