"""Spectral calculus for the matrix logarithm.

Everything here works from an eigendecomposition ``X = U diag(lam) U^dagger``:
the von Neumann entropy, the first and second divided differences of ``log``
(``gamma1``, ``gamma2``) and the first and second Frechet derivatives of the
matrix logarithm built from them (Daleckii-Krein formulas). All logarithms
are natural.
"""

from __future__ import annotations

import functools

import mpmath
import numpy as np

from . import precision as P

# Above this side length the full second divided-difference tensor is not
# stored; d2log contracts it one slice at a time instead.
GAMMA2_FULL_MAX_DIM = 64


class Eig:
    """Eigendecomposition ``X = U diag(lam) U^dagger`` with ascending ``lam``.

    Divided-difference tables and ``log X`` are computed lazily and cached,
    so one decomposition serves every derivative evaluated at the same point.
    """

    __slots__ = ("lam", "U", "__dict__")

    def __init__(self, lam, U):
        self.lam = lam
        self.U = U

    @property
    def dim(self) -> int:
        return self.lam.shape[0]

    @property
    def precision(self) -> str:
        return P.precision_of(self.lam)

    def reconstruct(self):
        return (self.U * self.lam[None, :]) @ self.U.conj().T

    @functools.cached_property
    def log_lam(self):
        _require_positive(self.lam)
        return P.log(self.lam)

    @functools.cached_property
    def log_matrix(self):
        return (self.U * self.log_lam[None, :]) @ self.U.conj().T

    @functools.cached_property
    def gamma1(self):
        return gamma1(self.lam)

    @functools.cached_property
    def gamma2(self):
        return gamma2(self.lam, self.gamma1)

    def rotate_in(self, xi):
        """``U^dagger xi U``."""
        return self.U.conj().T @ xi @ self.U

    def rotate_out(self, Y):
        """``U Y U^dagger``."""
        return self.U @ Y @ self.U.conj().T


def eig_hermitian(X) -> Eig:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {X.shape}")
    if not P.is_extended(X) and not np.all(np.isfinite(X)):
        raise np.linalg.LinAlgError("matrix has non-finite entries")
    try:
        lam, U = P.eigh(X)
    except (np.linalg.LinAlgError, ZeroDivisionError, ValueError) as exc:
        raise np.linalg.LinAlgError(f"Hermitian eigensolver failed for {X.shape} matrix: {exc}") from exc
    return Eig(lam, U)


def degeneracy_tol(precision: str = "double"):
    """Relative gap below which two eigenvalues are treated as equal."""
    return P.sqrt(P.machine_eps(precision))


def _require_positive(lam):
    if any(x <= 0 for x in lam):
        raise ValueError(f"logarithm needs positive eigenvalues, got minimum {min(lam)}")


def entropy_of_eigenvalues(lam):
    """``-sum lam log lam`` (nats) with ``0 log 0 = 0``.

    Eigenvalues that are negative by more than rounding noise are an error.
    """
    if len(lam) == 0:
        return P.scalar(0, P.precision_of(lam))
    prec = P.precision_of(lam)
    scale = max(abs(x) for x in lam)
    tol = len(lam) * P.machine_eps(prec) * max(scale, 1) * 10
    total = P.scalar(0, prec)
    for x in lam:
        if x < -tol:
            raise ValueError(f"entropy of a matrix with negative eigenvalue {x}")
        if x > 0:
            total -= x * (mpmath.log(x) if prec == "extended" else np.log(x))
    return total


def entropy(X) -> float:
    """Von Neumann entropy ``-tr X log X`` in nats (``X`` or an :class:`Eig`)."""
    eig = X if isinstance(X, Eig) else eig_hermitian(X)
    return entropy_of_eigenvalues(eig.lam)


def gamma1(lam):
    """First divided differences of ``log``: ``(log l_i - log l_j) / (l_i - l_j)``.

    Entries with ``|l_i - l_j| <= sqrt(eps) max(l_i, l_j)`` use the limit
    ``1 / mean(l_i, l_j)`` (exactly ``1/l_i`` on the diagonal). Close but
    distinct eigenvalues go through ``log1p`` to avoid cancellation.
    """
    lam = np.asarray(lam)
    _require_positive(lam)
    prec = P.precision_of(lam)
    tol = degeneracy_tol(prec)
    li = lam[:, None]
    lj = lam[None, :]
    diff = li - lj
    big = np.maximum(li, lj)
    absdiff = np.abs(diff)
    degenerate = absdiff <= tol * big
    near = absdiff < big / 2
    one = P.scalar(1, prec)
    safe = np.where(degenerate, one, diff)
    logl = P.log(lam)
    far_val = (logl[:, None] - logl[None, :]) / safe
    near_val = P.log1p(np.where(degenerate, 0 * one, diff) / lj) / safe
    val = np.where(degenerate, 2 / (li + lj), np.where(near, near_val, far_val))
    # the near branch is not exactly symmetric in rounding; mirror the upper triangle
    return np.triu(val) + np.triu(val, 1).T


def gamma2(lam, g1=None):
    """Second divided differences of ``log`` as an ``(n, n, n)`` tensor.

    ``G[i, j, k] = log[l_i, l_j, l_k]``: the recursive difference quotient of
    ``gamma1`` over whichever pair is non-degenerate, and ``-1 / (2 m^2)``
    (``m`` the mean) when all three eigenvalues coincide.
    """
    lam = np.asarray(lam)
    if g1 is None:
        g1 = gamma1(lam)
    return np.stack([_gamma2_slice(lam, g1, i) for i in range(lam.shape[0])])


def _gamma2_slice(lam, g1, i):
    """``G[i, :, :]``."""
    prec = P.precision_of(lam)
    tol = degeneracy_tol(prec)
    one = P.scalar(1, prec)
    lj = lam[:, None]
    lk = lam[None, :]
    li = lam[i]
    # branch 1: l_j != l_k -> (g[i,j] - g[i,k]) / (l_j - l_k)
    d_jk = lj - lk
    deg_jk = np.abs(d_jk) <= tol * np.maximum(lj, lk)
    b1 = (g1[i][:, None] - g1[i][None, :]) / np.where(deg_jk, one, d_jk)
    # branch 2: l_j == l_k but l_i != l_k -> (g[i,j] - g[j,k]) / (l_i - l_k)
    d_ik = li - lk
    deg_ik = np.abs(d_ik) <= tol * np.maximum(li, lk)
    b2 = (g1[i][:, None] - g1) / np.where(deg_ik, one, d_ik)
    # branch 3: all equal
    m = (li + lj + lk) / 3
    b3 = -1 / (2 * m * m)
    return np.where(deg_jk, np.where(deg_ik, b3, b2), b1)


def dlog(eig: Eig, xi):
    """Frechet derivative of ``log`` at ``eig`` in direction ``xi``."""
    xi = np.asarray(xi)
    if xi.shape != (eig.dim, eig.dim):
        raise ValueError(f"direction shape {xi.shape} does not match dimension {eig.dim}")
    return eig.rotate_out(eig.gamma1 * eig.rotate_in(xi))


def d2log_rotated(eig: Eig, xt):
    """``M_ij = 2 sum_k xt_ik xt_kj G_ijk`` for an already rotated direction ``xt``."""
    n = eig.dim
    if n <= GAMMA2_FULL_MAX_DIM:
        G = eig.gamma2
        return 2 * np.einsum("ik,kj,ijk->ij", xt, xt, G)
    g1 = eig.gamma1
    rows = [2 * np.einsum("k,kj,jk->j", xt[i], xt, _gamma2_slice(eig.lam, g1, i)) for i in range(n)]
    return np.stack(rows)


def d2log_polar_rotated(eig: Eig, at, bt):
    """Polarized form ``R_ij = sum_k G_ijk (at_ik bt_kj + bt_ik at_kj)`` in the eigenbasis.

    ``d2log_polar_rotated(e, x, x)`` equals :func:`d2log_rotated`; with
    ``at = U^dagger A U`` it is also the gradient in ``B`` of
    ``tr A d2log[B, B] / 2``.
    """
    n = eig.dim
    if n <= GAMMA2_FULL_MAX_DIM:
        G = eig.gamma2
        return np.einsum("ik,kj,ijk->ij", at, bt, G) + np.einsum("ik,kj,ijk->ij", bt, at, G)
    g1 = eig.gamma1
    rows = []
    for i in range(n):
        Gi = _gamma2_slice(eig.lam, g1, i)
        rows.append(np.einsum("k,kj,jk->j", at[i], bt, Gi) + np.einsum("k,kj,jk->j", bt[i], at, Gi))
    return np.stack(rows)


def d2log(eig: Eig, xi):
    """Second Frechet derivative of ``log`` at ``eig`` applied to ``(xi, xi)``."""
    xi = np.asarray(xi)
    if xi.shape != (eig.dim, eig.dim):
        raise ValueError(f"direction shape {xi.shape} does not match dimension {eig.dim}")
    return eig.rotate_out(d2log_rotated(eig, eig.rotate_in(xi)))


def binary_entropy(p):
    """``h(p)`` in bits; an :mod:`mpmath` argument gives an extended-precision result."""
    if isinstance(p, mpmath.mpf):
        with P.context("extended"):
            if p <= 0 or p >= 1:
                return mpmath.mpf(0)
            return -(p * mpmath.log(p) + (1 - p) * mpmath.log(1 - p)) / mpmath.log(2)
    if p <= 0 or p >= 1:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))
