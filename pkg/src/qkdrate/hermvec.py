"""Real vectorization of Hermitian matrices and of maps acting on them.

Layout (stable; the problem-file format depends on it):

* column-major upper triangle, i.e. for ``j = 0..n-1`` the entries
  ``(0, j), (1, j), ..., (j, j)``;
* off-diagonal entries are multiplied by ``sqrt(2)`` so that the Euclidean
  inner product of two vectors equals ``Re tr(X Y)``;
* in complex mode each off-diagonal entry takes two consecutive slots,
  ``(sqrt(2) Re X_ij, -sqrt(2) Im X_ij)``.

Real mode stores ``n(n+1)/2`` numbers, complex mode ``n**2``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import mpmath
import numpy as np

from . import precision as P


def svec_dim(n: int, iscomplex: bool) -> int:
    return n * n if iscomplex else n * (n + 1) // 2


def side_dim(length: int, iscomplex: bool) -> int:
    """Matrix side for an svec of ``length``; raises if not realizable."""
    if iscomplex:
        n = math.isqrt(length)
        if n * n != length or n < 1:
            raise ValueError(f"length {length} is not a complex svec length (n^2)")
        return n
    n = (math.isqrt(8 * length + 1) - 1) // 2
    if n * (n + 1) // 2 != length or n < 1:
        raise ValueError(f"length {length} is not a real svec length (n(n+1)/2)")
    return n


@dataclass(frozen=True)
class _Layout:
    """Index tables mapping svec slots to matrix entries."""

    n: int
    iscomplex: bool
    diag_pos: np.ndarray
    off_i: np.ndarray
    off_j: np.ndarray
    off_re: np.ndarray
    off_im: np.ndarray | None
    # per-slot (row, col) of the first and second vec entry and their weights
    r1: np.ndarray
    c1: np.ndarray
    r2: np.ndarray
    c2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@functools.lru_cache(maxsize=64)
def _layout(n: int, iscomplex: bool) -> _Layout:
    diag_pos, off_i, off_j, off_re, off_im = [], [], [], [], []
    k = 0
    for j in range(n):
        for i in range(j):
            off_i.append(i)
            off_j.append(j)
            off_re.append(k)
            k += 1
            if iscomplex:
                off_im.append(k)
                k += 1
        diag_pos.append(k)
        k += 1
    N = k
    s = 1 / np.sqrt(2.0)
    r1 = np.empty(N, dtype=int)
    c1 = np.empty(N, dtype=int)
    r2 = np.empty(N, dtype=int)
    c2 = np.empty(N, dtype=int)
    w1 = np.zeros(N, dtype=complex)
    w2 = np.zeros(N, dtype=complex)
    for d, p in enumerate(diag_pos):
        r1[p] = c1[p] = r2[p] = c2[p] = d
        w1[p] = 1.0
    for t, (i, j) in enumerate(zip(off_i, off_j)):
        p = off_re[t]
        r1[p], c1[p], r2[p], c2[p] = i, j, j, i
        w1[p] = w2[p] = s
        if iscomplex:
            q = off_im[t]
            r1[q], c1[q], r2[q], c2[q] = i, j, j, i
            w1[q], w2[q] = -1j * s, 1j * s
    return _Layout(
        n,
        iscomplex,
        np.array(diag_pos, dtype=int),
        np.array(off_i, dtype=int),
        np.array(off_j, dtype=int),
        np.array(off_re, dtype=int),
        np.array(off_im, dtype=int) if iscomplex else None,
        r1,
        c1,
        r2,
        c2,
        w1,
        w2,
    )


def _check_square(X):
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {X.shape}")


def svec(X, iscomplex: bool | None = None) -> np.ndarray:
    """Vectorize a Hermitian matrix (or a stack of them along leading axes).

    Parameters
    ----------
    X : array_like, shape (..., n, n)
    iscomplex : bool, optional
        Field mode. Defaults to complex iff ``X`` has complex entries. In real
        mode only the real part of ``X`` is read.

    Examples
    --------
    >>> svec(np.array([[1.0, 2.0], [2.0, 3.0]]))
    array([1.        , 2.82842712, 3.        ])
    """
    X = np.asarray(X)
    _check_square(X)
    if iscomplex is None:
        iscomplex = P.iscomplex(X)
    n = X.shape[-1]
    lay = _layout(n, iscomplex)
    ext = P.is_extended(X)
    out = np.zeros(X.shape[:-2] + (svec_dim(n, iscomplex),), dtype=object if ext else float)
    r2 = P.sqrt2(X)
    d = np.arange(n)
    out[..., lay.diag_pos] = P.real(X[..., d, d])
    off = X[..., lay.off_i, lay.off_j]
    out[..., lay.off_re] = r2 * P.real(off)
    if iscomplex:
        out[..., lay.off_im] = -r2 * P.imag(off)
    return out


def smat(v, iscomplex: bool = False) -> np.ndarray:
    """Inverse of :func:`svec`; accepts stacks along leading axes."""
    v = np.asarray(v)
    n = side_dim(v.shape[-1], iscomplex)
    lay = _layout(n, iscomplex)
    ext = P.is_extended(v)
    if ext:
        dtype = object
    else:
        dtype = complex if iscomplex else float
    X = np.zeros(v.shape[:-1] + (n, n), dtype=dtype)
    d = np.arange(n)
    X[..., d, d] = v[..., lay.diag_pos]
    inv_r2 = 1 / P.sqrt2(v)
    off = v[..., lay.off_re] * inv_r2
    if iscomplex:
        off = off - 1j * (v[..., lay.off_im] * inv_r2)
    X[..., lay.off_i, lay.off_j] = off
    X[..., lay.off_j, lay.off_i] = off.conj() if iscomplex else off
    return X


def svec_weights(G, iscomplex: bool) -> np.ndarray:
    """Slot weights ``w`` with ``svec(G * Y) == w * svec(Y)`` for real symmetric ``G``."""
    G = np.asarray(G)
    n = G.shape[-1]
    lay = _layout(n, iscomplex)
    w = np.zeros(svec_dim(n, iscomplex), dtype=G.dtype)
    d = np.arange(n)
    w[lay.diag_pos] = G[d, d]
    w[lay.off_re] = G[lay.off_i, lay.off_j]
    if iscomplex:
        w[lay.off_im] = G[lay.off_i, lay.off_j]
    return w


def inner(X, Y) -> float:
    """``Re tr(X Y)`` for Hermitian ``X``, ``Y``."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape:
        raise ValueError(f"dimension mismatch {X.shape} vs {Y.shape}")
    if P.is_extended(X) or P.is_extended(Y):
        return mpmath.re(np.sum(X * Y.conj()))
    return float(np.real(np.vdot(Y, X)))


def hermitian_part(X):
    return (X + X.conj().T) / 2


def skron(K, iscomplex: bool | None = None) -> np.ndarray:
    """Matrix of ``X -> K X K^dagger`` in svec coordinates.

    Built column by column from outer products of the columns of ``K``, so
    memory scales with the size of the output rather than with ``K* (x) K``.
    """
    K = np.asarray(K)
    if K.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {K.shape}")
    if iscomplex is None:
        iscomplex = P.iscomplex(K)
    d_out, d_in = K.shape
    lay = _layout(d_in, iscomplex)
    # outer[a, b] = k_a k_b^dagger
    outer = np.einsum("pa,qb->abpq", K, K.conj())
    dtype = outer.dtype if P.is_extended(K) or not iscomplex else complex
    E = np.empty((svec_dim(d_in, iscomplex), d_out, d_out), dtype=dtype)
    d = np.arange(d_in)
    E[lay.diag_pos] = outer[d, d]
    inv_r2 = 1 / P.sqrt2(K)
    ab = outer[lay.off_i, lay.off_j]
    ba = outer[lay.off_j, lay.off_i]
    E[lay.off_re] = (ab + ba) * inv_r2
    if iscomplex:
        E[lay.off_im] = (ba - ab) * (1j * inv_r2)
    return svec(E, iscomplex).T


def svec_operator(T4, iscomplex: bool) -> np.ndarray:
    """Compress a full operator ``Y_ab = sum_cd T4[a,b,c,d] X_cd`` to svec coordinates.

    ``T4`` must preserve Hermiticity; the result is real.
    """
    n = T4.shape[0]
    lay = _layout(n, iscomplex)
    ext = P.is_extended(T4)
    rows = ((lay.r1, lay.c1, lay.w1), (lay.r2, lay.c2, lay.w2))
    out = None
    for rk, ck, wk in rows:
        wk_c = P.asarray(wk.conj(), "extended") if ext else wk.conj()
        for rl, cl, wl in rows:
            if not np.any(wk) or not np.any(wl):
                continue
            wl_c = P.asarray(wl, "extended") if ext else wl
            blk = T4[rk[:, None], ck[:, None], rl[None, :], cl[None, :]]
            term = wk_c[:, None] * blk * wl_c[None, :]
            out = term if out is None else out + term
    return np.ascontiguousarray(P.real(out))


def congruence_operator(M, weights, iscomplex: bool) -> np.ndarray:
    """svec matrix of ``X -> M^dagger (W * (M X M^dagger)) M`` for real symmetric ``W``.

    This is the shape of every spectral Hessian term in the library: ``M``
    is an eigenvector-rotated Kraus operator and ``W`` a divided-difference
    table. Costs ``O(p n^4)`` for ``M`` of shape ``(p, n)``.
    """
    M = np.asarray(M)
    p, n = M.shape
    # Q[i, a, c] = conj(M[i, a]) M[i, c]
    Q = (M.conj()[:, :, None] * M[:, None, :]).reshape(p, n * n)
    R = Q.T @ (weights @ Q.conj())
    T4 = R.reshape(n, n, n, n).transpose(0, 2, 1, 3)
    return svec_operator(T4, iscomplex)


class KrausMap:
    """Completely positive map ``X -> sum_i K_i X K_i^dagger``."""

    def __init__(self, ops: Sequence, *, identity: bool = False):
        ops = [np.asarray(K) for K in ops]
        if not ops:
            raise ValueError("a Kraus map needs at least one operator")
        for K in ops:
            if K.ndim != 2:
                raise ValueError(f"Kraus operators must be 2-d, got shape {K.shape}")
        d_in = ops[0].shape[1]
        d_out = ops[0].shape[0]
        for K in ops:
            if K.shape != (d_out, d_in):
                raise ValueError(f"inconsistent Kraus shapes {K.shape} vs {(d_out, d_in)}")
        self.ops = ops
        self.in_dim = d_in
        self.out_dim = d_out
        self.is_identity = identity

    @classmethod
    def identity(cls, n: int, precision: str = "double") -> "KrausMap":
        return cls([P.asarray(np.eye(n), precision)], identity=True)

    def __repr__(self):
        return f"KrausMap({len(self.ops)} ops, {self.in_dim} -> {self.out_dim})"

    @property
    def iscomplex(self) -> bool:
        return any(P.iscomplex(K) for K in self.ops)

    def apply(self, X, adjoint: bool = False):
        X = np.asarray(X)
        want = self.out_dim if adjoint else self.in_dim
        if X.shape != (want, want):
            raise ValueError(f"map expects a {want}x{want} matrix, got {X.shape}")
        if self.is_identity:
            return X
        if adjoint:
            return sum(K.conj().T @ X @ K for K in self.ops)
        return sum(K @ X @ K.conj().T for K in self.ops)

    __call__ = apply

    def adjoint(self, Y):
        return self.apply(Y, adjoint=True)

    def matrix(self, iscomplex: bool) -> np.ndarray:
        """Dense svec-coordinate matrix, shape ``(svec_dim(out), svec_dim(in))``."""
        return sum(skron(K, iscomplex) for K in self.ops)

    def compose(self, V) -> "KrausMap":
        """The map ``X -> self(V X V^dagger)``."""
        V = np.asarray(V)
        return KrausMap([K @ V for K in self.ops])

    def conjugate_output(self, W) -> "KrausMap":
        """The map ``X -> W^dagger self(X) W``."""
        W = np.asarray(W)
        return KrausMap([W.conj().T @ K for K in self.ops])

    def to_precision(self, precision: str) -> "KrausMap":
        return KrausMap([P.asarray(K, precision) for K in self.ops], identity=self.is_identity)


def kraus_apply(kmap: KrausMap, X, adjoint: bool = False):
    """Forward ``sum K X K^dagger`` or adjoint ``sum K^dagger X K``."""
    return kmap.apply(X, adjoint=adjoint)


def direct_sum_matrix(blocks: Sequence[KrausMap], iscomplex: bool) -> np.ndarray:
    """svec matrix of the block-diagonal map ``X -> diag(B_1(X), B_2(X), ...)``."""
    return block_diag_map(blocks).matrix(iscomplex)


def block_diag_map(blocks: Sequence[KrausMap]) -> KrausMap:
    """Single Kraus map onto the direct sum of the block outputs."""
    n_out = sum(b.out_dim for b in blocks)
    n_in = blocks[0].in_dim
    ops = []
    offset = 0
    for b in blocks:
        for K in b.ops:
            big = np.zeros((n_out, n_in), dtype=K.dtype)
            big[offset : offset + b.out_dim] = K
            ops.append(big)
        offset += b.out_dim
    return KrausMap(ops)
