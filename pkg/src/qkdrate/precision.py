"""Scalar backends.

Two scalar types are supported throughout the library:

* ``"double"`` -- native IEEE float64 / complex128 numpy arrays, with LAPACK
  doing the heavy lifting.
* ``"extended"`` -- numpy ``object`` arrays holding :mod:`mpmath` numbers at
  ``EXTENDED_BITS`` bits of mantissa (quadruple-like).

The precision of a computation is read off the dtype of its input arrays, so
callers pick a type once (when building the data) and every downstream routine
follows. The helpers below are the only places where the two backends differ.
"""

from __future__ import annotations

import contextlib
from fractions import Fraction

import mpmath
import numpy as np
import scipy.linalg

EXTENDED_BITS = 113
PRECISIONS = ("double", "extended")

_mp_log = np.frompyfunc(mpmath.log, 1, 1)
_mp_log1p = np.frompyfunc(mpmath.log1p, 1, 1)
_mp_sqrt = np.frompyfunc(mpmath.sqrt, 1, 1)
_mp_re = np.frompyfunc(mpmath.re, 1, 1)
_mp_im = np.frompyfunc(mpmath.im, 1, 1)


def is_extended(a) -> bool:
    return isinstance(a, np.ndarray) and a.dtype == object


def precision_of(*arrays) -> str:
    return "extended" if any(is_extended(a) for a in arrays) else "double"


def check_precision(precision: str) -> str:
    if precision not in PRECISIONS:
        raise ValueError(f"unknown precision {precision!r}; expected one of {PRECISIONS}")
    return precision


def context(precision: str = "double"):
    """Context manager activating the working precision for ``precision``."""
    check_precision(precision)
    if precision == "extended":
        return mpmath.workprec(EXTENDED_BITS)
    return contextlib.nullcontext()


def machine_eps(precision: str = "double"):
    if precision == "extended":
        return mpmath.mpf(2) ** (1 - EXTENDED_BITS)
    return np.finfo(np.float64).eps


def scalar(value, precision: str = "double"):
    """Convert a Python number / decimal string / Fraction to the scalar type.

    Decimal strings and fractions are converted exactly-as-possible in extended
    precision (``"0.95"`` does not go through float64 first).
    """
    if precision == "extended":
        if isinstance(value, Fraction):
            return mpmath.mpf(value.numerator) / value.denominator
        if isinstance(value, (complex, mpmath.mpc)) and not isinstance(value, mpmath.mpf):
            return mpmath.mpc(value)
        return mpmath.mpf(value)
    if isinstance(value, (str, Fraction, mpmath.mpf)):
        return float(value)
    if isinstance(value, mpmath.mpc):
        return complex(value)
    return value


def asarray(a, precision: str = "double") -> np.ndarray:
    """Array in the requested scalar type (complex-ness preserved)."""
    if precision == "extended":
        arr = np.asarray(a)
        if arr.dtype == object:
            out = np.empty(arr.shape, dtype=object)
            for idx, v in np.ndenumerate(arr):
                out[idx] = v if isinstance(v, (mpmath.mpf, mpmath.mpc)) else scalar(v, "extended")
            return out
        conv = (lambda v: mpmath.mpc(complex(v))) if np.iscomplexobj(arr) else (lambda v: mpmath.mpf(float(v)))
        out = np.empty(arr.shape, dtype=object)
        for idx, v in np.ndenumerate(arr):
            out[idx] = conv(v)
        return out
    arr = np.asarray(a)
    if arr.dtype == object:
        if any(isinstance(v, (mpmath.mpc, complex)) for v in arr.flat):
            return np.array([complex(v) for v in arr.flat], dtype=complex).reshape(arr.shape)
        return np.array([float(v) for v in arr.flat], dtype=float).reshape(arr.shape)
    if np.iscomplexobj(arr):
        return arr.astype(complex)
    return arr.astype(float)


def to_double(a) -> np.ndarray:
    return asarray(a, "double")


def iscomplex(a) -> bool:
    if is_extended(a):
        return any(isinstance(v, mpmath.mpc) for v in a.flat)
    return np.iscomplexobj(a)


def real(a):
    if is_extended(a):
        return _mp_re(a)
    return np.real(a)


def imag(a):
    if is_extended(a):
        return _mp_im(a)
    return np.imag(a)


def log(a):
    if is_extended(a):
        return _mp_log(a)
    if isinstance(a, (mpmath.mpf, mpmath.mpc)):
        return mpmath.log(a)
    return np.log(a)


def log1p(a):
    if is_extended(a):
        return _mp_log1p(a)
    return np.log1p(a)


def sqrt(a):
    if is_extended(a):
        return _mp_sqrt(a)
    if isinstance(a, (mpmath.mpf, mpmath.mpc)):
        return mpmath.sqrt(a)
    return np.sqrt(a)


def const(value, like):
    """``value`` in the scalar type of the array ``like``."""
    return scalar(value, precision_of(like))


def sqrt2(like):
    if is_extended(like):
        return mpmath.sqrt(2)
    return np.sqrt(2.0)


def norm(v) -> float:
    """Euclidean / Frobenius norm, in the scalar type of ``v``."""
    if is_extended(v):
        return mpmath.sqrt(sum(abs(x) ** 2 for x in v.flat))
    return np.linalg.norm(v)


def to_float(x) -> float:
    return float(x.real if isinstance(x, (complex, mpmath.mpc)) else x)


def _to_mp_matrix(a):
    return mpmath.matrix(a.tolist())


def _from_mp_matrix(m, shape=None):
    out = np.array(m.tolist(), dtype=object)
    return out.reshape(shape) if shape is not None else out


def eigh(X):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix."""
    if is_extended(X):
        n = X.shape[0]
        M = _to_mp_matrix(X)
        if iscomplex(X):
            E, Q = mpmath.eighe(M)
        else:
            E, Q = mpmath.eigsy(M)
        lam = np.array([E[i] for i in range(n)], dtype=object)
        U = _from_mp_matrix(Q, (n, n))
        order = sorted(range(n), key=lambda i: lam[i])
        return lam[order], U[:, order]
    return np.linalg.eigh(X)


def cholesky(H):
    """Lower Cholesky factor; raises ``np.linalg.LinAlgError`` if not PD."""
    if is_extended(H):
        try:
            L = mpmath.cholesky(_to_mp_matrix(H))
        except (ValueError, ZeroDivisionError) as exc:
            raise np.linalg.LinAlgError(str(exc)) from exc
        return _from_mp_matrix(L, H.shape)
    return scipy.linalg.cholesky(H, lower=True, check_finite=True)


def cho_solve(L, B):
    if is_extended(L):
        B2 = B.reshape(B.shape[0], -1)
        Y = _forward(L, B2)
        X = _backward(L.T, Y)
        return X.reshape(B.shape)
    return scipy.linalg.cho_solve((L, True), B, check_finite=False)


def _forward(L, B):
    n = L.shape[0]
    Y = np.empty(B.shape, dtype=object)
    for i in range(n):
        Y[i] = (B[i] - L[i, :i] @ Y[:i]) / L[i, i] if i else B[i] / L[i, i]
    return Y


def _backward(R, B):
    n = R.shape[0]
    X = np.empty(B.shape, dtype=object)
    for i in range(n - 1, -1, -1):
        X[i] = (B[i] - R[i, i + 1 :] @ X[i + 1 :]) / R[i, i] if i < n - 1 else B[i] / R[i, i]
    return X


def solve(M, b):
    """Dense general solve ``M x = b`` (small systems)."""
    if is_extended(M) or is_extended(b):
        M = asarray(M, "extended")
        b = asarray(b, "extended")
        Mm = _to_mp_matrix(M)
        if b.ndim == 1:
            return np.array(list(mpmath.lu_solve(Mm, mpmath.matrix(b.tolist()))), dtype=object)
        cols = [list(mpmath.lu_solve(Mm, mpmath.matrix(b[:, j].tolist()))) for j in range(b.shape[1])]
        return np.array(cols, dtype=object).T
    return scipy.linalg.solve(M, b)
