"""Common interface of barrier oracles.

A cone works on flat real vectors. ``cone.state(x)`` tests strict interior
membership and, if ``x`` is interior, returns a :class:`ConeState` holding
everything expensive (eigendecompositions, inverses) so that every derivative
evaluated at ``x`` reuses it. Outside the interior ``state`` returns ``None``.
"""

from __future__ import annotations

import numpy as np

from .. import precision as P


class Cone:
    """A proper cone with a logarithmically homogeneous barrier."""

    kind: str = "cone"
    #: whether states implement :meth:`ConeState.third_order`
    has_third_order: bool = True

    dim: int
    nu: float

    def state(self, x) -> "ConeState | None":
        raise NotImplementedError

    def is_interior(self, x):
        """``(True, state)`` for interior points, ``(False, None)`` otherwise."""
        st = self.state(x)
        return st is not None, st

    def initial_point(self, precision: str = "double") -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        """Serializable description (see :mod:`qkdrate.problem_io`)."""
        raise NotImplementedError


class ConeState:
    """Barrier oracle at a fixed interior point ``x``."""

    x: np.ndarray

    def barrier(self):
        raise NotImplementedError

    def gradient(self) -> np.ndarray:
        raise NotImplementedError

    def hess_apply(self, v) -> np.ndarray:
        raise NotImplementedError

    def third_order(self, v) -> np.ndarray:
        """``grad^3 f(x)[v, v]`` as a vector."""
        raise NotImplementedError

    def hessian(self) -> np.ndarray:
        """Dense Hessian; the default assembles it column by column."""
        n = self.x.shape[0]
        eye = P.asarray(np.eye(n), P.precision_of(self.x))
        return np.stack([self.hess_apply(eye[:, j]) for j in range(n)], axis=1)

    def factor(self) -> "HessianFactor":
        """Factorization used to apply the inverse Hessian."""
        return DenseFactor(self.hessian())


class HessianFactor:
    def solve(self, B):
        raise NotImplementedError


class DenseFactor(HessianFactor):
    """Cholesky factorization of a dense SPD matrix."""

    def __init__(self, H):
        H = (H + H.T) / 2
        self.L = P.cholesky(H)

    def solve(self, B):
        return P.cho_solve(self.L, B)


def dot(a, b):
    """Euclidean inner product in the scalar type of the operands."""
    if P.is_extended(a) or P.is_extended(b):
        return sum(x * y for x, y in zip(a, b))
    return float(np.dot(a, b))
