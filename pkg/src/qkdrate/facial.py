"""Facial reduction for key-rate problems.

The feasible states ``{rho >= 0 : tr(E_k rho) = p_k}`` may all be singular, in
which case the conic problem has no interior point. We restrict everything
to the support of a maximum-rank feasible state (an isometry ``V``), rewrite
the constraints as ``tr(V^dagger E_k V sigma) = p_k`` and restrict the maps
``sigma -> G(V sigma V^dagger)`` and ``sigma -> Z(G(V sigma V^dagger))`` to the
supports of their ranges, so that ``H(G(V sigma V^dagger)) = H(Ghat(sigma))``
and likewise for ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import hermvec as hv
from . import precision as P
from .solver import ConicProblem, InfeasibleError, SolverOptions, solve

#: default relative eigenvalue threshold for numerically detected supports
DEFAULT_RANK_TOL = 1e-7


@dataclass
class ReductionCertificate:
    """Everything needed to map the reduced problem back to the original one."""

    V: np.ndarray
    F: list
    p: list
    dropped: list
    ghat: hv.KrausMap
    zhat: list
    witness: np.ndarray | None
    method: str
    rank_tol: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def reduced_dim(self) -> int:
        return self.V.shape[1]

    def lift(self, sigma):
        """``V sigma V^dagger``."""
        return self.V @ sigma @ self.V.conj().T


def _is_real(ops) -> bool:
    return not any(P.iscomplex(np.asarray(K)) for K in ops)


def range_support(X, rank_tol: float = DEFAULT_RANK_TOL):
    """Orthonormal basis of the eigenvectors of PSD ``X`` with ``lam > rank_tol * lam_max``."""
    X = hv.hermitian_part(np.asarray(X))
    lam, U = np.linalg.eigh(X)
    top = lam[-1]
    if top <= 0:
        raise ValueError("matrix has empty support")
    keep = lam > rank_tol * top
    return U[:, keep][:, ::-1], lam


def find_state_support(
    E_list: Sequence,
    p_list: Sequence,
    dim: int,
    *,
    witness=None,
    rank_tol: float = DEFAULT_RANK_TOL,
    iscomplex: bool | None = None,
    options: SolverOptions | None = None,
):
    """Isometry onto the support of a maximum-rank state with ``tr(E_k rho) = p_k``.

    If a positive definite ``witness`` satisfying the constraints is supplied
    the support is the whole space. Otherwise an auxiliary problem

        maximize t   s.t.  rho = Z + t I,  Z >= 0,  t >= 0,  tr(E_k rho) = p_k

    is solved; its central path converges to the relative interior of the
    optimal face, so the eigenvalues of the returned ``rho`` above
    ``rank_tol * lam_max`` span the support. Returns ``(V, info)``.
    """
    E_list = [np.asarray(Ek) for Ek in E_list]
    if iscomplex is None:
        iscomplex = not _is_real(E_list)
    info = {"method": None, "rank_tol": rank_tol}
    if witness is not None:
        witness = np.asarray(witness)
        resid = max(abs(hv.inner(Ek, witness) - pk) for Ek, pk in zip(E_list, p_list))
        lam = np.linalg.eigvalsh(witness)
        if resid <= 1e-10 and lam[0] > rank_tol * lam[-1]:
            info.update(method="witness", min_eig=float(lam[0]))
            eye = np.eye(dim)
            return (eye.astype(complex) if iscomplex else eye), info
    # auxiliary problem; the cone with G = Z = identity has barrier
    # -log h - logdet Z, and h is pinned to 1
    from .cones import NonnegCone, QKDCone

    cone = QKDCone(hv.KrausMap.identity(dim), [hv.KrausMap.identity(dim)], iscomplex)
    N = cone.dim
    rows, rhs = [], []
    row = np.zeros(N + 1)
    row[0] = 1.0
    rows.append(row)
    rhs.append(1.0)
    for Ek, pk in zip(E_list, p_list):
        row = np.zeros(N + 1)
        row[1:N] = hv.svec(Ek, iscomplex)
        row[N] = np.real(np.trace(Ek))
        rows.append(row)
        rhs.append(float(pk))
    c = np.zeros(N + 1)
    c[N] = -1.0
    prob = ConicProblem(c, np.array(rows), np.array(rhs), [cone, NonnegCone(1)])
    opts = options or SolverOptions(tol_gap=1e-10, tol_feas=1e-10)
    rep = solve(prob, opts)
    info.update(method="auxiliary", report=rep)
    if rep.status == "infeasible_detected":
        raise InfeasibleError("no state satisfies the constraints")
    if rep.x is None:
        raise InfeasibleError(f"auxiliary support problem failed: {rep.status} {rep.message}")
    Z = hv.smat(rep.x[1:N], iscomplex)
    t = rep.x[N]
    rho = Z + t * np.eye(dim)
    V, lam = range_support(rho, rank_tol)
    info.update(eigenvalues=lam, t=float(t), rho=hv.hermitian_part(rho))
    return V, info


def reduce_constraints(V, E_list: Sequence, p_list: Sequence, tol: float = 1e-9):
    """``F_k = V^dagger E_k V``; drop rows that become dependent.

    Returns ``(F_list, p_list, dropped_indices)``. A dropped row whose
    right-hand side is not implied by the kept rows raises
    :class:`InfeasibleError` (e.g. ``0 = p_k`` with ``p_k != 0``).
    """
    V = np.asarray(V)
    F = [hv.hermitian_part(V.conj().T @ np.asarray(Ek) @ V) for Ek in E_list]
    p = [float(pk) for pk in p_list]
    iscomplex = not _is_real(F)
    M = np.array([hv.svec(Fk, iscomplex) for Fk in F]).reshape(len(F), -1)
    keep, dropped = [], []
    for k in range(len(F)):
        trial = keep + [k]
        if np.linalg.matrix_rank(M[trial], tol=tol * max(1.0, np.abs(M).max())) == len(trial):
            keep.append(k)
        else:
            dropped.append(k)
    for k in dropped:
        if keep:
            z, *_ = np.linalg.lstsq(M[keep].T, M[k], rcond=None)
            implied = float(z @ np.array([p[i] for i in keep]))
        else:
            implied = 0.0
        if abs(implied - p[k]) > 1e-8 * (1 + abs(p[k])):
            raise InfeasibleError(
                f"reduced constraint {k} reads {implied:.6g} = {p[k]:.6g}; the constraints are inconsistent"
            )
    return [F[k] for k in keep], [p[k] for k in keep], dropped


def _identity_like(K) -> bool:
    K = P.to_double(np.asarray(K))
    return K.shape[0] == K.shape[1] and np.allclose(K.conj().T @ K, np.eye(K.shape[0]), atol=1e-13)


def reduce_map(kmap: hv.KrausMap, V, rank_tol: float = DEFAULT_RANK_TOL) -> hv.KrausMap:
    """Restrict ``sigma -> kmap(V sigma V^dagger)`` to the support of its range.

    The support ``W`` is read off ``kmap(V V^dagger)`` (the image of a
    full-rank state). The reduced Kraus operators are ``W^dagger K_i V``; if
    the range is already full the operators are ``K_i V`` unchanged. A single
    unitary Kraus operator is replaced by the identity map (entropy is
    unitarily invariant).
    """
    V = np.asarray(V)
    ops = [K @ V for K in kmap.ops]
    image = sum(K @ K.conj().T for K in ops)
    W, lam = range_support(image, rank_tol)
    if W.shape[1] == 0:
        raise ValueError("map has zero range on the given support")
    if W.shape[1] < image.shape[0]:
        if _is_real(ops):
            W = np.real(W)
        ops = [W.conj().T @ K for K in ops]
    if len(ops) == 1 and _identity_like(ops[0]):
        return hv.KrausMap.identity(ops[0].shape[0])
    return hv.KrausMap(ops)


def naimark_key_maps(E_list: Sequence, dim_A: int = 1, tol: float = 1e-10, rank_tol: float = DEFAULT_RANK_TOL):
    """Reduced key maps for a key read from a POVM ``{E_i}`` on Bob's system.

    With the Naimark isometry ``V = sum_i 1_A (x) sqrt(E_i) (x) |i>`` the key map
    ``G(rho) = V rho V^dagger`` is an isometric conjugation, so ``Ghat`` is the
    identity; ``Z(G(rho))`` is block diagonal in the register with blocks
    ``(1 (x) sqrt(E_i)) rho (1 (x) sqrt(E_i))``, each restricted to
    ``1_A (x) range(E_i)``. Returns ``(ghat, zhat_blocks)``.
    """
    E_list = [hv.hermitian_part(np.asarray(Ei)) for Ei in E_list]
    dB = E_list[0].shape[0]
    total = sum(E_list)
    if np.abs(total - np.eye(dB)).max() > tol:
        raise ValueError("POVM elements do not sum to the identity")
    blocks = []
    eyeA = np.eye(dim_A)
    for Ei in E_list:
        lam, U = np.linalg.eigh(Ei)
        if lam[0] < -tol:
            raise ValueError("POVM element is not positive semidefinite")
        lam = np.clip(lam, 0, None)
        if lam[-1] <= tol:
            continue
        keep = lam > rank_tol * lam[-1]
        B = U[:, keep]
        sqrtE = (U * np.sqrt(lam)) @ U.conj().T
        K = B.conj().T @ sqrtE
        if np.isrealobj(Ei) or np.abs(np.imag(K)).max() == 0:
            K = np.real_if_close(K, tol=1000)
        blocks.append(hv.KrausMap([np.kron(eyeA, K)]))
    n = dim_A * dB
    return hv.KrausMap.identity(n), blocks


def reduce_problem(
    E_list: Sequence,
    p_list: Sequence,
    key_map: hv.KrausMap,
    key_blocks: Sequence[hv.KrausMap],
    *,
    V=None,
    witness=None,
    rank_tol: float = DEFAULT_RANK_TOL,
    iscomplex: bool | None = None,
    method: str | None = None,
) -> ReductionCertificate:
    """State support, constraint reduction and map reduction in one call.

    ``key_blocks`` are Kraus maps of ``Z o G`` for each output block. If
    ``V`` is given (an analytic support) it is used as is.
    """
    dim = key_map.in_dim
    details = {}
    states = [] if witness is None else [np.asarray(witness)]
    if V is None:
        V, info = find_state_support(E_list, p_list, dim, witness=witness, rank_tol=rank_tol, iscomplex=iscomplex)
        method = method or info["method"]
        details.update({k: v for k, v in info.items() if k not in ("report", "rho")})
        if "report" in info:
            details["aux_status"] = info["report"].status
        if "rho" in info:
            states.append(info["rho"])
    else:
        V = np.asarray(V)
        method = method or "analytic"
    F, p, dropped = reduce_constraints(V, E_list, p_list)
    ghat = reduce_map(key_map, V, rank_tol) if not (key_map.is_identity and V.shape[1] == V.shape[0]) else key_map
    if key_map.is_identity and V.shape[1] < V.shape[0]:
        ghat = hv.KrausMap.identity(V.shape[1])
    zhat = [reduce_map(b, V, rank_tol) for b in key_blocks]
    wit = _reduced_witness(F, p, V, states)
    return ReductionCertificate(V, F, p, dropped, ghat, zhat, wit, method, rank_tol, details)


def _reduced_witness(F, p, V, states, tol: float = 1e-8):
    """A positive definite state on the reduced space satisfying the reduced constraints.

    Candidates are the compressions ``V^dagger rho V`` of known feasible states
    (generating state, auxiliary-problem solution) and the least-squares
    correction of the maximally mixed state; the first positive definite one
    satisfying the constraints to ``tol`` is returned, else ``None``.
    """
    r = V.shape[1]
    iscomplex = not _is_real(F) or not _is_real([V])
    cands = [hv.hermitian_part(V.conj().T @ rho @ V) for rho in states]
    M = np.array([hv.svec(Fk, iscomplex) for Fk in F]).reshape(len(F), -1)
    x0 = hv.svec(np.eye(r) / r, iscomplex)
    if len(F):
        dx, *_ = np.linalg.lstsq(M, np.array(p) - M @ x0, rcond=None)
        x0 = x0 + dx
    cands.append(hv.smat(x0, iscomplex))
    for S in cands:
        resid = max((abs(hv.inner(Fk, S) - pk) for Fk, pk in zip(F, p)), default=0.0)
        if resid <= tol and np.linalg.eigvalsh(S)[0] > 0:
            return S
    return None


class NotStrictlyFeasibleError(ValueError):
    """The constraints admit no positive definite state; the problem needs facial reduction."""


def is_strictly_feasible(E_list: Sequence, p_list: Sequence, dim: int, *, witness=None, rank_tol: float = DEFAULT_RANK_TOL, iscomplex=None):
    """Whether a positive definite state satisfies the constraints (numerical support test)."""
    V, _ = find_state_support(E_list, p_list, dim, witness=witness, rank_tol=rank_tol, iscomplex=iscomplex)
    return V.shape[1] == dim


def check_isometry(V, tol: float = 1e-12) -> bool:
    V = np.asarray(V)
    return bool(np.abs(V.conj().T @ V - np.eye(V.shape[1])).max() <= tol)


def orthonormal_basis(vectors) -> np.ndarray:
    """Orthonormal basis of the span of the given column vectors."""
    Q = scipy.linalg.orth(np.asarray(vectors))
    return Q
