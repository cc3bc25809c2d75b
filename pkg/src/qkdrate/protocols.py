"""Protocol builders and key-rate assembly.

A builder returns a :class:`ProtocolInstance`: the observables ``E_k`` with
their expected values ``p_k`` (the trace constraint included), the key map
(``G`` and the blocks of ``Z o G``), the classical statistics needed for
``H(A|B)``, and, when known, an analytic support for facial reduction.
:func:`key_rate` reduces, builds and solves the conic problem and returns
the Devetak-Winter rate ``H(A|E) - H(A|B)`` in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import mpmath
import numpy as np

from . import entropy as E
from . import facial
from . import hermvec as hv
from . import precision as P
from .cones import QKDCone, RelEntropyCone, SOCCone
from .solver import ConicProblem, SolveReport, SolverOptions, solve

LN2 = math.log(2)


@dataclass
class ExperimentalData:
    """Observed frequencies ``f`` of the non-trace constraints, covariance ``Sigma`` and radius ``chi``."""

    f: np.ndarray
    Sigma: np.ndarray
    chi: float


@dataclass
class ProtocolInstance:
    name: str
    dim: int
    E: list
    p: list
    key_map: hv.KrausMap
    key_blocks: list
    iscomplex: bool
    key_table: np.ndarray | None = None
    rho_gen: np.ndarray | None = None
    support: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    experimental: ExperimentalData | None = None

    def probabilities_from(self, rho):
        return [hv.inner(Ek, rho) for Ek in self.E]


@dataclass
class KeyRateResult:
    H_AE: float
    H_AB: float | None
    devetak_winter: float | None
    H_AE_dual: float | None
    report: SolveReport | None
    certificate: facial.ReductionCertificate | None

    def as_dict(self) -> dict:
        rep = self.report
        out = {
            "H_AE_bits": _f(self.H_AE),
            "H_AE_dual_bits": _f(self.H_AE_dual),
            "H_AB_bits": _f(self.H_AB),
            "key_rate_bits": _f(self.devetak_winter),
        }
        if rep is not None:
            out.update(
                status=rep.status,
                iterations=rep.iterations,
                primal_obj=_f(rep.primal_obj),
                dual_obj=_f(rep.dual_obj),
                gap=_f(rep.gap),
                primal_res=_f(rep.primal_res),
                dual_res=_f(rep.dual_res),
                solve_time=rep.solve_time,
            )
        else:
            out.update(status="optimal", iterations=0)
        if self.certificate is not None:
            out["reduced_dim"] = self.certificate.reduced_dim
            out["reduction"] = self.certificate.method
        return out


def _f(v):
    return None if v is None else float(v)


# -- states and bases ----------------------------------------------------------


def ket(d: int, i: int) -> np.ndarray:
    v = np.zeros(d)
    v[i] = 1.0
    return v


def proj(v) -> np.ndarray:
    v = np.asarray(v)
    return np.outer(v, v.conj())


def max_entangled(d: int) -> np.ndarray:
    return np.eye(d).reshape(-1) / np.sqrt(d)


def isotropic_state(d: int, v) -> np.ndarray:
    """``v |phi+><phi+| + (1 - v) I / d^2``."""
    return v * proj(max_entangled(d)) + (1 - v) * np.eye(d * d) / (d * d)


def pinching_blocks(dA: int, dB: int) -> list:
    """Blocks of ``Z(rho) = sum_i (|i><i| (x) 1) rho (|i><i| (x) 1)``: Kraus ``<i| (x) 1``."""
    eyeB = np.eye(dB)
    return [hv.KrausMap([np.kron(ket(dA, i)[None, :], eyeB)]) for i in range(dA)]


def _is_prime(d: int) -> bool:
    return d >= 2 and all(d % k for k in range(2, int(math.isqrt(d)) + 1))


def mub_bases(d: int) -> list:
    """Complete set of ``d + 1`` mutually unbiased bases for prime ``d``.

    Each basis is a ``d x d`` matrix whose columns are the basis vectors; the
    computational basis comes first. For ``d = 2`` these are the Z, X and Y
    eigenbases; for odd primes the Weyl-Heisenberg bases
    ``|e^k_j> = d^(-1/2) sum_m w^(k m^2 + j m) |m>``.
    """
    if not _is_prime(d):
        raise ValueError(f"MUB construction needs a prime dimension, got {d}")
    if d == 2:
        s = 1 / np.sqrt(2)
        return [
            np.eye(2, dtype=complex),
            np.array([[s, s], [s, -s]], dtype=complex),
            np.array([[s, s], [1j * s, -1j * s]], dtype=complex),
        ]
    w = np.exp(2j * np.pi / d)
    m = np.arange(d)
    bases = [np.eye(d, dtype=complex)]
    for k in range(d):
        B = np.array([w ** ((k * m * m + j * m) % d) for j in range(d)]).T / np.sqrt(d)
        bases.append(B)
    return bases


def equal_outcome_operator(B) -> np.ndarray:
    """``sum_j |b_j><b_j| (x) conj(|b_j><b_j|)``: Alice and Bob (transposed basis) agree."""
    d = B.shape[0]
    out = np.zeros((d * d, d * d), dtype=complex)
    for j in range(d):
        Pj = proj(B[:, j])
        out += np.kron(Pj, Pj.conj())
    return hv.hermitian_part(out)


def _realify(ops, iscomplex):
    if iscomplex:
        return [np.asarray(o, dtype=complex) for o in ops]
    return [np.real(o) for o in ops]


# -- builders --------------------------------------------------------------


def bb84(q_x: float, q_z: float) -> ProtocolInstance:
    """Entanglement-based BB84 on two qubits with key from Alice's Z basis.

    The supports of the degenerate cases are built in: ``q_z = 0`` gives
    ``span{phi+, phi-}``, ``q_x = 0`` gives ``span{phi+, psi+}``, and both
    zero leaves only ``phi+``.
    """
    for name, q in (("q_x", q_x), ("q_z", q_z)):
        if not 0 <= q < 1:
            raise ValueError(f"{name} must lie in [0, 1), got {q}")
    plus = np.array([1.0, 1.0]) / np.sqrt(2)
    minus = np.array([1.0, -1.0]) / np.sqrt(2)
    Qz = proj(np.kron(ket(2, 0), ket(2, 1))) + proj(np.kron(ket(2, 1), ket(2, 0)))
    Qx = proj(np.kron(plus, minus)) + proj(np.kron(minus, plus))
    E_ops = [np.eye(4), Qx, Qz]
    p = [1.0, float(q_x), float(q_z)]
    phi_p = np.array([1, 0, 0, 1]) / np.sqrt(2)
    phi_m = np.array([1, 0, 0, -1]) / np.sqrt(2)
    psi_p = np.array([0, 1, 1, 0]) / np.sqrt(2)
    psi_m = np.array([0, 1, -1, 0]) / np.sqrt(2)
    # Bell-diagonal generating state: phi- carries X errors, psi+ Z errors, psi- both
    w = [(1 - q_x) * (1 - q_z), q_x * (1 - q_z), q_z * (1 - q_x), q_x * q_z]
    rho = sum(wi * proj(v) for wi, v in zip(w, (phi_p, phi_m, psi_p, psi_m)))
    if q_x > 0 and q_z > 0:
        support = None
    elif q_z == 0 and q_x > 0:
        support = np.stack([phi_p, phi_m], axis=1)
    elif q_x == 0 and q_z > 0:
        support = np.stack([phi_p, psi_p], axis=1)
    else:
        support = phi_p[:, None]
    table = np.array([[(1 - q_z) / 2, q_z / 2], [q_z / 2, (1 - q_z) / 2]])
    return ProtocolInstance(
        name="bb84",
        dim=4,
        E=E_ops,
        p=p,
        key_map=hv.KrausMap.identity(4),
        key_blocks=pinching_blocks(2, 2),
        iscomplex=False,
        key_table=table,
        rho_gen=rho,
        support=support,
        params={"q_x": q_x, "q_z": q_z},
    )


def mub(d: int, v: float, num_bases: int | None = None) -> ProtocolInstance:
    """Prime-dimension MUB protocol on the isotropic state; key from Alice's computational basis.

    For each of the first ``num_bases`` bases (default: all ``d + 1``) the
    constraint fixes the probability that Alice's outcome in the basis equals
    Bob's outcome in the complex-conjugate basis.
    """
    if not 0 < v <= 1:
        raise ValueError(f"visibility must lie in (0, 1], got {v}")
    bases = mub_bases(d)
    if num_bases is None:
        num_bases = d + 1
    if not 1 <= num_bases <= d + 1:
        raise ValueError(f"num_bases must be between 1 and {d + 1}")
    rho = isotropic_state(d, v)
    E_ops = [np.eye(d * d, dtype=complex)]
    for B in bases[:num_bases]:
        E_ops.append(equal_outcome_operator(B))
    iscomplex = any(np.abs(np.imag(Ek)).max() > 0 for Ek in E_ops)
    E_ops = _realify(E_ops, iscomplex)
    p = [float(np.real(np.trace(Ek @ rho))) for Ek in E_ops]
    return ProtocolInstance(
        name="mub",
        dim=d * d,
        E=E_ops,
        p=p,
        key_map=hv.KrausMap.identity(d * d),
        key_blocks=pinching_blocks(d, d),
        iscomplex=iscomplex,
        key_table=_isotropic_key_table(d, v),
        rho_gen=rho,
        params={"d": d, "v": v, "num_bases": num_bases},
    )


def overlap(d: int, v: float) -> ProtocolInstance:
    """Computational basis plus nearest-neighbour real superpositions, on the isotropic state.

    Constraints: the probability of equal computational-basis outcomes and,
    for ``i = 0..d-2``, the probability that both parties find the same one of
    ``(|i> +- |i+1>) / sqrt(2)``. All operators are real, so the problem is
    emitted in real mode.
    """
    if d < 2:
        raise ValueError("overlap protocol needs d >= 2")
    if not 0 < v <= 1:
        raise ValueError(f"visibility must lie in (0, 1], got {v}")
    rho = isotropic_state(d, v)
    Zeq = sum(proj(np.kron(ket(d, j), ket(d, j))) for j in range(d))
    E_ops = [np.eye(d * d), Zeq]
    for i in range(d - 1):
        sp = (ket(d, i) + ket(d, i + 1)) / np.sqrt(2)
        sm = (ket(d, i) - ket(d, i + 1)) / np.sqrt(2)
        E_ops.append(proj(np.kron(sp, sp)) + proj(np.kron(sm, sm)))
    p = [float(np.trace(Ek @ rho)) for Ek in E_ops]
    return ProtocolInstance(
        name="overlap",
        dim=d * d,
        E=E_ops,
        p=p,
        key_map=hv.KrausMap.identity(d * d),
        key_blocks=pinching_blocks(d, d),
        iscomplex=False,
        key_table=_isotropic_key_table(d, v),
        rho_gen=rho,
        params={"d": d, "v": v},
    )


def _isotropic_key_table(d, v):
    return v * np.eye(d) / d + (1 - v) * np.ones((d, d)) / (d * d)


def povm_keyed(
    povm: Sequence,
    constraints: Sequence,
    dim_A: int,
    *,
    key_table=None,
    rho_gen=None,
    iscomplex: bool | None = None,
    name: str = "povm_keyed",
) -> ProtocolInstance:
    """Key read from Bob's POVM through its Naimark dilation.

    ``constraints`` is a list of ``(operator on A (x) B, expected value)``;
    the trace constraint is added. ``key_table`` (key outcome x partner data
    joint distribution, key along rows) gives ``H(A|B)``; if omitted and
    ``rho_gen`` is given, the table of Bob's key against the same POVM on
    Alice's side is not assumed and ``H(A|B)`` is left undefined.
    """
    povm = [np.asarray(Ei) for Ei in povm]
    ghat, blocks = facial.naimark_key_maps(povm, dim_A)
    n = ghat.in_dim
    E_ops = [np.eye(n)] + [np.asarray(Ek) for Ek, _ in constraints]
    p = [1.0] + [float(pk) for _, pk in constraints]
    if iscomplex is None:
        iscomplex = any(P.iscomplex(Ek) and np.abs(np.imag(Ek)).max() > 0 for Ek in E_ops) or any(
            np.abs(np.imag(K)).max() > 0 for b in blocks for K in b.ops
        )
    E_ops = _realify(E_ops, iscomplex)
    blocks = [hv.KrausMap(_realify(b.ops, iscomplex)) for b in blocks]
    return ProtocolInstance(
        name=name,
        dim=n,
        E=E_ops,
        p=p,
        key_map=ghat,
        key_blocks=blocks,
        iscomplex=iscomplex,
        key_table=None if key_table is None else np.asarray(key_table, dtype=float),
        rho_gen=rho_gen,
        params={"dim_A": dim_A, "outcomes": len(povm)},
    )


def with_experimental_data(instance: ProtocolInstance, f, Sigma, chi: float) -> ProtocolInstance:
    """Relax the non-trace constraints to ``|| Sigma^(-1/2) (p - f) ||_2 <= chi``."""
    f = np.asarray(f, dtype=float).reshape(-1)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    k = len(instance.E) - 1
    if f.shape != (k,) or Sigma.shape != (k, k):
        raise ValueError(f"need {k} frequencies and a {k}x{k} covariance")
    if not chi > 0:
        raise ValueError("chi must be positive")
    if not np.allclose(Sigma, Sigma.T):
        raise ValueError("Sigma must be symmetric")
    lam = np.linalg.eigvalsh(Sigma)
    if lam[0] <= 1e-14 * max(lam[-1], 1e-300):
        raise ValueError("Sigma must be positive definite")
    return replace(instance, experimental=ExperimentalData(f, Sigma, float(chi)))


# -- entropies ---------------------------------------------------------------


def conditional_entropy_AB(joint) -> float:
    """``H(A|B) = H(AB) - H(B)`` in bits for a joint table (A along rows)."""
    J = np.asarray(joint, dtype=float)
    if J.ndim != 2:
        raise ValueError("joint distribution must be a 2-d table")
    if (J < -1e-15).any() or abs(J.sum() - 1) > 1e-12:
        raise ValueError("joint table must be a probability distribution")
    J = np.clip(J, 0, None)

    def H(p):
        p = p[p > 0]
        return float(-(p * np.log2(p)).sum())

    return H(J.reshape(-1)) - H(J.sum(axis=0))


# -- conic problems ------------------------------------------------------------


def reduce(instance: ProtocolInstance, rank_tol: float = facial.DEFAULT_RANK_TOL) -> facial.ReductionCertificate:
    """Facial reduction with the builder's analytic support or generating-state witness."""
    return facial.reduce_problem(
        instance.E,
        instance.p,
        instance.key_map,
        instance.key_blocks,
        V=instance.support,
        witness=instance.rho_gen,
        rank_tol=rank_tol,
        iscomplex=instance.iscomplex,
    )


def unreduced(instance: ProtocolInstance, rank_tol: float = facial.DEFAULT_RANK_TOL) -> facial.ReductionCertificate:
    """Identity-support certificate; rejects constraints without a positive definite solution."""
    dim = instance.key_map.in_dim
    if not facial.is_strictly_feasible(instance.E, instance.p, dim, witness=instance.rho_gen, rank_tol=rank_tol, iscomplex=instance.iscomplex):
        raise facial.NotStrictlyFeasibleError(
            f"{instance.name}: no positive definite state satisfies the constraints; enable facial reduction"
        )
    return facial.reduce_problem(
        instance.E,
        instance.p,
        instance.key_map,
        instance.key_blocks,
        V=np.eye(dim),
        witness=instance.rho_gen,
        rank_tol=rank_tol,
        iscomplex=instance.iscomplex,
        method="unreduced",
    )


def _real_mode(cert, instance):
    if instance.iscomplex:
        return True
    ops = [K for b in cert.zhat for K in b.ops] + list(cert.ghat.ops) + [cert.V] + list(cert.F)
    return any(np.abs(np.imag(np.asarray(K))).max() > 0 for K in ops if np.iscomplexobj(K))


def qkd_problem(instance: ProtocolInstance, cert: facial.ReductionCertificate | None = None, iscomplex=None):
    """Conic problem ``min h  s.t.  (h, sigma) in K_QKD, tr(F_k sigma) = p_k`` (objective in nats).

    With experimental data the non-trace constraints become an SOC block
    ``(t, w)`` with ``t = chi`` and ``w = Sigma^(-1/2) (tr(F sigma) - f)``.
    """
    if cert is None:
        cert = reduce(instance)
    if iscomplex is None:
        iscomplex = _real_mode(cert, instance)
    ghat = cert.ghat
    zhat = cert.zhat
    if not iscomplex:
        ghat = ghat if ghat.is_identity else hv.KrausMap([np.real(K) for K in ghat.ops])
        zhat = [hv.KrausMap([np.real(K) for K in b.ops]) for b in zhat]
    cone = QKDCone(ghat, zhat, iscomplex)
    rows = [np.concatenate([[0.0], hv.svec(np.real(Fk) if not iscomplex else Fk, iscomplex)]) for Fk in cert.F]
    b = np.array(cert.p, dtype=float)
    c = np.zeros(cone.dim)
    c[0] = 1.0
    meta = {"protocol": instance.name, "params": dict(instance.params), "formulation": "qkd"}
    if instance.experimental is None:
        return ConicProblem(c, np.array(rows), b, [cone], meta)
    # experimental data: keep the trace row(s), relax the rest through an SOC block
    exp = instance.experimental
    eye_vec = np.concatenate([[0.0], hv.svec(np.eye(cone.n), iscomplex)])
    full_stat = [np.concatenate([[0.0], hv.svec(_restrict(instance, cert, k, iscomplex), iscomplex)]) for k in range(1, len(instance.E))]
    k = len(full_stat)
    lam, U = np.linalg.eigh(exp.Sigma)
    S = (U / np.sqrt(lam)) @ U.T  # Sigma^(-1/2)
    soc = SOCCone(1 + k)
    N = cone.dim + soc.dim
    A = []
    rhs = []
    row = np.zeros(N)
    row[: cone.dim] = eye_vec
    A.append(row)
    rhs.append(1.0)
    row = np.zeros(N)
    row[cone.dim] = 1.0
    A.append(row)
    rhs.append(exp.chi)
    Fmat = np.array(full_stat)
    for j in range(k):
        row = np.zeros(N)
        row[: cone.dim] = -(S[j] @ Fmat)
        row[cone.dim + 1 + j] = 1.0
        A.append(row)
        rhs.append(-(S[j] @ exp.f))
    c = np.zeros(N)
    c[0] = 1.0
    meta["experimental"] = {"chi": exp.chi}
    return ConicProblem(c, np.array(A), np.array(rhs), [cone, soc], meta)


def _restrict(instance, cert, k, iscomplex):
    F = hv.hermitian_part(cert.V.conj().T @ instance.E[k] @ cert.V)
    return F if iscomplex else np.real(F)


def re_problem(instance: ProtocolInstance, iscomplex=None):
    """The same minimization over the relative entropy cone: ``min h`` over ``(h, X, Y)`` with
    ``h >= D(X || Y)``, ``Y = Z(X)``, ``tr(E_k X) = p_k``.

    Valid when the key map ``G`` is the identity and a full-rank feasible state
    exists (no facial reduction); it serves as an independent oracle.
    """
    if not instance.key_map.is_identity:
        raise ValueError("relative-entropy formulation needs an identity key map G")
    if iscomplex is None:
        iscomplex = instance.iscomplex
    n = instance.dim
    cone = RelEntropyCone(n, iscomplex)
    Nn = cone.sdim
    Zfull = _pinching_matrix(instance.key_blocks, n, iscomplex)
    A, rhs = [], []
    for Ek, pk in zip(instance.E, instance.p):
        row = np.zeros(cone.dim)
        row[1 : 1 + Nn] = hv.svec(Ek if iscomplex else np.real(Ek), iscomplex)
        A.append(row)
        rhs.append(pk)
    block = np.zeros((Nn, cone.dim))
    block[:, 1 : 1 + Nn] = -Zfull
    block[:, 1 + Nn :] = np.eye(Nn)
    A = np.vstack([np.array(A), block])
    rhs = np.concatenate([rhs, np.zeros(Nn)])
    c = np.zeros(cone.dim)
    c[0] = 1.0
    meta = {"protocol": instance.name, "params": dict(instance.params), "formulation": "rel_entropy"}
    return ConicProblem(c, A, rhs, [cone], meta)


def _pinching_matrix(blocks, n, iscomplex):
    """svec matrix of ``X -> sum_b K_b^dagger K_b X K_b^dagger K_b`` for isometric block rows.

    For blocks whose Kraus rows are orthonormal (``K K^dagger = 1``) this is
    ``Z(X)`` embedded back into the ``n x n`` space, so ``D(X || Z(X))``
    equals ``-H(X) + sum_b H(K_b X K_b^dagger)``.
    """
    M = 0
    for b in blocks:
        for K in b.ops:
            Pb = K.conj().T @ K
            M = M + hv.skron(Pb if iscomplex else np.real(Pb), iscomplex)
    return M


def to_bits(nats):
    """Convert nats to bits in the precision of ``nats``."""
    if isinstance(nats, mpmath.mpf):
        with P.context("extended"):
            return nats / mpmath.log(2)
    return nats / LN2


def key_rate(
    instance: ProtocolInstance,
    options: SolverOptions | None = None,
    *,
    rank_tol: float = facial.DEFAULT_RANK_TOL,
    iscomplex: bool | None = None,
    facial_reduction: bool = True,
) -> KeyRateResult:
    """Facial reduction, conic solve and Devetak-Winter assembly (bits).

    With ``facial_reduction=False`` the state is kept on the full space; this
    raises :class:`~qkdrate.facial.NotStrictlyFeasibleError` when no positive
    definite state satisfies the constraints.
    """
    opts = options or SolverOptions()
    if facial_reduction:
        cert = reduce(instance, rank_tol)
    else:
        cert = unreduced(instance, rank_tol)
    H_AB = conditional_entropy_AB(instance.key_table) if instance.key_table is not None else None
    if cert.reduced_dim == 1 and instance.experimental is None:
        # a unique feasible state: nothing to optimize
        one = np.ones((1, 1))
        val = -E.entropy(cert.ghat.apply(one)) + sum(E.entropy(b.apply(one)) for b in cert.zhat)
        H_AE = float(val) / LN2
        return KeyRateResult(H_AE, H_AB, None if H_AB is None else H_AE - H_AB, H_AE, None, cert)
    prob = qkd_problem(instance, cert, iscomplex)
    rep = solve(prob, opts)
    if rep.primal_obj is None:
        return KeyRateResult(float("nan"), H_AB, None, None, rep, cert)
    with P.context(opts.precision):
        H_AE = to_bits(rep.primal_obj)
        H_AE_dual = to_bits(rep.dual_obj)
    dw = None if H_AB is None else H_AE - H_AB
    return KeyRateResult(H_AE, H_AB, dw, H_AE_dual, rep, cert)
