"""Facial reduction: supports, constraint and map reduction, Naimark maps, entropy identity."""

from dataclasses import replace

import numpy as np
import pytest

from helpers import rand_herm, rand_isometry, rand_pd, random_reduction_instance, reduction_identity_error, vn_entropy
from qkdrate import facial
from qkdrate import hermvec as hv
from qkdrate import protocols as pr
from qkdrate.entropy import binary_entropy
from qkdrate.solver import InfeasibleError

S2 = 1 / np.sqrt(2)
PHI_P = np.array([1, 0, 0, 1]) * S2
PHI_M = np.array([1, 0, 0, -1]) * S2
PSI_P = np.array([0, 1, 1, 0]) * S2
PLUS = np.array([1, 1]) * S2
MINUS = np.array([1, -1]) * S2


def projector(V):
    return V @ V.conj().T


def strip(inst):
    """The same instance without its analytic support or generating state."""
    return replace(inst, support=None, rho_gen=None)


# -- state support ------------------------------------------------------------------


def test_bb84_full_support_is_identity():
    inst = pr.bb84(0.025, 0.04)
    V, info = facial.find_state_support(inst.E, inst.p, 4, witness=inst.rho_gen)
    assert info["method"] == "witness"
    assert np.array_equal(V, np.eye(4))
    cert = pr.reduce(inst)
    assert cert.reduced_dim == 4
    assert cert.dropped == []
    # constraints unchanged for V = I
    for Fk, Ek in zip(cert.F, inst.E):
        assert np.allclose(Fk, Ek, atol=1e-15)


def test_bb84_full_support_numeric():
    inst = strip(pr.bb84(0.05, 0.03))
    V, info = facial.find_state_support(inst.E, inst.p, 4)
    assert info["method"] == "auxiliary"
    assert V.shape == (4, 4)


def test_bb84_qz_zero_support_numeric():
    inst = strip(pr.bb84(0.05, 0.0))
    V, info = facial.find_state_support(inst.E, inst.p, 4)
    assert V.shape == (4, 2)
    target = projector(np.stack([PHI_P, PHI_M], axis=1))
    assert np.abs(projector(V) - target).max() <= 1e-6
    lam = np.sort(info["eigenvalues"])
    assert lam[1] <= facial.DEFAULT_RANK_TOL * lam[-1] < lam[2]


def test_bb84_both_zero_rank_one():
    inst = strip(pr.bb84(0.0, 0.0))
    V, _ = facial.find_state_support(inst.E, inst.p, 4)
    assert V.shape == (4, 1)
    assert abs(abs(np.vdot(V[:, 0], PHI_P)) - 1) <= 1e-6
    res = pr.key_rate(pr.bb84(0.0, 0.0))
    assert res.report is None  # nothing to optimize
    assert abs(res.H_AE - 1) <= 1e-12


def test_infeasible_constraints_raise():
    E = [np.eye(2), np.diag([1.0, 0.0])]
    with pytest.raises(InfeasibleError):
        facial.find_state_support(E, [1.0, 2.0], 2)


# -- constraint reduction ------------------------------------------------------------


def bell_isometry():
    """``|phi+><0| + |phi-><1|``."""
    return np.outer(PHI_P, [1, 0]) + np.outer(PHI_M, [0, 1])


def test_bb84_qz_zero_constraints():
    inst = pr.bb84(0.05, 0.0)
    F, p, dropped = facial.reduce_constraints(bell_isometry(), inst.E, inst.p)
    assert dropped == [2]  # tr(Q_z V sigma V^dagger) = 0 is tautological
    assert np.allclose(F[0], np.eye(2), atol=1e-15) and p[0] == 1.0
    assert np.allclose(F[1], np.diag([0.0, 1.0]), atol=1e-15) and p[1] == 0.05


def test_dropped_row_must_be_consistent():
    inst = pr.bb84(0.05, 0.0)
    with pytest.raises(InfeasibleError, match="inconsistent"):
        facial.reduce_constraints(bell_isometry(), inst.E, [1.0, 0.05, 0.1])


def test_duplicate_constraint_dropped_objective_invariant():
    inst = pr.bb84(0.04, 0.03)
    dup = replace(inst, E=inst.E + [inst.E[1]], p=inst.p + [inst.p[1]])
    cert = pr.reduce(dup)
    assert cert.dropped == [3]
    a = pr.key_rate(inst)
    b = pr.key_rate(dup)
    assert abs(a.H_AE - b.H_AE) <= 1e-8


# -- map reduction -------------------------------------------------------------------


def test_bb84_qz_zero_key_map():
    inst = pr.bb84(0.05, 0.0)
    cert = facial.reduce_problem(inst.E, inst.p, inst.key_map, inst.key_blocks, V=bell_isometry())
    assert cert.ghat.is_identity and cert.ghat.in_dim == 2
    # Zhat is equivalent to the Kraus pair {|0><+|, |1><-|}: same output spectrum
    ref = hv.KrausMap([np.outer([1, 0], PLUS), np.outer([0, 1], MINUS)])
    rng = np.random.default_rng(1)
    for _ in range(5):
        s = rand_pd(rng, 2, False)
        s /= np.trace(s)
        ours = sum(vn_entropy(b.apply(s)) for b in cert.zhat)
        assert abs(ours - vn_entropy(ref.apply(s))) <= 1e-13
    assert sum(b.out_dim for b in cert.zhat) == 2


def test_bb84_qx_zero_key_map_is_itself():
    inst = pr.bb84(0.0, 0.05)
    cert = pr.reduce(inst)
    assert cert.reduced_dim == 2
    # each pinching block keeps its full two-dimensional range
    assert [b.out_dim for b in cert.zhat] == [2, 2]
    res = pr.key_rate(inst)
    assert abs(res.H_AE - 1) <= 1e-6  # 1 - h(q_x) with q_x = 0


def test_reduce_map_isometry_becomes_identity():
    rng = np.random.default_rng(2)
    for iscomplex in (False, True):
        W = rand_isometry(rng, 6, 3, iscomplex)
        G = hv.KrausMap([W])
        assert facial.reduce_map(G, np.eye(3)).is_identity
        V = rand_isometry(rng, 3, 2, iscomplex)
        red = facial.reduce_map(G, V)
        assert red.is_identity and red.in_dim == 2


def test_reduce_map_full_range_unchanged():
    rng = np.random.default_rng(3)
    ops = [rand_pd(rng, 3, True), rand_herm(rng, 3, True)]
    G = hv.KrausMap(ops)
    red = facial.reduce_map(G, np.eye(3))
    assert red.out_dim == 3
    for K, R in zip(ops, red.ops):
        assert np.array_equal(K, R)


def test_reduce_map_zero_range():
    G = hv.KrausMap([np.zeros((2, 2))])
    with pytest.raises(ValueError):
        facial.reduce_map(G, np.eye(2))


def test_range_support_orthonormal():
    rng = np.random.default_rng(4)
    V = rand_isometry(rng, 5, 3)
    X = V @ rand_pd(rng, 3) @ V.conj().T
    W, _ = facial.range_support(X)
    assert W.shape == (5, 3)
    assert np.abs(W.conj().T @ W - np.eye(3)).max() <= 1e-12
    assert np.abs(projector(W) - projector(V)).max() <= 1e-10


# -- Naimark key maps ----------------------------------------------------------------


def test_naimark_projective_two_outcomes():
    E = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    ghat, blocks = facial.naimark_key_maps(E)
    assert ghat.is_identity and ghat.in_dim == 2
    assert [b.out_dim for b in blocks] == [1, 1]
    ghat2, blocks2 = facial.naimark_key_maps(E, dim_A=2)
    assert ghat2.in_dim == 4
    assert [b.out_dim for b in blocks2] == [2, 2]
    # blocks are 1 (x) <i|: the pinching of the key register
    assert np.allclose(blocks2[1].ops[0], np.kron(np.eye(2), [[0.0, 1.0]]))


def test_naimark_trivial_povm():
    ghat, blocks = facial.naimark_key_maps([np.eye(2)], dim_A=2)
    assert len(blocks) == 1
    rng = np.random.default_rng(5)
    s = rand_pd(rng, 4)
    # Zhat(sigma) = sigma up to a unitary: the key term vanishes
    assert abs(vn_entropy(blocks[0].apply(s)) - vn_entropy(ghat.apply(s))) <= 1e-12


def test_naimark_full_rank_povm_unreduced():
    rng = np.random.default_rng(6)
    M = [rand_pd(rng, 2) for _ in range(4)]
    T = sum(M)
    lam, U = np.linalg.eigh(T)
    Tm = (U / np.sqrt(lam)) @ U.conj().T
    E = [Tm @ Mi @ Tm for Mi in M]
    _, blocks = facial.naimark_key_maps(E)
    assert [b.out_dim for b in blocks] == [2, 2, 2, 2]
    # each block is sqrt(E_i) up to a unitary on the output
    for Ei, b in zip(E, blocks):
        K = b.ops[0]
        assert np.allclose(K.conj().T @ K, Ei, atol=1e-12)


def test_naimark_invalid_povm():
    with pytest.raises(ValueError, match="identity"):
        facial.naimark_key_maps([np.diag([1.0, 0.0]), np.diag([0.0, 0.9])])
    with pytest.raises(ValueError, match="positive"):
        facial.naimark_key_maps([np.diag([1.2, 0.5]), np.diag([-0.2, 0.5])])


# -- certificates and the entropy identity ------------------------------------------------


@pytest.mark.parametrize("q", [(0.05, 0.0), (0.0, 0.05), (0.0, 0.0), (0.05, 0.05)])
def test_certificate_invariants_bb84(q):
    for inst in (pr.bb84(*q), strip(pr.bb84(*q))):
        cert = pr.reduce(inst)
        r = cert.reduced_dim
        assert np.abs(cert.V.conj().T @ cert.V - np.eye(r)).max() <= 1e-12
        w = cert.witness
        assert w is not None and np.linalg.eigvalsh(w)[0] > 0
        for Fk, pk in zip(cert.F, cert.p):
            assert abs(hv.inner(Fk, w) - pk) <= 1e-8


def test_entropy_identity_random_instances():
    rng = np.random.default_rng(7)
    for i in range(12):
        inst = random_reduction_instance(rng, i)
        cert = facial.reduce_problem(
            inst["E"], inst["p"], inst["key_map"], inst["key_blocks"],
            V=None if inst["numeric"] else inst["V"], iscomplex=inst["iscomplex"],
        )
        assert cert.method == ("auxiliary" if inst["numeric"] else "analytic")
        assert cert.reduced_dim == inst["V"].shape[1]
        assert np.abs(projector(cert.V) - projector(inst["V"])).max() <= 1e-6
        assert reduction_identity_error(cert, inst, rng) <= 1e-9
        assert cert.witness is not None
        # reduced maps have full-rank outputs on positive definite states
        s = np.eye(cert.reduced_dim) / cert.reduced_dim
        assert np.linalg.eigvalsh(cert.ghat.apply(s))[0] > 0
        for b in cert.zhat:
            assert np.linalg.eigvalsh(b.apply(s))[0] > 0


def test_reduced_and_unreduced_objectives_agree():
    inst = pr.bb84(0.03, 0.02)
    a = pr.key_rate(inst)
    b = pr.key_rate(inst, facial_reduction=False)
    assert b.certificate.method == "unreduced"
    assert abs(a.H_AE - b.H_AE) <= 1e-6


def test_unreduced_degenerate_problem_rejected():
    with pytest.raises(facial.NotStrictlyFeasibleError):
        pr.key_rate(pr.bb84(0.05, 0.0), facial_reduction=False)
    assert not facial.is_strictly_feasible(pr.bb84(0.05, 0.0).E, pr.bb84(0.05, 0.0).p, 4)
    assert facial.is_strictly_feasible(pr.bb84(0.05, 0.05).E, pr.bb84(0.05, 0.05).p, 4)


def test_degenerate_bb84_matches_analytic():
    for q_x in (0.05, 0.1):
        for inst in (pr.bb84(q_x, 0.0), strip(pr.bb84(q_x, 0.0))):
            res = pr.key_rate(inst)
            assert res.certificate.reduced_dim == 2
            assert abs(res.H_AE - (1 - binary_entropy(q_x))) <= 1e-6
