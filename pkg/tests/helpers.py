"""Random instance generators and dense oracles shared by the tests."""

from __future__ import annotations

import numpy as np
from scipy.stats import unitary_group, ortho_group

from qkdrate import hermvec as hv


def rand_herm(rng, n, iscomplex=True):
    A = rng.normal(size=(n, n))
    if iscomplex:
        A = A + 1j * rng.normal(size=(n, n))
    return (A + A.conj().T) / 2


def rand_pd(rng, n, iscomplex=True, floor=0.1):
    A = rng.normal(size=(n, n))
    if iscomplex:
        A = A + 1j * rng.normal(size=(n, n))
    X = A @ A.conj().T
    X = X / np.trace(X).real + floor * np.eye(n)
    return X / np.trace(X).real


def rand_unitary(rng, n, iscomplex=True):
    seed = int(rng.integers(2**31))
    return unitary_group.rvs(n, random_state=seed) if iscomplex else ortho_group.rvs(n, random_state=seed)


def rand_rect(rng, m, n, iscomplex=True):
    K = rng.normal(size=(m, n))
    if iscomplex:
        K = K + 1j * rng.normal(size=(m, n))
    return K


def vec_basis(n, iscomplex):
    """Columns ``vec(smat(e_i))`` (column-major vec)."""
    N = hv.svec_dim(n, iscomplex)
    return np.stack([hv.smat(np.eye(N)[i], iscomplex).ravel(order="F") for i in range(N)], axis=1)


def skron_kron_oracle(K, iscomplex):
    """``Re V^dagger (conj(K) kron K) V`` built from the dense Kronecker product."""
    K = np.asarray(K)
    Vin = vec_basis(K.shape[1], iscomplex)
    Vout = vec_basis(K.shape[0], iscomplex)
    return np.real(Vout.conj().T @ np.kron(K.conj(), K) @ Vin)


def logm_h(X):
    lam, U = np.linalg.eigh(X)
    return (U * np.log(lam)) @ U.conj().T


# -- random cones ----------------------------------------------------------------


def rand_isometry(rng, m, n, iscomplex=True):
    return np.linalg.qr(rand_rect(rng, m, n, iscomplex))[0]


def rand_qkd_cone(rng, n, iscomplex=True, identity_g=False, blocks=2):
    """QKD cone with ``Ghat`` the identity or a two-operator channel from a random
    isometry, and ``Zhat`` the pinching of ``Ghat``'s output into ``blocks`` blocks."""
    from qkdrate.cones import QKDCone

    if identity_g:
        ghat = hv.KrausMap.identity(n)
        ops = [np.eye(n)]
    else:
        m = n + 1
        V = rand_isometry(rng, 2 * m, n, iscomplex)
        ops = [V[:m], V[m:]]
        ghat = hv.KrausMap(ops)
    m = ops[0].shape[0]
    blocks = min(blocks, m)
    cuts = np.sort(rng.choice(np.arange(1, m), size=blocks - 1, replace=False)) if blocks > 1 else []
    edges = [0, *cuts, m]
    zhat = [hv.KrausMap([np.eye(m)[a:b] @ K for K in ops]) for a, b in zip(edges[:-1], edges[1:])]
    return QKDCone(ghat, zhat, iscomplex)


def rand_qkd_point(rng, cone, floor=0.1, margin=None):
    n = cone.n
    S = rand_pd(rng, n, cone.iscomplex, floor) * n
    if margin is None:
        margin = rng.uniform(0.05, 1.0)
    h = float(cone.objective_value(S)) + margin
    return cone.pack(h, S)


def random_cone_zoo(rng, count):
    """``count`` QKD cones cycling through size, field and map structure."""
    cones = []
    for i in range(count):
        n = 2 + i % 4
        iscomplex = i % 2 == 0
        identity_g = i % 3 == 0
        cones.append(rand_qkd_cone(rng, n, iscomplex, identity_g, blocks=1 + i % 3))
    return cones


def central_diff(fun, x, d, t=1e-3):
    """Five-point central difference of ``fun`` at ``x`` along ``d`` (error ``O(t^4)``)."""
    return (-fun(x + 2 * t * d) + 8 * fun(x + t * d) - 8 * fun(x - t * d) + fun(x - 2 * t * d)) / (12 * t)


def _local_step(st, d, tau):
    """Step ``tau`` measured in the local norm ``sqrt(d' H d)`` (a fraction of the Dikin radius)."""
    return tau / np.sqrt(np.dot(d, st.hess_apply(d)))


def fd_gradient(cone, x, tau=1e-3):
    st = cone.state(x)
    barrier = lambda z: cone.state(z).barrier()  # noqa: E731
    return np.array([central_diff(barrier, x, e, _local_step(st, e, tau)) for e in np.eye(cone.dim)])


def derivative_errors(cone, x, rng, tau=1e-3):
    """Finite-difference and homogeneity errors at ``x`` (dict of floats).

    Each derivative level is compared with a five-point difference of the
    level below, with steps of ``tau`` in the local Hessian norm. The
    homogeneity identities are measured relative to ``max(1, |grad f|_inf)``.
    """
    st = cone.state(x)
    g = st.gradient()
    d = rng.normal(size=cone.dim)
    d /= np.linalg.norm(d)
    t = _local_step(st, d, tau)
    gscale = max(1.0, np.max(np.abs(g)))
    out = {
        "grad_fd": np.max(np.abs(fd_gradient(cone, x, tau) - g)),
        "hess_fd": np.max(np.abs(central_diff(lambda z: cone.state(z).gradient(), x, d, t) - st.hess_apply(d))),
        "nu": abs(-np.dot(g, x) - cone.nu),
        "hess_x": np.max(np.abs(st.hess_apply(x) + g)) / gscale,
    }
    if cone.has_third_order:
        fd3 = central_diff(lambda z: cone.state(z).hess_apply(d), x, d, t)
        out["third_fd"] = np.max(np.abs(fd3 - st.third_order(d)))
        out["third_xx"] = np.max(np.abs(st.third_order(x) - 2 * g)) / gscale
    return out


# -- facial-reduction instances and entropy oracles ------------------------------


def vn_entropy(X, cut=1e-14):
    """von Neumann entropy (nats) of a PSD matrix, zero eigenvalues dropped."""
    lam = np.linalg.eigvalsh((X + X.conj().T) / 2)
    lam = lam[lam > cut * max(lam[-1], 1e-300)]
    return float(-(lam * np.log(lam)).sum())


def rel_entropy(rho, sigma, cut=1e-13):
    """``D(rho || sigma)`` in nats for PSD matrices with ``supp rho <= supp sigma``."""
    lam_s, U = np.linalg.eigh((sigma + sigma.conj().T) / 2)
    keep = lam_s > cut * lam_s[-1]
    Us = U[:, keep]
    log_sigma = (Us * np.log(lam_s[keep])) @ Us.conj().T
    return -vn_entropy(rho) - float(np.real(np.trace(rho @ log_sigma)))


def pinch(X, edges):
    """Block pinching of ``X`` at the given block edges."""
    out = np.zeros_like(X)
    for a, b in zip(edges[:-1], edges[1:]):
        out[a:b, a:b] = X[a:b, a:b]
    return out


def random_reduction_instance(rng, i):
    """A random key-rate instance with a rank-deficient feasible set.

    Returns ``dict(E, p, G_ops, edges, key_map, key_blocks, V, numeric, iscomplex)``:
    ``G_ops`` are the Kraus operators of the original key map, ``edges`` the
    pinching blocks of its output, ``V`` the true support. Even ``i`` hand the
    support to the reducer; odd ``i`` force it through constraints
    ``tr(P_perp rho) = 0`` so that it has to be found numerically.
    """
    iscomplex = i % 2 == 0
    n = 3 + i % 3
    r = 2 + (i // 3) % (n - 2)
    kind = i % 3
    if kind == 0:  # identity key map, pinching on n = blocks x rest
        G_ops = [np.eye(n)]
    elif kind == 1:  # isometric embedding (Naimark-like): output 2n, range rank n
        G_ops = [rand_isometry(rng, 2 * n, n, iscomplex)]
    else:  # two-operator channel into n + 1 dimensions
        W = rand_isometry(rng, 2 * (n + 1), n, iscomplex)
        G_ops = [W[: n + 1], W[n + 1 :]]
    m = G_ops[0].shape[0]
    nb = 2 + i % 2 if m >= 3 else 2
    cuts = np.sort(rng.choice(np.arange(1, m), size=nb - 1, replace=False))
    edges = [0, *cuts, m]
    key_map = hv.KrausMap.identity(n) if kind == 0 else hv.KrausMap(G_ops)
    key_blocks = [hv.KrausMap([np.eye(m)[a:b] @ K for K in G_ops]) for a, b in zip(edges[:-1], edges[1:])]
    V = rand_isometry(rng, n, r, iscomplex)
    sigma0 = rand_pd(rng, r, iscomplex, 0.2)
    sigma0 /= np.trace(sigma0).real
    rho0 = V @ sigma0 @ V.conj().T
    E = [np.eye(n)] + [rand_herm(rng, n, iscomplex) for _ in range(2)]
    numeric = i % 2 == 1
    if numeric:
        E.append(np.eye(n) - V @ V.conj().T)
    p = [float(np.real(np.trace(Ek @ rho0))) for Ek in E]
    if not iscomplex:
        E = [np.real(Ek) for Ek in E]
    return dict(
        E=E, p=p, G_ops=G_ops, edges=edges, key_map=key_map, key_blocks=key_blocks,
        V=V, rho0=rho0, numeric=numeric, iscomplex=iscomplex,
    )


def reduction_identity_error(cert, inst, rng, samples=3):
    """Worst ``|(-H(Ghat s) + H(Zhat s)) - D(G(V s V+) || Z(G(V s V+)))|`` over random ``s > 0``."""
    worst = 0.0
    r = cert.reduced_dim
    for _ in range(samples):
        s = rand_pd(rng, r, inst["iscomplex"], 0.05)
        s /= np.trace(s).real
        lhs = -vn_entropy(cert.ghat.apply(s)) + sum(vn_entropy(b.apply(s)) for b in cert.zhat)
        rho = cert.lift(s)
        G = sum(K @ rho @ K.conj().T for K in inst["G_ops"])
        rhs = rel_entropy(G, pinch(G, inst["edges"]))
        worst = max(worst, abs(lhs - rhs))
    return worst


# -- acceptance bookkeeping --------------------------------------------------------------

#: criterion number -> (passed, title, detail); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}
