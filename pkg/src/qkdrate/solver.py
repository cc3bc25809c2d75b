"""Primal-dual interior-point method for non-symmetric conic programs.

Solves

    minimize c'x  subject to  A x = b,  x in K_1 x ... x K_m

where every cone only provides a primal barrier oracle (value, gradient,
Hessian, optionally the third directional derivative). The method follows
the central path of the homogeneous self-dual embedding

    A x - b tau = 0,   -A'y + c tau - s = 0,   b'y - c'x - kappa = 0,
    s + mu grad f(x) = 0,   tau kappa = mu,

with predictor and centering directions, optional third-order adjustments of
both, and a combined step accepted inside a neighbourhood of the central
path measured in the local (inverse-Hessian) norm.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from . import precision as P
from .cones.base import Cone, dot

log = logging.getLogger(__name__)

STATUSES = ("optimal", "near_optimal", "infeasible_detected", "iteration_limit", "numerical_failure")

# step-length schedule for the combined predictor/centering step
ALPHA_SCHEDULE = (0.9999, 0.999, 0.99, 0.97, 0.95, 0.9, 0.85, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0)
# shortened pure centering steps tried if the whole schedule fails
CENTERING_BACKOFF = (0.5, 0.25, 0.1, 0.03)


@dataclass
class ConicProblem:
    """``min c'x  s.t.  A x = b,  x in cones[0] x cones[1] x ...``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: Sequence[Cone]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A))
        self.b = np.asarray(self.b).reshape(-1)
        self.c = np.asarray(self.c).reshape(-1)
        n = sum(k.dim for k in self.cones)
        if self.c.shape != (n,):
            raise ValueError(f"objective has length {self.c.shape[0]}, cones need {n}")
        if self.A.shape != (self.b.shape[0], n):
            raise ValueError(f"constraint matrix has shape {self.A.shape}, expected ({self.b.shape[0]}, {n})")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def nu(self):
        return sum(k.nu for k in self.cones)

    def slices(self):
        out, start = [], 0
        for k in self.cones:
            out.append(slice(start, start + k.dim))
            start += k.dim
        return out


@dataclass
class SolverOptions:
    tol_gap: float | None = None
    tol_feas: float | None = None
    tol_infeas: float | None = None
    max_iter: int = 200
    use_third_order: bool = True
    eta: float = 0.7
    precision: str = "double"
    refine: bool = True
    time_limit: float | None = None
    verbose: bool = False

    def resolved(self) -> "SolverOptions":
        """Fill tolerances scaled to the working precision: ``eps^(1/2)``-sized."""
        P.check_precision(self.precision)
        base = float(P.sqrt(P.machine_eps(self.precision))) if self.precision == "extended" else 1e-8
        return replace(
            self,
            tol_gap=base if self.tol_gap is None else self.tol_gap,
            tol_feas=base if self.tol_feas is None else self.tol_feas,
            tol_infeas=(base if self.tol_infeas is None else self.tol_infeas),
        )


@dataclass
class SolveReport:
    status: str
    primal_obj: object
    dual_obj: object
    gap: object
    primal_res: float
    dual_res: float
    iterations: int
    x: np.ndarray | None
    y: np.ndarray | None
    s: np.ndarray | None = None
    tau: object = None
    kappa: object = None
    solve_time: float = 0.0
    message: str = ""
    mu_history: list = field(default_factory=list)
    theta_history: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)
    options: SolverOptions | None = None

    @property
    def converged(self) -> bool:
        return self.status in ("optimal", "near_optimal")


class InfeasibleError(ValueError):
    """Raised when constraints are detected to be inconsistent."""


@dataclass
class Preprocessed:
    """A problem with independent, unit-norm rows, and the map back to the original."""

    problem: ConicProblem
    keep: np.ndarray
    scale: np.ndarray
    m_orig: int

    def recover_y(self, y):
        full = np.zeros(self.m_orig, dtype=y.dtype if y is not None else float)
        if P.is_extended(y):
            full = P.asarray(full, "extended")
        full[self.keep] = y / self.scale
        return full


def preprocess(problem: ConicProblem, rank_tol: float | None = None) -> Preprocessed:
    """Drop linearly dependent equality rows and rescale rows to unit norm.

    Rank is detected by QR with column pivoting of ``A'`` in double
    precision. A dropped row must be consistent with the kept ones
    (its right-hand side reproduced by the same combination) or
    :class:`InfeasibleError` is raised.
    """
    A = problem.A
    b = problem.b
    m, n = A.shape
    Ad = P.to_double(A)
    bd = P.to_double(b)
    row_norms = np.linalg.norm(Ad, axis=1)
    if m == 0:
        keep = np.zeros(0, dtype=int)
    else:
        _, R, piv = scipy.linalg.qr(Ad.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        if rank_tol is None:
            rank_tol = max(m, n) * np.finfo(float).eps * 100
        top = diag[0] if diag.size else 0.0
        rank = int(np.sum(diag > rank_tol * max(top, 1e-300))) if top > 0 else 0
        keep = np.sort(piv[:rank])
    dropped = np.setdiff1d(np.arange(m), keep)
    if dropped.size:
        Ak = Ad[keep]
        bk = bd[keep]
        for i in dropped:
            if keep.size:
                z, *_ = np.linalg.lstsq(Ak.T, Ad[i], rcond=None)
                pred = float(z @ bk)
            else:
                pred = 0.0
            scale = 1.0 + abs(bd[i]) + (np.linalg.norm(z) * np.linalg.norm(bk) if keep.size else 0.0)
            if abs(pred - bd[i]) > 1e-8 * scale:
                raise InfeasibleError(
                    f"constraint row {i} is a combination of other rows but its right-hand side "
                    f"{bd[i]:.6g} differs from the implied {pred:.6g}"
                )
    scale = row_norms[keep]
    prec = P.precision_of(A, b, problem.c)
    sc = P.asarray(scale, prec)
    A2 = A[keep] / sc[:, None]
    b2 = b[keep] / sc
    new = ConicProblem(problem.c, A2, b2, problem.cones, dict(problem.metadata))
    return Preprocessed(new, keep, sc, m)


def _norm(v):
    return P.norm(v) if v.size else 0 * P.norm(np.ones(1))


class _Iterate:
    __slots__ = ("x", "y", "tau", "s", "kappa", "states", "mu", "factors")

    def __init__(self, x, y, tau, s, kappa, states, mu):
        self.x, self.y, self.tau, self.s, self.kappa = x, y, tau, s, kappa
        self.states = states
        self.mu = mu
        self.factors = None


class _Solver:
    def __init__(self, prob: ConicProblem, opts: SolverOptions):
        self.prob = prob
        self.opts = opts
        self.prec = opts.precision
        self.A = P.asarray(prob.A, self.prec)
        self.b = P.asarray(prob.b, self.prec)
        self.c = P.asarray(prob.c, self.prec)
        self.cones = prob.cones
        self.slices = prob.slices()
        self.nu = prob.nu
        self.third = opts.use_third_order
        # cheap cones first when testing interior membership
        self.order = sorted(range(len(self.cones)), key=lambda k: self.cones[k].dim)
        self.one = P.scalar(1, self.prec)
        self.nb = _norm(self.b)
        self.nc = _norm(self.c)

    # -- helpers ---------------------------------------------------------------
    def mu_of(self, x, s, tau, kappa):
        return (dot(x, s) + tau * kappa) / (self.nu + 1)

    def states_at(self, x):
        states = [None] * len(self.cones)
        for k in self.order:
            st = self.cones[k].state(x[self.slices[k]])
            if st is None:
                return None
            states[k] = st
        return states

    def factors_of(self, it: _Iterate):
        if it.factors is None:
            it.factors = [st.factor() for st in it.states]
        return it.factors

    def proximity(self, it: _Iterate):
        """Largest per-cone local norm of ``s / mu + grad f(x)``, and the tau/kappa term."""
        mu = it.mu
        worst = abs(it.tau * it.kappa / mu - 1)
        factors = self.factors_of(it)
        for k, sl in enumerate(self.slices):
            psi = it.s[sl] / mu + it.states[k].gradient()
            val = dot(psi, factors[k].solve(psi))
            if not val >= 0:
                return np.inf
            worst = max(worst, P.sqrt(val))
        return worst

    def hinv(self, factors, V, mu):
        """``(mu H)^-1 V`` blockwise."""
        out = np.empty(V.shape, dtype=V.dtype)
        for k, sl in enumerate(self.slices):
            out[sl] = factors[k].solve(V[sl]) / mu
        return out

    def happly(self, it, v, mu):
        out = np.empty(v.shape, dtype=v.dtype)
        for k, sl in enumerate(self.slices):
            out[sl] = mu * it.states[k].hess_apply(v[sl])
        return out

    def third_vec(self, it, dx):
        out = np.zeros(dx.shape, dtype=dx.dtype)
        if P.is_extended(dx):
            out = out * self.one
        for k, sl in enumerate(self.slices):
            if self.cones[k].has_third_order:
                out[sl] = it.states[k].third_order(dx[sl])
        return out

    def residuals(self, it: _Iterate):
        A, b, c = self.A, self.b, self.c
        rp = A @ it.x - b * it.tau
        rd = -(A.T @ it.y) + c * it.tau - it.s
        rg = dot(b, it.y) - dot(c, it.x) - it.kappa
        return rp, rd, rg

    # -- Newton system ---------------------------------------------------------
    def prepare(self, it: _Iterate):
        A, b, c = self.A, self.b, self.c
        mu, tau = it.mu, it.tau
        factors = self.factors_of(it)
        m = A.shape[0]
        Pm = self.hinv(factors, A.T.copy(), mu) if m else np.zeros((self.prob.n, 0), dtype=A.dtype)
        q = self.hinv(factors, c.copy(), mu)
        Aq = A @ q
        K = np.empty((m + 1, m + 1), dtype=A.dtype if P.is_extended(A) else float)
        if P.is_extended(A):
            K = P.asarray(np.zeros((m + 1, m + 1)), "extended")
        K[:m, :m] = A @ Pm
        K[:m, m] = -(Aq + b)
        K[m, :m] = b - Aq
        K[m, m] = dot(c, q) + mu / (tau * tau)
        self.sys = (it, factors, Pm, q, K)
        if not P.is_extended(K):
            if not np.all(np.isfinite(K)):
                raise np.linalg.LinAlgError("non-finite Schur complement")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                self.lu = scipy.linalg.lu_factor(K, check_finite=False)
            if not np.all(np.diag(self.lu[0])):
                raise np.linalg.LinAlgError("singular Schur complement")
        else:
            self.lu = None

    def solve_newton(self, r1, r2, r3, rs, rk):
        """Direction for the linearized embedding with the given right-hand sides."""
        it, factors, Pm, q, K = self.sys
        mu, tau = it.mu, it.tau
        A, c = self.A, self.c
        m = A.shape[0]
        p = self.hinv(factors, r2 + rs, mu)
        rhs = np.empty(m + 1, dtype=K.dtype)
        rhs[:m] = r1 - A @ p
        rhs[m] = r3 + rk + dot(c, p)
        sol = scipy.linalg.lu_solve(self.lu, rhs, check_finite=False) if self.lu is not None else P.solve(K, rhs)
        dy = sol[:m]
        dtau = sol[m]
        dx = p + Pm @ dy - q * dtau
        # s from the dual equations, so the dual residual stays exact; the
        # barrier equations are only needed to the accuracy the neighbourhood
        # test enforces. kappa from its scalar centrality equation: the gap row
        # b'dy - c'dx loses all accuracy to cancellation once mu is tiny
        ds = -(A.T @ dy) + c * dtau - r2
        dkappa = rk - mu / (tau * tau) * dtau
        return [dx, dy, dtau, ds, dkappa]

    def newton(self, r1, r2, r3, rs, rk):
        d = self.solve_newton(r1, r2, r3, rs, rk)
        if self.opts.refine:
            e = self.newton_residual(d, r1, r2, r3, rs, rk)
            corr = self.solve_newton(*e)
            d = [di + ci for di, ci in zip(d, corr)]
        return d

    def newton_residual(self, d, r1, r2, r3, rs, rk):
        it = self.sys[0]
        dx, dy, dtau, ds, dkappa = d
        A, b, c = self.A, self.b, self.c
        mu, tau = it.mu, it.tau
        e1 = r1 - (A @ dx - b * dtau)
        e2 = r2 - (-(A.T @ dy) + c * dtau - ds)
        e3 = r3 - (dot(b, dy) - dot(c, dx) - dkappa)
        es = rs - (ds + self.happly(it, dx, mu))
        ek = rk - (dkappa + mu / (tau * tau) * dtau)
        return e1, e2, e3, es, ek

    # -- main loop -------------------------------------------------------------
    def initial(self):
        x = np.concatenate([k.initial_point(self.prec) for k in self.cones])
        states = self.states_at(x)
        if states is None:
            raise RuntimeError("cone initial point is not interior")
        s = -np.concatenate([st.gradient() for st in states])
        y = P.asarray(np.zeros(self.A.shape[0]), self.prec)
        one = self.one
        return _Iterate(x, y, one, s, one, states, self.mu_of(x, s, one, one))

    def trial(self, it: _Iterate, d):
        dx, dy, dtau, ds, dkappa = d
        tau = it.tau + dtau
        kappa = it.kappa + dkappa
        if not (tau > 0 and kappa > 0):
            return None
        x = it.x + dx
        states = self.states_at(x)
        if states is None:
            return None
        s = it.s + ds
        mu = self.mu_of(x, s, tau, kappa)
        if not mu > 0:
            return None
        new = _Iterate(x, it.y + dy, tau, s, kappa, states, mu)
        try:
            prox = self.proximity(new)
        except np.linalg.LinAlgError:
            return None
        if not prox <= self.opts.eta:
            return None
        return new

    def metrics(self, it: _Iterate):
        rp, rd, rg = self.residuals(it)
        tau = it.tau
        pobj = dot(self.c, it.x) / tau
        dobj = dot(self.b, it.y) / tau
        pres = _norm(rp) / tau / (1 + self.nb)
        dres = _norm(rd) / tau / (1 + self.nc)
        gap = pobj - dobj
        return pobj, dobj, gap, pres, dres

    def check(self, it: _Iterate):
        opts = self.opts
        pobj, dobj, gap, pres, dres = self.metrics(it)
        xs = dot(it.x, it.s) / (it.tau * it.tau)
        gap_ok = max(abs(gap), xs) <= opts.tol_gap * max(1, min(abs(pobj), abs(dobj)))
        if pres <= opts.tol_feas and dres <= opts.tol_feas and gap_ok:
            return "optimal", ""
        # infeasibility certificates from the embedding
        by = dot(self.b, it.y)
        if by > 0:
            if _norm(self.A.T @ it.y + it.s) <= opts.tol_infeas * by:
                return "infeasible_detected", "primal infeasibility certificate: b'y > 0 with -A'y in the dual cone"
        cx = dot(self.c, it.x)
        if cx < 0:
            if _norm(self.A @ it.x) <= opts.tol_infeas * -cx:
                return "infeasible_detected", "dual infeasibility certificate: A x = 0, c'x < 0 with x in the cone (unbounded or infeasible)"
        return None, ""

    def run(self) -> SolveReport:
        opts = self.opts
        t0 = time.perf_counter()
        mu_hist, theta_hist, alpha_hist = [], [], []
        message = ""
        try:
            it = self.initial()
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            return self.report("numerical_failure", None, 0, t0, str(exc), mu_hist, theta_hist, alpha_hist)
        status = None
        k = 0
        with P.context(self.prec):
            while True:
                mu_hist.append(it.mu)
                status, message = self.check(it)
                if status is not None:
                    break
                if k >= opts.max_iter:
                    status = "iteration_limit"
                    break
                if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
                    status = "iteration_limit"
                    message = "time limit reached"
                    break
                try:
                    new, alpha = self.step(it)
                except (np.linalg.LinAlgError, ValueError, ZeroDivisionError, FloatingPointError) as exc:
                    status = "numerical_failure"
                    message = f"linear algebra failure: {exc}"
                    break
                if new is None:
                    status = "numerical_failure"
                    message = "no acceptable step along the predictor/centering directions"
                    break
                theta_hist.append(1 - P.to_float(new.mu / it.mu))
                alpha_hist.append(alpha)
                k += 1
                if opts.verbose:
                    pobj, dobj, gap, pres, dres = self.metrics(new)
                    log.info(
                        "iter %3d  mu %.3e  pobj %+.10e  dobj %+.10e  pres %.2e  dres %.2e  alpha %.4f",
                        k, float(new.mu), float(pobj), float(dobj), float(pres), float(dres), alpha,
                    )
                it = new
        if status in ("iteration_limit", "numerical_failure"):
            pobj, dobj, gap, pres, dres = self.metrics(it)
            loose = 1e3
            scale = max(1, min(abs(pobj), abs(dobj)))
            if pres <= loose * opts.tol_feas and dres <= loose * opts.tol_feas and abs(gap) <= loose * opts.tol_gap * scale:
                message = (message + "; " if message else "") + f"stopped with {status}, loose tolerances met"
                status = "near_optimal"
        return self.report(status, it, k, t0, message, mu_hist, theta_hist, alpha_hist)

    def step(self, it: _Iterate):
        mu, tau, kappa = it.mu, it.tau, it.kappa
        self.prepare(it)
        rp, rd, rg = self.residuals(it)
        zero_m = rp * 0
        zero_n = rd * 0
        zero = 0 * mu
        # predictor
        dp = self.newton(-rp, -rd, -rg, -it.s, -kappa)
        # centering
        g = np.concatenate([st.gradient() for st in it.states])
        dc = self.newton(zero_m, zero_n, zero, -(it.s + mu * g), -kappa + mu / tau)
        if self.third:
            dxp, dtp = dp[0], dp[2]
            rs = self.happly(it, dxp, mu) - self.third_vec(it, dxp) * (mu / 2)
            rk = mu * dtp / (tau * tau) + mu * dtp * dtp / (tau * tau * tau)
            ap = self.newton(zero_m, zero_n, zero, rs, rk)
            dxc, dtc = dc[0], dc[2]
            rs = -self.third_vec(it, dxc) * (mu / 2)
            rk = mu * dtc * dtc / (tau * tau * tau)
            ac = self.newton(zero_m, zero_n, zero, rs, rk)
        else:
            ap = [d * 0 for d in dp]
            ac = [d * 0 for d in dc]
        for alpha in ALPHA_SCHEDULE:
            a = P.scalar(alpha, self.prec)
            b = 1 - a
            d = [a * (p + a * q) + b * (cc + b * r) for p, q, cc, r in zip(dp, ap, dc, ac)]
            new = self.trial(it, d)
            if new is not None:
                return new, alpha
        for beta in CENTERING_BACKOFF:
            bb = P.scalar(beta, self.prec)
            new = self.trial(it, [bb * cc for cc in dc])
            if new is not None:
                return new, 0.0
        return None, 0.0

    def report(self, status, it, k, t0, message, mu_hist, theta_hist, alpha_hist):
        elapsed = time.perf_counter() - t0
        if it is None:
            return SolveReport(status, None, None, None, np.inf, np.inf, k, None, None, solve_time=elapsed,
                               message=message, options=self.opts)
        pobj, dobj, gap, pres, dres = self.metrics(it)
        return SolveReport(
            status=status,
            primal_obj=pobj,
            dual_obj=dobj,
            gap=gap,
            primal_res=P.to_float(pres),
            dual_res=P.to_float(dres),
            iterations=k,
            x=it.x / it.tau,
            y=it.y / it.tau,
            s=it.s / it.tau,
            tau=it.tau,
            kappa=it.kappa,
            solve_time=elapsed,
            message=message,
            mu_history=[P.to_float(m) for m in mu_hist],
            theta_history=theta_hist,
            alpha_history=alpha_hist,
            options=self.opts,
        )


def solve(problem: ConicProblem, options: SolverOptions | None = None, **overrides) -> SolveReport:
    """Solve ``problem``; see :class:`SolverOptions` for the knobs.

    Inconsistent dependent constraints are reported as ``infeasible_detected``
    without running the interior-point iteration.
    """
    opts = options or SolverOptions()
    if overrides:
        opts = replace(opts, **overrides)
    opts = opts.resolved()
    t0 = time.perf_counter()
    try:
        pre = preprocess(problem)
    except InfeasibleError as exc:
        return SolveReport("infeasible_detected", None, None, None, np.inf, np.inf, 0, None, None,
                           solve_time=time.perf_counter() - t0, message=str(exc), options=opts)
    prob = pre.problem
    if opts.precision == "extended":
        cones = [k.to_precision("extended") if hasattr(k, "to_precision") else k for k in prob.cones]
        prob = ConicProblem(prob.c, prob.A, prob.b, cones, prob.metadata)
    rep = _Solver(prob, opts).run()
    if rep.y is not None:
        rep.y = pre.recover_y(rep.y)
    return rep


def dual_lower_bound(report: SolveReport):
    """Dual objective of a converged solve: a lower bound on the optimal value up to the tolerances."""
    if not report.converged:
        raise ValueError(f"no dual bound from a solve with status {report.status!r}")
    return report.dual_obj
