"""Box-constrained linear complementarity: clipping, semismooth Newton,
reduced-space active set and trust-region Newton solvers.

The problem is: find ``c`` with ``lb <= c <= ub`` such that, with
``h = K c - f``, each component satisfies one of

* ``c_i = lb_i`` and ``h_i >= 0``
* ``lb_i < c_i < ub_i`` and ``h_i = 0``
* ``c_i = ub_i`` and ``h_i <= 0``.

When ``K`` is symmetric this is the optimality system of the quadratic
program ``min 1/2 c.Kc - c.f`` over the box.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import math
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linalg import (
    FactorizationError,
    KrylovBreakdown,
    KrylovOptions,
    SparseMatrix,
    cg_solve,
    gmres_solve,
    make_preconditioner,
)

__all__ = [
    "BoxConstrainedSystem",
    "ViOptions",
    "ComplementarityReport",
    "ConvergenceError",
    "fb",
    "fb_residual",
    "merit",
    "clip",
    "solve_semismooth",
    "solve_reduced_space",
    "solve_tron",
    "brute_force_mcp",
    "check_complementarity",
    "solve_bounded",
    "linear_solve",
    "SOLVERS",
]

SOLVERS = ("none", "clip", "ss", "rs", "tron")
KINK_SLOPE = 1.0 / math.sqrt(2.0) - 1.0


class ConvergenceError(RuntimeError):
    pass


@dataclasses.dataclass
class BoxConstrainedSystem:
    """``(K, f, lb, ub)``; scalar bounds are broadcast to vectors."""

    K: SparseMatrix
    f: np.ndarray
    lb: np.ndarray | float = -np.inf
    ub: np.ndarray | float = np.inf

    def __post_init__(self):
        if not isinstance(self.K, SparseMatrix):
            self.K = SparseMatrix(self.K)
        if self.K.nrows != self.K.ncols:
            raise ValueError("K must be square")
        n = self.K.nrows
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != (n,):
            raise ValueError(f"f has shape {self.f.shape}, expected ({n},)")
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if np.any(self.lb > self.ub):
            i = int(np.flatnonzero(self.lb > self.ub)[0])
            raise ValueError(f"lower bound exceeds upper bound at index {i}")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("bounds must not be NaN")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("lower bounds must be < +inf and upper bounds > -inf")

    @property
    def n(self) -> int:
        return self.K.nrows

    def residual(self, c) -> np.ndarray:
        return self.K.scipy @ c - self.f

    def project(self, c) -> np.ndarray:
        return clip(c, self.lb, self.ub)

    def objective(self, c) -> float:
        return 0.5 * float(c @ (self.K.scipy @ c)) - float(c @ self.f)


@dataclasses.dataclass
class ViOptions:
    abs_tol: float = 1e-8
    max_outer: int = 500
    inner: KrylovOptions = dataclasses.field(
        default_factory=lambda: KrylovOptions(rel_tol=1e-3, max_iters=2000)
    )
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    active_tol: float = 1e-10
    cycle_cap: int = 5
    trace: str | Path | None = None
    forcing: bool = True

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.min_step > 0 and self.active_tol >= 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.armijo < 0.5 and 0 < self.backtrack < 1):
            raise ValueError("line-search parameters out of range")


@dataclasses.dataclass
class ComplementarityReport:
    merit: float
    bound_violation: float
    sign_violation: float
    outer_iterations: int = 0
    inner_iterations: int = 0
    converged: bool = True
    message: str = ""
    regularized: bool = False
    merit_history: list = dataclasses.field(default_factory=list)


# ---------------------------------------------------------------------------
# Fischer-Burmeister reformulation
# ---------------------------------------------------------------------------


def fb(a, b):
    """Fischer-Burmeister function ``sqrt(a^2 + b^2) - a - b``."""
    return np.hypot(a, b) - a - b


def _fb_partials(a, b):
    r = np.hypot(a, b)
    kink = r == 0
    safe = np.where(kink, 1.0, r)
    da = np.where(kink, KINK_SLOPE, a / safe - 1.0)
    db = np.where(kink, KINK_SLOPE, b / safe - 1.0)
    return da, db


def _patterns(lb, ub):
    lo, hi = np.isfinite(lb), np.isfinite(ub)
    fixed = lo & hi & (lb == ub)
    return {
        "lower": lo & ~hi,
        "upper": ~lo & hi,
        "both": lo & hi & ~fixed,
        "free": ~lo & ~hi,
        "fixed": fixed,
    }


def _fb_parts(sys: BoxConstrainedSystem, c, h):
    """Return ``Phi`` and the diagonals ``(Da, Db)`` of ``J = Da + Db K``."""
    lb, ub = sys.lb, sys.ub
    pat = _patterns(lb, ub)
    phi = np.zeros_like(c)
    Da = np.zeros_like(c)
    Db = np.zeros_like(c)
    # lb finite only
    m = pat["lower"]
    a, b = c[m] - lb[m], h[m]
    phi[m] = fb(a, b)
    Da[m], Db[m] = _fb_partials(a, b)
    # ub finite only
    m = pat["upper"]
    a, b = ub[m] - c[m], -h[m]
    phi[m] = fb(a, b)
    pa, pb = _fb_partials(a, b)
    Da[m], Db[m] = -pa, -pb
    # both finite
    m = pat["both"]
    a2, b2 = ub[m] - c[m], -h[m]
    inner = fb(a2, b2)
    ia, ib = _fb_partials(a2, b2)
    a1 = c[m] - lb[m]
    phi[m] = fb(a1, inner)
    oa, ob = _fb_partials(a1, inner)
    Da[m] = oa - ob * ia
    Db[m] = -ob * ib
    # no bounds
    m = pat["free"]
    phi[m] = -h[m]
    Db[m] = -1.0
    # lb == ub
    m = pat["fixed"]
    phi[m] = lb[m] - c[m]
    Da[m] = -1.0
    return phi, Da, Db


def fb_residual(sys: BoxConstrainedSystem, c) -> np.ndarray:
    """Componentwise reformulation ``Phi(c)``; zero exactly at solutions."""
    c = np.asarray(c, dtype=float)
    return _fb_parts(sys, c, sys.residual(c))[0]


def merit(sys: BoxConstrainedSystem, c) -> float:
    phi = fb_residual(sys, c)
    return 0.5 * float(phi @ phi)


def clip(c, lb, ub) -> np.ndarray:
    """Componentwise median of ``(lb, c, ub)``."""
    return np.minimum(np.maximum(np.asarray(c, dtype=float), lb), ub)


def check_complementarity(sys: BoxConstrainedSystem, c, tol=1e-10) -> ComplementarityReport:
    """Bound and sign-condition violations of ``c``.

    A component within ``tol`` of a bound counts as sitting on it.
    """
    c = np.asarray(c, dtype=float)
    h = sys.residual(c)
    bound = float(max(np.max(sys.lb - c, initial=0.0), np.max(c - sys.ub, initial=0.0), 0.0))
    at_lb = c <= sys.lb + tol
    at_ub = c >= sys.ub - tol
    viol = np.where(
        at_lb & at_ub,
        0.0,
        np.where(at_lb, np.maximum(-h, 0.0), np.where(at_ub, np.maximum(h, 0.0), np.abs(h))),
    )
    phi = _fb_parts(sys, c, h)[0]
    return ComplementarityReport(
        merit=0.5 * float(phi @ phi),
        bound_violation=bound,
        sign_violation=float(viol.max(initial=0.0)),
    )


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def linear_solve(A: SparseMatrix, b, opts: KrylovOptions, x0=None):
    """CG for symmetric ``A``, GMRES otherwise, with preconditioner fallbacks.

    An ILU(0) factorization with a zero pivot falls back to Jacobi; an
    indefinite preconditioned CG falls back to GMRES.
    """
    try:
        M = make_preconditioner(A, opts.preconditioner)
    except FactorizationError:
        try:
            M = make_preconditioner(A, "jacobi")
        except FactorizationError:
            M = None
    if A.is_symmetric():
        try:
            return cg_solve(A, b, x0, opts, M=M, check_symmetry=False)
        except KrylovBreakdown:
            pass
    return gmres_solve(A, b, x0, opts, M=M)


class _Trace:
    def __init__(self, path):
        self.rows = []
        self.path = path

    def add(self, it, merit_value, step, active):
        self.rows.append((it, merit_value, step, active))

    def close(self):
        if self.path is None:
            return
        path = Path(self.path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "merit", "step_length", "active_count"))
            w.writerows(self.rows)


def _inner_options(opts: ViOptions, phi_norm: float) -> KrylovOptions:
    """Inner Krylov options with the forcing term ``min(rtol, |Phi|)``.

    Tightening the inner tolerance as the residual falls gives the final
    Newton steps their local convergence rate; far from the solution the
    configured descent tolerance applies unchanged.
    """
    if not opts.forcing:
        return opts.inner
    rtol = min(opts.inner.rel_tol, max(phi_norm, 1e-10))
    return dataclasses.replace(opts.inner, rel_tol=rtol)


def _active_count(sys, c, tol):
    return int(np.count_nonzero((c <= sys.lb + tol) | (c >= sys.ub - tol)))


def _finish(sys, c, it, inner, converged, message, history, regularized=False):
    rep = check_complementarity(sys, c)
    rep.outer_iterations = it
    rep.inner_iterations = inner
    rep.converged = converged
    rep.message = message
    rep.regularized = regularized
    rep.merit_history = history
    return rep


# ---------------------------------------------------------------------------
# semismooth Newton with a feasible projected line search
# ---------------------------------------------------------------------------


def solve_semismooth(sys: BoxConstrainedSystem, c0, opts: ViOptions | None = None):
    """Semismooth Newton on the Fischer-Burmeister reformulation.

    Each step solves ``J d = -Phi`` with ``J = diag(Da) + diag(Db) K`` an
    element of the generalized Jacobian, then backtracks along the projected
    path ``P(c + t d)`` until the merit ``Psi = 1/2 |Phi|^2`` decreases by the
    Armijo condition.  If ``d`` is not a descent direction for ``Psi`` the
    step falls back to the steepest-descent direction ``-J^T Phi``.
    Converged when ``|Phi|_2 <= abs_tol``.
    """
    opts = opts or ViOptions()
    c = sys.project(np.asarray(c0, dtype=float))
    K = sys.K.scipy
    trace = _Trace(opts.trace)
    inner_total = 0
    regularized = False
    h = sys.residual(c)
    phi, Da, Db = _fb_parts(sys, c, h)
    psi = 0.5 * float(phi @ phi)
    history = [psi]
    trace.add(0, psi, 0.0, _active_count(sys, c, opts.active_tol))
    it = 0
    try:
        for it in range(1, opts.max_outer + 1):
            if math.sqrt(2 * psi) <= opts.abs_tol:
                return c, _finish(sys, c, it - 1, inner_total, True, "converged", history, regularized)
            scale = np.abs(Da) + np.abs(Db) * np.abs(sys.K.diagonal())
            if np.any(scale == 0):
                Da = np.where(scale == 0, -1e-8, Da)
                regularized = True
            J = SparseMatrix(sp.diags(Db) @ K + sp.diags(Da))
            d, rep = linear_solve(J, -phi, _inner_options(opts, math.sqrt(2 * psi)))
            inner_total += rep.iterations
            grad = J.scipy.T @ phi
            slope = float(grad @ d)
            if not np.all(np.isfinite(d)) or slope > -1e-10 * np.linalg.norm(grad) * np.linalg.norm(d):
                d = -grad
            accepted = False
            for direction in (d, -grad):
                t = 1.0
                while t >= opts.min_step:
                    trial = sys.project(c + t * direction)
                    h_t = K @ trial - sys.f
                    phi_t, Da_t, Db_t = _fb_parts(sys, trial, h_t)
                    psi_t = 0.5 * float(phi_t @ phi_t)
                    decrease = min(float(grad @ (trial - c)), 0.0)
                    if psi_t <= psi + opts.armijo * decrease and (psi_t < psi or psi == 0):
                        accepted = True
                        break
                    t *= opts.backtrack
                if accepted:
                    break
            if not accepted:
                return c, _finish(sys, c, it, inner_total, False, "line search failed", history, regularized)
            c, h, phi, Da, Db, psi = trial, h_t, phi_t, Da_t, Db_t, psi_t
            history.append(psi)
            trace.add(it, psi, t, _active_count(sys, c, opts.active_tol))
        if math.sqrt(2 * psi) <= opts.abs_tol:
            return c, _finish(sys, c, it, inner_total, True, "converged", history, regularized)
        return c, _finish(sys, c, it, inner_total, False, "iteration limit", history, regularized)
    finally:
        trace.close()


# ---------------------------------------------------------------------------
# reduced-space active set
# ---------------------------------------------------------------------------


def _active_set(sys, c, h, tol):
    at_lb = c <= sys.lb + tol
    at_ub = c >= sys.ub - tol
    fixed = sys.lb == sys.ub
    return fixed | (at_lb & (h > 0)) | (at_ub & (h < 0))


def solve_reduced_space(sys: BoxConstrainedSystem, c0, opts: ViOptions | None = None):
    """Reduced-space active-set Newton method.

    The active set holds components at a bound whose residual pushes them
    outward (``c_i = lb_i`` with ``h_i > 0`` or ``c_i = ub_i`` with
    ``h_i < 0``).  Active components are pinned to their bound; the remaining
    block ``K_II d_I = -h_I`` is solved and the step is projected back into
    the box.  The first step taken with a given active set is accepted in
    full; while the active set stays the same the step backtracks on the
    Fischer-Burmeister merit.  Converged when ``|Phi|_2 <= abs_tol``.  If an
    active set that was left earlier recurs more than ``cycle_cap`` times
    the solve is reported as cycling.
    """
    opts = opts or ViOptions()
    c = sys.project(np.asarray(c0, dtype=float))
    K = sys.K.scipy
    n = sys.n
    trace = _Trace(opts.trace)
    inner_total = 0
    h = K @ c - sys.f
    phi = _fb_parts(sys, c, h)[0]
    psi = 0.5 * float(phi @ phi)
    history = [psi]
    seen: dict[bytes, int] = {}
    previous = None
    trace.add(0, psi, 0.0, _active_count(sys, c, opts.active_tol))
    it = 0
    try:
        for it in range(1, opts.max_outer + 1):
            if math.sqrt(2 * psi) <= opts.abs_tol:
                return c, _finish(sys, c, it - 1, inner_total, True, "converged", history)
            active = _active_set(sys, c, h, opts.active_tol)
            key = np.packbits(active).tobytes()
            fresh = key not in seen
            if key != previous:
                seen[key] = seen.get(key, 0) + 1
                if seen[key] > opts.cycle_cap:
                    return c, _finish(sys, c, it, inner_total, False, "active set cycling", history)
            previous = key
            inactive = np.flatnonzero(~active)
            act = np.flatnonzero(active)
            d = np.zeros(n)
            # pin active components exactly to the bound they sit on
            target = np.where(c[act] <= sys.lb[act] + opts.active_tol, sys.lb[act], sys.ub[act])
            d[act] = target - c[act]
            if len(inactive):
                rhs = -h[inactive]
                if len(act):
                    rhs -= K[inactive][:, act] @ d[act]
                K_II = SparseMatrix(K[inactive][:, inactive])
                d_I, rep = linear_solve(K_II, rhs, _inner_options(opts, math.sqrt(2 * psi)))
                inner_total += rep.iterations
                d[inactive] = d_I
            t = 1.0
            accepted = False
            while t >= opts.min_step:
                trial = sys.project(c + t * d)
                trial[act] = target
                h_t = K @ trial - sys.f
                phi_t = _fb_parts(sys, trial, h_t)[0]
                psi_t = 0.5 * float(phi_t @ phi_t)
                if fresh or psi_t <= (1.0 - 2.0 * opts.armijo * t) * psi:
                    accepted = True
                    break
                t *= opts.backtrack
            if not accepted:
                return c, _finish(sys, c, it, inner_total, False, "line search failed", history)
            c, h, psi = trial, h_t, psi_t
            history.append(psi)
            trace.add(it, psi, t, int(len(act)))
        if math.sqrt(2 * psi) <= opts.abs_tol:
            return c, _finish(sys, c, it, inner_total, True, "converged", history)
        return c, _finish(sys, c, it, inner_total, False, "iteration limit", history)
    finally:
        trace.close()


# ---------------------------------------------------------------------------
# trust-region Newton for the bound-constrained QP
# ---------------------------------------------------------------------------


def _steihaug(A, r, radius, opts, M):
    """Truncated PCG for ``A w = r`` inside ``|w| <= radius``."""
    w = np.zeros_like(r)
    res = r.copy()
    z = M(res) if M is not None else res
    p = z.copy()
    rz = float(res @ z)
    rnorm0 = float(np.linalg.norm(r))
    iters = 0
    if rnorm0 == 0.0:
        return w, 0
    for iters in range(1, opts.max_iters + 1):
        Ap = A @ p
        curv = float(p @ Ap)
        if curv <= 0:
            return _to_boundary(w, p, radius), iters
        alpha = rz / curv
        w_new = w + alpha * p
        if np.linalg.norm(w_new) >= radius:
            return _to_boundary(w, p, radius), iters
        w = w_new
        res -= alpha * Ap
        if np.linalg.norm(res) <= opts.rel_tol * rnorm0:
            return w, iters
        z = M(res) if M is not None else res
        rz_new = float(res @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return w, iters


def _to_boundary(w, p, radius):
    a = float(p @ p)
    b = 2.0 * float(w @ p)
    c = float(w @ w) - radius**2
    tau = (-b + math.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a) if a > 0 else 0.0
    return w + tau * p


def solve_tron(
    sys: BoxConstrainedSystem,
    c0,
    opts: ViOptions | None = None,
    expand=2.0,
    shrink=0.25,
    accept=0.1,
    mu=0.01,
    max_minor=20,
):
    """Trust-region Newton method for ``min 1/2 c.Kc - c.f`` over the box.

    Each outer step takes a Cauchy point by projected search along the
    negative gradient inside the trust region, then improves it with
    truncated preconditioned CG on the free variables followed by a
    projected search.  The radius grows by ``expand`` when a step reaches
    it with good agreement and shrinks by ``shrink`` when the reduction ratio
    falls below ``accept``.  Requires symmetric ``K``.
    """
    if not sys.K.is_symmetric():
        raise ValueError("trust-region QP solver needs a symmetric K (the problem is not a minimization)")
    opts = opts or ViOptions()
    K = sys.K.scipy
    lb, ub = sys.lb, sys.ub
    c = sys.project(np.asarray(c0, dtype=float))
    trace = _Trace(opts.trace)
    g = K @ c - sys.f
    phi = _fb_parts(sys, c, g)[0]
    psi = 0.5 * float(phi @ phi)
    history = [psi]
    radius = max(float(np.linalg.norm(sys.project(c - g) - c)), 1e-12)
    alpha = 1.0
    inner_total = 0
    trace.add(0, psi, 0.0, _active_count(sys, c, opts.active_tol))

    def increment(grad, s):
        # q(x + s) - q(x) evaluated without the cancellation of two large values
        return float(grad @ s) + 0.5 * float(s @ (K @ s))

    it = 0
    try:
        for it in range(1, opts.max_outer + 1):
            if math.sqrt(2 * psi) <= opts.abs_tol:
                return c, _finish(sys, c, it - 1, inner_total, True, "converged", history)
            # Cauchy point along the projected steepest-descent path
            def cauchy(t):
                s = sys.project(c - t * g) - c
                return s, increment(g, s), float(g @ s)

            s, dq, gs = cauchy(alpha)
            ok = dq <= mu * gs and np.linalg.norm(s) <= radius
            if ok:
                for _ in range(20):
                    s2, dq2, gs2 = cauchy(alpha * 2)
                    if not (dq2 <= mu * gs2 and np.linalg.norm(s2) <= radius) or np.array_equal(s2, s):
                        break
                    alpha *= 2
                    s, dq, gs = s2, dq2, gs2
            else:
                while alpha > 1e-20:
                    alpha *= 0.5
                    s, dq, gs = cauchy(alpha)
                    if dq <= mu * gs and np.linalg.norm(s) <= radius:
                        break
            x = c + s
            # subspace refinement on the free variables
            for _ in range(max_minor):
                free = np.flatnonzero((x > lb + opts.active_tol) & (x < ub - opts.active_tol))
                if len(free) == 0:
                    break
                gx = K @ x - sys.f
                remaining = radius - float(np.linalg.norm(x - c))
                if remaining <= 0:
                    break
                A = SparseMatrix(K[free][:, free])
                try:
                    M = make_preconditioner(A, opts.inner.preconditioner)
                except FactorizationError:
                    M = make_preconditioner(A, "jacobi")
                w_f, k = _steihaug(A.scipy, -gx[free], remaining, opts.inner, M)
                inner_total += k
                w = np.zeros_like(x)
                w[free] = w_f
                beta = 1.0
                while beta > 1e-12:
                    trial = sys.project(x + beta * w)
                    if increment(gx, trial - x) <= mu * float(gx @ (trial - x)):
                        break
                    beta *= 0.5
                else:
                    break
                newly_bound = np.any((trial[free] <= lb[free] + opts.active_tol) | (trial[free] >= ub[free] - opts.active_tol))
                x = trial
                if not newly_bound:
                    break
            step = x - c
            # the quadratic model is the objective itself, so both reductions coincide
            predicted = actual = increment(g, step)
            snorm = float(np.linalg.norm(step))
            if predicted >= 0 and snorm == 0.0:
                if math.sqrt(2 * psi) <= opts.abs_tol:
                    break
                return c, _finish(sys, c, it, inner_total, False, "trust region collapsed", history)
            ratio = actual / predicted if predicted < 0 else -1.0
            if ratio < accept:
                radius *= shrink
                if radius < 1e-14:
                    return c, _finish(sys, c, it, inner_total, False, "trust region collapsed", history)
                continue
            if snorm >= 0.99 * radius:
                radius *= expand
            c = x
            g = K @ c - sys.f
            phi = _fb_parts(sys, c, g)[0]
            psi = 0.5 * float(phi @ phi)
            history.append(psi)
            trace.add(it, psi, snorm, _active_count(sys, c, opts.active_tol))
        ok = math.sqrt(2 * psi) <= opts.abs_tol
        return c, _finish(sys, c, it, inner_total, ok, "converged" if ok else "iteration limit", history)
    finally:
        trace.close()


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


def brute_force_mcp(sys: BoxConstrainedSystem, tol=1e-9, batch=20000) -> np.ndarray:
    """Solve a tiny MCP by trying every at-lower / interior / at-upper pattern.

    Each pattern fixes the bound components and solves the remaining rows
    of ``K c = f``; a pattern is kept when the result satisfies every bound
    and sign condition.  Raises :class:`ConvergenceError` when no pattern or
    more than one distinct solution qualifies.
    """
    n = sys.n
    if n > 12:
        raise ValueError("brute force is limited to n <= 12")
    K = sys.K.to_dense()
    f = sys.f
    lb, ub = sys.lb, sys.ub
    options = []
    for i in range(n):
        if lb[i] == ub[i]:
            options.append((0,))
            continue
        opt = [1]
        if np.isfinite(lb[i]):
            opt.append(0)
        if np.isfinite(ub[i]):
            opt.append(2)
        options.append(tuple(opt))
    found = []
    patterns = itertools.product(*options)
    while True:
        chunk = np.array(list(itertools.islice(patterns, batch)), dtype=np.int8)
        if chunk.size == 0:
            break
        chunk = chunk.reshape(-1, n)
        interior = chunk == 1
        A = np.where(interior[:, :, None], K[None], np.eye(n)[None])
        rhs = np.where(interior, f, np.where(chunk == 0, lb, ub))
        rhs = np.where(np.isfinite(rhs), rhs, 0.0)
        ok_rows = np.linalg.cond(A) < 1e12
        if not ok_rows.any():
            continue
        sol = np.linalg.solve(A[ok_rows], rhs[ok_rows][..., None])[..., 0]
        pat = chunk[ok_rows]
        h = sol @ K.T - f
        feasible = np.all((sol >= lb - tol) & (sol <= ub + tol), axis=1)
        sign = np.where(pat == 0, h >= -tol, np.where(pat == 2, h <= tol, True))
        good = feasible & np.all(sign, axis=1)
        for x in sol[good]:
            if not any(np.max(np.abs(x - y)) <= 1e3 * tol for y in found):
                found.append(x)
    if not found:
        raise ConvergenceError("no complementarity pattern yields a solution")
    if len(found) > 1:
        raise ConvergenceError(f"{len(found)} distinct solutions found")
    return clip(found[0], lb, ub)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class DriverResult:
    """Outcome of the assemble / solve / clip / bounded-solve sequence."""

    c_unconstrained: np.ndarray
    c_clip: np.ndarray
    c: np.ndarray
    linear_report: object
    report: ComplementarityReport | None
    wall_time: float
    solver: str

    @property
    def converged(self) -> bool:
        lin = self.linear_report is None or self.linear_report.converged
        return lin and (self.report is None or self.report.converged)


SOLVER_FUNCS = {
    "ss": solve_semismooth,
    "rs": solve_reduced_space,
    "tron": solve_tron,
}


def solve_bounded(K, f, lb, ub, solver="ss", opts: ViOptions | None = None, linear_opts=None, x0=None):
    """Unconstrained solve, clip, then the chosen bound-constrained solver.

    ``solver`` is one of ``none`` (unconstrained solution only), ``clip``
    (clipped unconstrained solution), ``ss``, ``rs`` or ``tron``; the last
    three start from the clipped vector.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    t0 = time.perf_counter()
    sys = BoxConstrainedSystem(K, f, lb, ub)
    linear_opts = linear_opts or KrylovOptions(rel_tol=1e-7)
    c0, lin = linear_solve(sys.K, sys.f, linear_opts, x0=x0)
    c_clip = sys.project(c0)
    report = None
    if solver == "none":
        c = c0
    elif solver == "clip":
        c = c_clip
    else:
        c, report = SOLVER_FUNCS[solver](sys, c_clip, opts)
    return DriverResult(c0, c_clip, c, lin, report, time.perf_counter() - t0, solver)
