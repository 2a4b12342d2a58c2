"""Sparse CSR matrices, Krylov solvers and incomplete-factorization preconditioners.

Storage and the matrix-vector kernel are delegated to :mod:`scipy.sparse`; the
Krylov iterations and ILU(0) are implemented here so that residual
histories, breakdown detection and termination reasons are under our control.
"""

from __future__ import annotations

import dataclasses
import enum
import time

import numba
import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SparseMatrix",
    "KrylovOptions",
    "SolveReport",
    "Termination",
    "KrylovBreakdown",
    "FactorizationError",
    "spmv",
    "cg_solve",
    "gmres_solve",
    "ilu0_factor",
    "ILU0",
    "SparseLU",
    "PRECONDITIONERS",
    "jacobi",
    "make_preconditioner",
    "block_matrix",
    "write_matrix_market",
    "read_matrix_market",
]

SYMMETRY_TOL = 1e-10


class KrylovBreakdown(ArithmeticError):
    pass


class FactorizationError(ArithmeticError):
    def __init__(self, row, message="zero pivot"):
        self.row = row
        super().__init__(f"{message} in row {row}")


class SparseMatrix:
    """Immutable CSR matrix with sorted, unique column indices per row."""

    __slots__ = ("_csr",)

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix, dtype=float, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.setflags(write=False)
        self._csr = csr

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        return cls(sp.coo_matrix((values, (rows, cols)), shape=shape))

    @classmethod
    def from_dense(cls, array):
        return cls(sp.csr_matrix(np.asarray(array, dtype=float)))

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @property
    def nrows(self) -> int:
        return self._csr.shape[0]

    @property
    def ncols(self) -> int:
        return self._csr.shape[1]

    @property
    def shape(self):
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def scipy(self) -> sp.csr_matrix:
        """The underlying scipy matrix (treat as read-only)."""
        return self._csr

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self._csr.T)

    @property
    def T(self):
        return self.transpose()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.nnz else 0.0

    def asymmetry(self) -> float:
        """``max|A - A^T| / max|A|`` (0 for a zero matrix)."""
        if self.nrows != self.ncols:
            return np.inf
        scale = self.max_abs()
        if scale == 0.0:
            return 0.0
        diff = self._csr - self._csr.T
        return float(np.max(np.abs(diff.data))) / scale if diff.nnz else 0.0

    def is_symmetric(self, tol=SYMMETRY_TOL) -> bool:
        return self.asymmetry() <= tol

    def symmetric_part(self) -> "SparseMatrix":
        return SparseMatrix(0.5 * (self._csr + self._csr.T))

    def submatrix(self, rows, cols) -> "SparseMatrix":
        return SparseMatrix(self._csr[rows][:, cols])

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix(self._csr @ other._csr)
        return spmv(self, other)

    def __add__(self, other):
        return SparseMatrix(self._csr + other._csr)

    def __sub__(self, other):
        return SparseMatrix(self._csr - other._csr)

    def __mul__(self, scalar):
        return SparseMatrix(self._csr * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """CSR product ``A @ x``; rows are summed in ascending column order."""
    x = np.asarray(x, dtype=float)
    if x.shape != (A.ncols,):
        raise ValueError(f"dimension mismatch: matrix has {A.ncols} columns, vector {x.shape}")
    return A.scipy @ x


def block_matrix(blocks) -> SparseMatrix:
    """Assemble a sparse matrix from a nested list of blocks (``None`` = zero)."""
    return SparseMatrix(
        sp.bmat([[None if b is None else (b.scipy if isinstance(b, SparseMatrix) else b) for b in row] for row in blocks])
    )


def write_matrix_market(path, obj):
    if isinstance(obj, SparseMatrix):
        scipy.io.mmwrite(str(path), obj.scipy)
    else:
        scipy.io.mmwrite(str(path), np.asarray(obj, dtype=float).reshape(-1, 1))


def read_matrix_market(path):
    data = scipy.io.mmread(str(path))
    if sp.issparse(data):
        return SparseMatrix(data)
    return np.asarray(data).ravel()


# ---------------------------------------------------------------------------
# options and reports
# ---------------------------------------------------------------------------


class Termination(enum.Enum):
    RTOL = "converged: relative tolerance"
    ATOL = "converged: absolute tolerance"
    MAX_ITERS = "diverged: iteration limit"
    BREAKDOWN = "diverged: breakdown"
    STAGNATION = "diverged: stagnation"


PRECONDITIONERS = ("none", "jacobi", "ilu0", "lu")


@dataclasses.dataclass
class KrylovOptions:
    rel_tol: float = 1e-7
    abs_tol: float = 1e-50
    max_iters: int = 10000
    restart: int = 30
    preconditioner: str = "ilu0"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.restart < 1:
            raise ValueError("restart must be at least 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclasses.dataclass
class SolveReport:
    iterations: int
    final_residual_norm: float
    converged: bool
    wall_time: float
    termination: Termination
    residual_history: list = dataclasses.field(default_factory=list)
    tolerance: float = 0.0


# ---------------------------------------------------------------------------
# preconditioners
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _ilu0_kernel(indptr, indices, data):
    n = len(indptr) - 1
    lu = data.copy()
    diag = np.empty(n, dtype=np.int64)
    pos = -np.ones(n, dtype=np.int64)
    for i in range(n):
        diag[i] = -1
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] == i:
                diag[i] = p
        if diag[i] < 0:
            return lu, diag, i
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        for p in range(start, end):
            pos[indices[p]] = p
        for p in range(start, end):
            k = indices[p]
            if k >= i:
                break
            pivot = lu[diag[k]]
            if pivot == 0.0:
                return lu, diag, k
            lu[p] /= pivot
            lik = lu[p]
            for q in range(diag[k] + 1, indptr[k + 1]):
                j = indices[q]
                t = pos[j]
                if t >= 0:
                    lu[t] -= lik * lu[q]
        for p in range(start, end):
            pos[indices[p]] = -1
        if lu[diag[i]] == 0.0:
            return lu, diag, i
    return lu, diag, -1


@numba.njit(cache=True)
def _ilu0_apply(indptr, indices, lu, diag, r):
    n = len(r)
    z = r.copy()
    for i in range(n):
        s = z[i]
        for p in range(indptr[i], diag[i]):
            s -= lu[p] * z[indices[p]]
        z[i] = s
    for i in range(n - 1, -1, -1):
        s = z[i]
        for p in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[p] * z[indices[p]]
        z[i] = s / lu[diag[i]]
    return z


class ILU0:
    """Incomplete LU with the sparsity pattern of ``A`` (no fill)."""

    def __init__(self, A: SparseMatrix):
        if A.nrows != A.ncols:
            raise ValueError("ILU(0) needs a square matrix")
        indptr = np.asarray(A.row_offsets, dtype=np.int64)
        indices = np.asarray(A.col_indices, dtype=np.int64)
        lu, diag, bad = _ilu0_kernel(indptr, indices, np.asarray(A.values, dtype=float))
        if bad >= 0:
            raise FactorizationError(int(bad))
        self._indptr, self._indices, self._lu, self._diag = indptr, indices, lu, diag

    def __call__(self, r):
        return _ilu0_apply(self._indptr, self._indices, self._lu, self._diag, np.asarray(r, dtype=float))


def ilu0_factor(A: SparseMatrix) -> ILU0:
    return ILU0(A)


def jacobi(A: SparseMatrix):
    d = A.diagonal()
    if np.any(d == 0):
        raise FactorizationError(int(np.flatnonzero(d == 0)[0]), "zero diagonal")
    inv = 1.0 / d
    return lambda r: inv * r


class SparseLU:
    """Complete sparse LU factorization used as a preconditioner.

    For systems too ill-conditioned for ILU(0), e.g. strongly anisotropic
    diffusion on fine meshes; a Krylov method then converges in one or two
    iterations.
    """

    def __init__(self, A: SparseMatrix):
        try:
            self._lu = spla.splu(A.scipy.tocsc())
        except RuntimeError as exc:
            raise FactorizationError(-1, f"singular matrix ({exc})") from None

    def __call__(self, r):
        return self._lu.solve(np.asarray(r, dtype=float))


def make_preconditioner(A: SparseMatrix, kind: str):
    if kind == "none":
        return None
    if kind == "jacobi":
        return jacobi(A)
    if kind == "ilu0":
        return ilu0_factor(A)
    if kind == "lu":
        return SparseLU(A)
    raise ValueError(f"unknown preconditioner {kind!r}")


# ---------------------------------------------------------------------------
# Krylov solvers
# ---------------------------------------------------------------------------


def _as_operator(A):
    if isinstance(A, SparseMatrix):
        return A.nrows, lambda v: A.scipy @ v
    n, matvec = A
    return n, matvec


def _target(opts, bnorm):
    return max(opts.rel_tol * bnorm, opts.abs_tol)


def _which(opts, bnorm, rnorm):
    return Termination.RTOL if rnorm <= opts.rel_tol * bnorm else Termination.ATOL


def cg_solve(A, b, x0=None, opts=None, M=None, check_symmetry=True):
    """Preconditioned conjugate gradients for symmetric positive-definite ``A``.

    ``M`` overrides the preconditioner named in ``opts``.  Raises
    :class:`KrylovBreakdown` if a non-positive curvature ``p^T A p`` appears.
    """
    opts = opts or KrylovOptions()
    t0 = time.perf_counter()
    if isinstance(A, SparseMatrix):
        if A.nrows != A.ncols:
            raise ValueError("CG needs a square matrix")
        if check_symmetry and not A.is_symmetric():
            raise ValueError(f"CG needs a symmetric matrix (asymmetry {A.asymmetry():.3e})")
        if M is None:
            M = make_preconditioner(A, opts.preconditioner)
    n, matvec = _as_operator(A)
    b = np.asarray(b, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x)
    bnorm = float(np.linalg.norm(b))
    tol = _target(opts, bnorm)
    rnorm = float(np.linalg.norm(r))
    history = [rnorm]
    if rnorm <= tol:
        return x, SolveReport(0, rnorm, True, time.perf_counter() - t0, _which(opts, bnorm, rnorm), history, tol)
    z = M(r) if M is not None else r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, opts.max_iters + 1):
        Ap = matvec(p)
        curv = float(p @ Ap)
        if curv <= 0.0:
            raise KrylovBreakdown(f"non-positive curvature p^T A p = {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        if rnorm <= tol:
            return x, SolveReport(it, rnorm, True, time.perf_counter() - t0, _which(opts, bnorm, rnorm), history, tol)
        z = M(r) if M is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(opts.max_iters, rnorm, False, time.perf_counter() - t0, Termination.MAX_ITERS, history, tol)


def gmres_solve(A, b, x0=None, opts=None, M=None, flexible=False):
    """Restarted GMRES with right preconditioning.

    With ``flexible=True`` the preconditioned basis is stored (FGMRES), so
    ``M`` may change between applications, e.g. when it wraps an inner
    iterative solve.  The residual history records the true residual at
    every restart and the Arnoldi estimate in between.
    """
    opts = opts or KrylovOptions()
    t0 = time.perf_counter()
    if isinstance(A, SparseMatrix):
        if A.nrows != A.ncols:
            raise ValueError("GMRES needs a square matrix")
        if M is None:
            M = make_preconditioner(A, opts.preconditioner)
    n, matvec = _as_operator(A)
    b = np.asarray(b, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    prec = M if M is not None else (lambda v: v)
    bnorm = float(np.linalg.norm(b))
    tol = _target(opts, bnorm)
    m = opts.restart
    history = []
    total = 0
    r = b - matvec(x)
    beta = float(np.linalg.norm(r))
    history.append(beta)
    while True:
        if beta <= tol:
            return x, SolveReport(total, beta, True, time.perf_counter() - t0, _which(opts, bnorm, beta), history, tol)
        if total >= opts.max_iters:
            return x, SolveReport(total, beta, False, time.perf_counter() - t0, Termination.MAX_ITERS, history, tol)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n)) if flexible else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        cycle_start = beta
        for j in range(m):
            zj = prec(V[j])
            if flexible:
                Z[j] = zj
            w = matvec(zj)
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                tmp = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                k = j
                break
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            total += 1
            est = abs(g[j + 1])
            history.append(est)
            if est <= tol or total >= opts.max_iters:
                break
            wnorm = np.linalg.norm(w)
            if wnorm <= 1e-14 * max(1.0, abs(H[j, j])):
                break
            V[j + 1] = w / wnorm
        if k == 0:
            return x, SolveReport(total, beta, False, time.perf_counter() - t0, Termination.BREAKDOWN, history, tol)
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        if flexible:
            x = x + Z[:k].T @ y
        else:
            x = x + prec(V[:k].T @ y)
        r = b - matvec(x)
        beta = float(np.linalg.norm(r))
        history[-1] = beta
        if beta > tol and beta >= cycle_start * (1 - 1e-12):
            return x, SolveReport(total, beta, False, time.perf_counter() - t0, Termination.STAGNATION, history, tol)
