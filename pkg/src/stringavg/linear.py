"""Block iterations for consistent linear systems ``A x = b``.

The rows of ``A`` are split into blocks ``A_t``; each block contributes the
affine operator

    T_t(x) = x + lam_t * A_t^T M_t (b_t - A_t x)

with a diagonal positive weight ``M_t``. Blocks become the operator pool of
a string plan: one string over all blocks gives the sequential block
iteration, one string per block gives the simultaneous (Cimmino-type) one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps

from .operators import OperatorHandle
from .strings import AveragedOperator, StringPlan

__all__ = [
    "Fixed",
    "SpectralBand",
    "ResidualMinimizing",
    "LinearBlockProblem",
    "BlockSolved",
    "DegenerateBlock",
    "SpectralRadiusError",
    "contiguous_blocks",
    "cimmino_weights",
    "spectral_radius",
    "block_gram_matvec",
    "residual_minimizing_lambda",
    "block_operator",
    "assemble_sequential",
    "assemble_simultaneous",
    "relative_residual",
    "write_coo",
    "read_coo",
    "write_vector",
    "read_vector",
]

POWER_MAX_ITER = 5000
POWER_TOL = 1e-8
RHO_INFLATION = 1.01


class BlockSolved(ArithmeticError):
    """The block residual is already zero; no relaxation is needed."""


class DegenerateBlock(ArithmeticError):
    """Nonzero residual but vanishing search direction."""


class SpectralRadiusError(ArithmeticError):
    def __init__(self, msg, last_estimate):
        self.last_estimate = last_estimate
        super().__init__(f"{msg} (last Rayleigh quotient {last_estimate!r})")


@dataclass(frozen=True)
class Fixed:
    """Explicit per-block relaxation parameters (or one shared value)."""

    values: object = 1.0

    def value(self, t):
        v = self.values
        return float(v) if np.isscalar(v) else float(v[t])


@dataclass(frozen=True)
class SpectralBand:
    """``lam_t = 1 / rho`` clipped into ``[eps, (2 - eps) / rho]``.

    ``rho`` is the power-iteration estimate of ``rho(A_t^T M_t A_t)``
    inflated by 1%.
    """

    eps: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")


@dataclass(frozen=True)
class ResidualMinimizing:
    """Per-call ``lam_t`` minimizing the ``M_t``-weighted block residual."""


def _as_matrix(A):
    if sps.issparse(A):
        return sps.csr_matrix(A, dtype=float)
    return np.asarray(A, dtype=float)


def contiguous_blocks(m, p):
    """Split ``range(m)`` into ``p`` contiguous blocks, larger ones first."""
    if not 1 <= p <= m:
        raise ValueError(f"cannot split {m} rows into {p} blocks")
    return [np.asarray(ix) for ix in np.array_split(np.arange(m), p)]


def _row_norms_sq(A):
    if sps.issparse(A):
        return np.asarray(A.multiply(A).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", A, A)


def cimmino_weights(A_t, rows=None):
    """Cimmino diagonal weights ``1 / (m_t ||a_i||^2)`` for the rows of a block.

    ``rows`` optionally carries global row indices for error messages.
    """
    nsq = _row_norms_sq(_as_matrix(A_t))
    zero = np.flatnonzero(nsq == 0)
    if zero.size:
        where = zero[0] if rows is None else np.asarray(rows)[zero[0]]
        raise ValueError(f"row {where} is zero; Cimmino weights undefined")
    return 1.0 / (nsq.size * nsq)


@dataclass
class LinearBlockProblem:
    """Row-partitioned consistent system with diagonal block weights.

    ``partition`` lists the (0-based) row indices of each block; ``M`` lists
    the matching diagonal weights. When ``M`` is omitted Cimmino weights are
    used.
    """

    A: object
    b: np.ndarray
    partition: list
    M: Optional[list] = None
    lambda_strategy: object = field(default_factory=Fixed)
    solution: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = _as_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float)
        m, n = self.A.shape
        if self.b.shape != (m,):
            raise ValueError(f"b must have length {m}")
        self.partition = [np.asarray(ix, dtype=int) for ix in self.partition]
        allrows = np.concatenate(self.partition) if self.partition else np.array([], int)
        if allrows.size != m or not np.array_equal(np.sort(allrows), np.arange(m)):
            raise ValueError("blocks must be disjoint and cover every row")
        self._blocks = [self.A[ix] for ix in self.partition]
        for t, At in enumerate(self._blocks):
            nnz = At.nnz if sps.issparse(At) else np.count_nonzero(At)
            if nnz == 0:
                raise ValueError(f"block {t} is identically zero")
        if self.M is None:
            self.M = [cimmino_weights(At, ix) for At, ix in zip(self._blocks, self.partition)]
        self.M = [np.asarray(d, dtype=float) for d in self.M]
        for t, d in enumerate(self.M):
            if d.shape != (len(self.partition[t]),) or not np.all(d > 0):
                raise ValueError(f"weights of block {t} must be positive, one per row")
        self._lams = [None] * self.p
        if isinstance(self.lambda_strategy, SpectralBand):
            eps = self.lambda_strategy.eps
            for t in range(self.p):
                rho = RHO_INFLATION * spectral_radius(block_gram_matvec(self, t), self.n)
                self._lams[t] = min(max(1.0 / rho, eps), (2.0 - eps) / rho)

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def p(self):
        return len(self.partition)

    def block(self, t):
        return self._blocks[t], self.b[self.partition[t]], self.M[t]

    def lam(self, t):
        """Fixed relaxation parameter of block ``t`` (None when per-call)."""
        s = self.lambda_strategy
        if isinstance(s, Fixed):
            return s.value(t)
        if isinstance(s, SpectralBand):
            return self._lams[t]
        return None

    def residual(self, x):
        return self.b - self.A @ x


def block_gram_matvec(P, t):
    """``v -> A_t^T M_t A_t v``."""
    At, _, d = P.block(t)
    return lambda v: At.T @ (d * (At @ v))


def spectral_radius(matvec, n, tol=POWER_TOL, max_iter=POWER_MAX_ITER, seed=0):
    """Largest eigenvalue of a symmetric positive semidefinite operator.

    Power iteration from the normalized all-ones vector plus a small seeded
    perturbation (so the start is almost surely not orthogonal to the
    dominant eigenvector). Stops when the Rayleigh quotient changes by less
    than ``tol`` relative.
    """
    rng = np.random.default_rng(seed)
    v = np.ones(n) + 1e-3 * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    rq = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        rq_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(rq_new - rq) <= tol * abs(rq_new):
            return rq_new
        rq = rq_new
    raise SpectralRadiusError(f"power iteration did not converge in {max_iter} steps", rq)


def residual_minimizing_lambda(P, t, x):
    """Step ``lam`` minimizing ``||r - lam q||_M`` with ``q = A_t A_t^T M r``.

    Closed form ``<M r, q> / <M q, q>``. Raises :class:`BlockSolved` when the
    block residual vanishes and :class:`DegenerateBlock` when ``q = 0``.
    """
    At, bt, d = P.block(t)
    r = bt - At @ x
    if not np.any(r):
        raise BlockSolved(f"block {t} residual is zero")
    q = At @ (At.T @ (d * r))
    den = float(np.dot(d * q, q))
    if den == 0.0:
        raise DegenerateBlock(f"block {t}: zero direction with residual {np.linalg.norm(r):.3e}")
    return float(np.dot(d * r, q)) / den


def block_operator(P, t, fix_tol=None):
    """Affine block operator ``x + lam_t A_t^T M_t (b_t - A_t x)``."""
    At, bt, d = P.block(t)
    lam = P.lam(t)
    per_call = lam is None
    if fix_tol is None:
        fix_tol = 1e-10 * (1.0 + np.linalg.norm(bt))

    def ev(x):
        r = bt - At @ x
        if per_call:
            if not np.any(r):
                return np.array(x, dtype=float)
            step = residual_minimizing_lambda(P, t, x)
        else:
            step = lam
        return x + step * (At.T @ (d * r))

    def fix_test(x):
        return bool(np.linalg.norm(bt - At @ x) <= fix_tol)

    return OperatorHandle(P.n, ev, fix_test=fix_test, name=f"T_block{t}")


def relative_residual(P):
    nb = np.linalg.norm(P.b)
    scale = nb if nb > 0 else 1.0
    return lambda x: float(np.linalg.norm(P.b - P.A @ x) / scale)


def assemble_sequential(P):
    """One string composing blocks ``0..p-1`` in order."""
    pool = [block_operator(P, t) for t in range(P.p)]
    return AveragedOperator(pool, StringPlan.sequential(P.p),
                            violation=relative_residual(P), reference=P.solution)


def assemble_simultaneous(P, weights=None):
    """``p`` strings of length one, equal weights unless given."""
    pool = [block_operator(P, t) for t in range(P.p)]
    return AveragedOperator(pool, StringPlan.simultaneous(P.p, weights),
                            violation=relative_residual(P), reference=P.solution)


def write_coo(path, A):
    """Write ``rows cols nnz`` then 1-based ``i j value`` lines."""
    C = sps.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_coo(path):
    """Read the coordinate format of :func:`write_coo` into CSR."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'rows cols nnz'")
        rows, cols, nnz = (int(h) for h in header)
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ValueError(f"{path}: expected {nnz} entries, found {data.shape[0]}")
    i = data[:, 0].astype(int) - 1
    j = data[:, 1].astype(int) - 1
    if nnz and (i.min() < 0 or j.min() < 0 or i.max() >= rows or j.max() >= cols):
        raise ValueError(f"{path}: index out of range")
    return sps.csr_matrix((data[:, 2], (i, j)), shape=(rows, cols))


def write_vector(path, v):
    with open(path, "w", newline="\n") as fh:
        for x in np.asarray(v, dtype=float):
            fh.write(f"{float(x)!r}\n")


def read_vector(path):
    return np.loadtxt(path, ndmin=1)
