"""Subgradient projections for systems of convex inequalities ``g_i(x) <= 0``.

Two operator forms are provided: the single-function (cyclic) projection

    T(x) = x - mu * g+(x) / ||l(x)||^2 * l(x)

and the block form that averages these steps over a block ``B`` with
weights ``w_i`` and scales the result by the step ``mu_B(x)`` minimizing
the distance bound to any feasible point. Constraints with ``g_i(x) <= 0``
contribute nothing and their subgradients are never evaluated, so every
feasible point is an exact fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .operators import OperatorHandle

__all__ = [
    "ConvexFunctionOracle",
    "ConstraintBank",
    "OracleListBank",
    "InequalityBlockSystem",
    "BlockFeasible",
    "InconsistentOracle",
    "plus_part",
    "cyclic_subgrad_op",
    "optimal_mu",
    "parallel_block_op",
    "max_violation",
]


class BlockFeasible(ArithmeticError):
    """Every constraint of the block is satisfied; the operator is the identity."""


class InconsistentOracle(ArithmeticError):
    """A violated constraint reported a zero subgradient."""


def plus_part(g):
    g = float(g)
    if not math.isfinite(g):
        raise ValueError(f"constraint value is not finite: {g}")
    return g if g > 0.0 else 0.0


@dataclass(frozen=True)
class ConvexFunctionOracle:
    """A constraint function with a subgradient oracle."""

    value: Callable[[np.ndarray], float]
    subgrad: Callable[[np.ndarray], np.ndarray]
    label: str = "g"


class ConstraintBank:
    """Vectorized access to ``M`` constraint functions on R^n.

    Subclasses implement :meth:`values` and :meth:`subgrads` for an index
    array; this is what the block operators call.
    """

    n: int
    M: int

    def values(self, x, idx=None):
        raise NotImplementedError

    def subgrads(self, x, idx):
        raise NotImplementedError

    def oracle(self, i):
        """Single-function view of constraint ``i``."""
        ix = np.array([i])
        return ConvexFunctionOracle(
            lambda x: float(self.values(np.asarray(x, float), ix)[0]),
            lambda x: self.subgrads(np.asarray(x, float), ix)[0],
            label=f"g{i}")

    @property
    def oracles(self):
        return [self.oracle(i) for i in range(self.M)]


class OracleListBank(ConstraintBank):
    def __init__(self, oracles, n):
        self._oracles = list(oracles)
        self.n = int(n)
        self.M = len(self._oracles)

    def values(self, x, idx=None):
        idx = range(self.M) if idx is None else idx
        return np.array([self._oracles[i].value(x) for i in idx], dtype=float)

    def subgrads(self, x, idx):
        out = np.empty((len(idx), self.n))
        for r, i in enumerate(idx):
            out[r] = self._oracles[i].subgrad(x)
        return out

    def oracle(self, i):
        return self._oracles[i]


def max_violation(bank):
    """``x -> max_i g_i+(x)``."""
    def viol(x):
        v = bank.values(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite constraint value")
        return float(max(v.max(initial=0.0), 0.0))
    return viol


class InequalityBlockSystem:
    """Constraints grouped into blocks with per-block convex weights.

    Parameters
    ----------
    bank : ConstraintBank or sequence of ConvexFunctionOracle
    blocks : sequence of index sequences (0-based), covering ``0..M-1``
    weights : optional sequence of arrays, one per block; normalized to sum
        to one inside each block. Defaults to equal weights.
    n : int, required when ``bank`` is a list of oracles
    """

    def __init__(self, bank, blocks, weights=None, n=None):
        if not isinstance(bank, ConstraintBank):
            if n is None:
                raise ValueError("dimension n is required for a list of oracles")
            bank = OracleListBank(bank, n)
        self.bank = bank
        self.blocks = [np.asarray(B, dtype=int) for B in blocks]
        if not self.blocks or any(B.size == 0 for B in self.blocks):
            raise ValueError("blocks must be nonempty")
        cover = np.unique(np.concatenate(self.blocks))
        if not np.array_equal(cover, np.arange(bank.M)):
            raise ValueError("blocks must cover every constraint index")
        if weights is None:
            weights = [np.full(B.size, 1.0 / B.size) for B in self.blocks]
        self.weights = []
        for B, w in zip(self.blocks, weights):
            w = np.asarray(w, dtype=float)
            if w.shape != B.shape or not np.all(w > 0):
                raise ValueError("block weights must be positive, one per member")
            self.weights.append(w / w.sum())

    @property
    def n(self):
        return self.bank.n

    @property
    def M(self):
        return self.bank.M

    def _terms(self, t, x):
        """Violated members of block ``t``: (weights, g+, subgradients)."""
        B, w = self.blocks[t], self.weights[t]
        g = self.bank.values(x, B)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite constraint value in block {t}")
        hot = g > 0.0
        if not np.any(hot):
            raise BlockFeasible(f"block {t} is feasible")
        L = self.bank.subgrads(x, B[hot])
        nsq = np.einsum("ij,ij->i", L, L)
        bad = np.flatnonzero(nsq == 0.0)
        if bad.size:
            i = B[hot][bad[0]]
            raise InconsistentOracle(
                f"constraint {i}: zero subgradient at a point with value {g[hot][bad[0]]!r}")
        return w[hot], g[hot], L, nsq

    def direction(self, t, x):
        """Aggregated direction and ``mu_t`` at ``x``."""
        w, gp, L, nsq = self._terms(t, x)
        coef = w * gp / nsq
        d = coef @ L
        num = float(np.dot(coef, gp))
        den = float(np.dot(d, d))
        if den == 0.0:
            raise InconsistentOracle(f"block {t}: aggregated direction vanishes")
        return d, num / den


def cyclic_subgrad_op(o, mu, n):
    """Single-constraint subgradient projection with relaxation ``mu`` in (0, 2)."""
    mu = float(mu)
    if not 0.0 < mu < 2.0:
        raise ValueError(f"mu must lie in (0, 2), got {mu}")

    def ev(x):
        gp = plus_part(o.value(x))
        if gp == 0.0:
            return np.array(x, dtype=float)
        l = np.asarray(o.subgrad(x), dtype=float)
        nsq = float(np.dot(l, l))
        if nsq == 0.0:
            raise InconsistentOracle(f"{o.label}: zero subgradient where value is {gp!r}")
        return x - (mu * gp / nsq) * l

    def fix_test(x):
        return o.value(x) <= 1e-12

    return OperatorHandle(n, ev, fix_test=fix_test, name=f"P_{o.label}")


def optimal_mu(system, t, x):
    """Step minimizing the distance bound of the block operator at ``x``.

    Raises :class:`BlockFeasible` when no member of the block is violated.
    """
    return system.direction(t, np.asarray(x, dtype=float))[1]


def parallel_block_op(system, t, fix_tol=0.0):
    """Block subgradient projection with the optimal step ``mu_t(x)``."""
    B = system.blocks[t]

    def ev(x):
        try:
            d, mu = system.direction(t, x)
        except BlockFeasible:
            return np.array(x, dtype=float)
        return x - mu * d

    def fix_test(x):
        return bool(np.all(system.bank.values(x, B) <= fix_tol))

    return OperatorHandle(system.n, ev, fix_test=fix_test, name=f"T_block{t}")
