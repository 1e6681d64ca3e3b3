"""String averaging with extrapolated (generalized) relaxation.

A string is an ordered list of operator indices; its operator ``U_t`` is
the composition of the listed operators applied left to right. The
averaged operator is ``T = sum_t w_t U_t`` and the driver iterates

    x_{k+1} = x_k + lam_k * sigma(x_k) * (T(x_k) - x_k)

with either a constant step ``sigma`` or the extrapolated step

    sigma_max(x) = sum_t w_t ||U_t(x) - x||^2 / ||T(x) - x||^2  (>= 1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .operators import OperatorHandle, StepMode

__all__ = [
    "StringPlan",
    "AveragedOperator",
    "SolverConfig",
    "TraceRow",
    "IterationTrace",
    "TerminalStatus",
    "InequalityViolation",
    "StringEvaluationError",
    "evaluate_strings",
    "sigma_max",
    "iterate",
    "compare_error_bounds",
    "ErrorBoundReport",
    "SIGMA_LOWER_SLACK",
]

SIGMA_LOWER_SLACK = 1e-10
TRACE_HEADER = ("k", "sigma", "lambda", "step_norm", "violation", "distance")


class InequalityViolation(AssertionError):
    """A runtime-checked inequality failed.

    Attributes ``k``, ``lhs`` and ``rhs`` identify the iteration and both
    sides of the inequality ``lhs >= rhs`` (or ``lhs <= rhs``, see ``what``).
    """

    def __init__(self, what, k, lhs, rhs):
        self.what, self.k, self.lhs, self.rhs = what, k, lhs, rhs
        super().__init__(f"{what} violated at k={k}: lhs={lhs!r}, rhs={rhs!r}")


class StringEvaluationError(RuntimeError):
    """Operator evaluation failed inside a string."""

    def __init__(self, string, position, op_index, cause):
        self.string, self.position, self.op_index = string, position, op_index
        super().__init__(
            f"string {string}, position {position} (operator {op_index}): {cause}")


@dataclass(frozen=True)
class StringPlan:
    """Ordered index lists over an operator pool of size ``m`` (0-based).

    Weights are normalized on construction; they must be positive.
    """

    strings: tuple
    weights: tuple

    def __init__(self, strings, weights=None):
        strings = tuple(tuple(int(i) for i in s) for s in strings)
        if not strings:
            raise ValueError("a plan needs at least one string")
        for t, s in enumerate(strings):
            if not s:
                raise ValueError(f"string {t} is empty")
        if weights is None:
            weights = [1.0] * len(strings)
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(strings),):
            raise ValueError("one weight per string is required")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("string weights must be positive and finite")
        w = w / w.sum()
        object.__setattr__(self, "strings", strings)
        object.__setattr__(self, "weights", tuple(float(v) for v in w))

    @property
    def E(self):
        return len(self.strings)

    def covered(self):
        return sorted({i for s in self.strings for i in s})

    def validate(self, m):
        """Check that the strings cover exactly the pool ``0..m-1``."""
        cov = self.covered()
        if cov != list(range(m)):
            missing = sorted(set(range(m)) - set(cov))
            extra = sorted(set(cov) - set(range(m)))
            raise ValueError(
                f"plan must cover the pool exactly; missing={missing}, out of range={extra}")

    @classmethod
    def simultaneous(cls, m, weights=None):
        """``m`` strings of length one."""
        return cls([[i] for i in range(m)], weights)

    @classmethod
    def sequential(cls, m):
        """One string applying operators ``0..m-1`` in order."""
        return cls([list(range(m))])


@dataclass(frozen=True)
class AveragedOperator:
    """Pool of operators combined by a :class:`StringPlan`.

    ``violation`` optionally measures infeasibility of a point (the stopping
    quantity of the driver); ``reference`` is a known common fixed point.
    """

    pool: tuple
    plan: StringPlan
    violation: Optional[Callable[[np.ndarray], float]] = None
    reference: Optional[np.ndarray] = None

    def __init__(self, pool, plan, violation=None, reference=None):
        pool = tuple(pool)
        if not pool:
            raise ValueError("operator pool is empty")
        dims = {op.dim for op in pool}
        if len(dims) != 1:
            raise ValueError(f"operators disagree on dimension: {sorted(dims)}")
        plan.validate(len(pool))
        object.__setattr__(self, "pool", pool)
        object.__setattr__(self, "plan", plan)
        object.__setattr__(self, "violation", violation)
        object.__setattr__(
            self, "reference", None if reference is None else np.asarray(reference, float))

    @property
    def dim(self):
        return self.pool[0].dim

    @property
    def weights(self):
        return np.asarray(self.plan.weights)

    def string_output(self, t, x):
        y = x
        for pos, i in enumerate(self.plan.strings[t]):
            try:
                y = self.pool[i].eval(y)
            except Exception as exc:  # re-raised with location
                raise StringEvaluationError(t, pos, i, exc) from exc
        return y

    def __call__(self, x):
        return evaluate_strings(self, x)[1]

    def as_handle(self):
        return OperatorHandle(self.dim, self.__call__, name="T_avg")


def evaluate_strings(A, x):
    """Return ``([U_1(x), ..., U_E(x)], T(x))``.

    ``T(x)`` is formed as ``x + sum_t w_t (U_t(x) - x)`` so that the step
    ``T(x) - x`` is free of cancellation against ``x``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (A.dim,):
        raise ValueError(f"expected a vector of length {A.dim}, got shape {x.shape}")
    U = [A.string_output(t, x) for t in range(A.plan.E)]
    return U, x + _average_step(A.weights, U, x)


def _average_step(w, U, x):
    D = np.stack([u - x for u in U])
    return np.sum(w[:, None] * D, axis=0)


def sigma_max(A, x, U_vals, T_val, guard=1e-10, k=None):
    """Extrapolated step size at ``x``.

    Returns 1 when ``||T(x) - x||^2 <= guard``. The result is never below
    ``1 - 1e-10``; a smaller value raises :class:`InequalityViolation`.
    """
    x = np.asarray(x, dtype=float)
    w = A.weights
    sq = np.empty(len(U_vals))
    for t, u in enumerate(U_vals):
        sq[t] = float(np.dot(u - x, u - x))
        if not math.isfinite(sq[t]):
            raise FloatingPointError(f"non-finite displacement norm in string {t}")
    step = _average_step(w, U_vals, x)
    den = float(np.dot(step, step))
    if not math.isfinite(den):
        raise FloatingPointError("non-finite averaged step norm")
    if den <= guard:
        return 1.0
    s = float(np.dot(w, sq)) / den
    if s < 1.0 - SIGMA_LOWER_SLACK:
        raise InequalityViolation("sigma_max >= 1", k, s, 1.0)
    return s


class TerminalStatus(enum.Enum):
    FEASIBILITY_REACHED = "FeasibilityReached"
    GUARD_TRIGGERED = "GuardTriggered"
    MAX_ITERS = "MaxIters"


@dataclass
class SolverConfig:
    """Driver options.

    ``lambda_schedule`` is either a constant or a callable ``k -> lam_k``
    with values in (0, 2). The inequality checks tied to ``lam (1 - lam)``
    are only applied when ``lam_k`` lies in (0, 1).
    """

    lambda_schedule: Union[float, Callable[[int], float]] = 1.0
    epsilon: float = 0.1
    step_mode: StepMode = StepMode.SIGMA_MAX
    sigma_value: float = 1.0
    max_iters: int = 1000
    feasibility_tol: float = 1e-4
    fixed_point_guard: float = 1e-10
    assert_fejer: bool = False
    assert_error_bound: bool = False

    def __post_init__(self):
        self.step_mode = StepMode(self.step_mode)
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.feasibility_tol > 0:
            raise ValueError("feasibility_tol must be positive")
        if not self.fixed_point_guard > 0:
            raise ValueError("fixed_point_guard must be positive")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 1/2)")
        if self.step_mode is StepMode.CONSTANT and not self.sigma_value > 0:
            raise ValueError("constant step size must be positive")

    def lam(self, k):
        lam = self.lambda_schedule(k) if callable(self.lambda_schedule) else self.lambda_schedule
        lam = float(lam)
        if not 0.0 < lam < 2.0:
            raise ValueError(f"lambda_{k} = {lam} outside (0, 2)")
        return lam


@dataclass(frozen=True)
class TraceRow:
    k: int
    sigma: float
    lam: float
    step_norm: float
    violation: float
    distance: float


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)
    terminal_status: Optional[TerminalStatus] = None

    @property
    def iterations(self):
        return self.rows[-1].k if self.rows else 0

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def first_below(self, tol):
        """Index of the first row whose violation is ``<= tol``, else None."""
        for r in self.rows:
            if r.violation <= tol:
                return r.k
        return None

    def to_csv(self):
        lines = [",".join(TRACE_HEADER)]
        for r in self.rows:
            lines.append(",".join([str(r.k)] + [repr(float(v)) for v in (
                r.sigma, r.lam, r.step_norm, r.violation, r.distance)]))
        return "\n".join(lines) + "\n"


def iterate(A, x0, cfg, reference=None):
    """Run the relaxed string-averaging iteration from ``x0``.

    Every row of the returned trace records the state at ``x_k`` before the
    update; the last row is the terminal state. Stopping is checked in the
    order: feasibility (``violation <= feasibility_tol``), fixed-point guard
    (``||T(x) - x||^2 <= fixed_point_guard``), iteration cap.
    """
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("starting point is not finite")
    z = A.reference if reference is None else np.asarray(reference, dtype=float)
    fejer_slack = None if z is None else 1e-9 * (1.0 + np.linalg.norm(z))
    trace = IterationTrace()
    w = A.weights
    prev = None  # (k, lam, step_sq, e_k) of the last update

    for k in range(cfg.max_iters + 1):
        U, _ = evaluate_strings(A, x)
        step = _average_step(w, U, x)
        step_sq = float(np.dot(step, step))
        if cfg.step_mode is StepMode.SIGMA_MAX:
            sigma = sigma_max(A, x, U, None, cfg.fixed_point_guard, k=k)
        else:
            sigma = cfg.sigma_value
        lam = cfg.lam(k)
        viol = float(A.violation(x)) if A.violation is not None else math.nan
        e = math.nan
        if z is not None:
            e = float(np.dot(x - z, x - z))
        trace.rows.append(TraceRow(k, sigma, lam, math.sqrt(step_sq), viol, math.sqrt(e)))

        if prev is not None and z is not None:
            _check_decrease(cfg, prev, k, e, fejer_slack)

        if viol <= cfg.feasibility_tol:
            trace.terminal_status = TerminalStatus.FEASIBILITY_REACHED
            break
        if step_sq <= cfg.fixed_point_guard:
            trace.terminal_status = TerminalStatus.GUARD_TRIGGERED
            break
        if k == cfg.max_iters:
            trace.terminal_status = TerminalStatus.MAX_ITERS
            break

        x = x + (lam * sigma) * step
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"iterate became non-finite at k={k + 1}")
        prev = (k, lam, step_sq, e)

    return x, trace


def _check_decrease(cfg, prev, k, e_next, fejer_slack):
    k_prev, lam, step_sq, e_prev = prev
    if cfg.assert_fejer:
        d_prev, d_next = math.sqrt(e_prev), math.sqrt(e_next)
        if d_next > d_prev + fejer_slack:
            raise InequalityViolation("Fejer monotonicity ||x_k+1 - z|| <= ||x_k - z||",
                                      k_prev, d_next, d_prev + fejer_slack)
    if cfg.assert_error_bound and 0.0 < lam < 1.0:
        lhs = e_prev - e_next
        rhs = lam * (1.0 - lam) * step_sq - 1e-9 * (1.0 + e_prev)
        if lhs < rhs:
            raise InequalityViolation("error decrease e_k - e_k+1 >= lam(1-lam)||T x - x||^2",
                                      k_prev, lhs, rhs)


@dataclass
class ErrorBoundReport:
    """Realized error decrease against the two lower bounds, per iteration.

    Columns of ``rows``: k, lam, step_norm, decrease, bound_sqne, bound_cutter,
    where ``bound_sqne = lam (1 - lam) s^2`` and
    ``bound_cutter = lam (2 - lam) / (4 m^2) s^2``.
    """

    m: int
    rows: list

    @property
    def sqne_dominates(self):
        return all(r[4] >= r[5] for r in self.rows if 0.0 < r[1] <= 1.0)

    @property
    def decrease_meets_sqne_bound(self):
        return all(r[3] >= r[4] - 1e-9 * (1.0 + r[3]) for r in self.rows if 0.0 < r[1] < 1.0)


def bound_pair(lam, m, step_norm):
    s2 = step_norm * step_norm
    return lam * (1.0 - lam) * s2, lam * (2.0 - lam) / (4.0 * m * m) * s2


def compare_error_bounds(trace, m):
    """Compare the realized decrease ``e_k - e_{k+1}`` with both bounds."""
    if int(m) < 1:
        raise ValueError("m must be at least 1")
    dist = trace.column("distance")
    if dist.size == 0 or np.any(np.isnan(dist)):
        raise ValueError("trace carries no distance to a reference solution")
    rows = []
    for r, d_next in zip(trace.rows[:-1], dist[1:]):
        b1, b2 = bound_pair(r.lam, m, r.step_norm)
        rows.append((r.k, r.lam, r.step_norm, r.distance ** 2 - d_next ** 2, b1, b2))
    return ErrorBoundReport(int(m), rows)
