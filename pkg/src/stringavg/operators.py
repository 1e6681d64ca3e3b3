"""Operator handles, relaxation transforms and sampled property checks.

An operator is any deterministic map ``x -> T(x)`` on R^n. The classes of
interest (quasi-nonexpansive, strictly quasi-nonexpansive, cutter) are
defined through inequalities against fixed points ``z``; here they are
checked numerically on finite samples, which certifies nothing but makes
counterexamples reproducible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "OperatorHandle",
    "StepMode",
    "RelaxationSpec",
    "Property",
    "PropertyCheckReport",
    "InconsistentSetup",
    "relax",
    "generalized_relax",
    "check_property",
    "default_fix_tol",
    "halfspace_projection",
    "ball_projection",
    "rational_branch_operator",
]


class InconsistentSetup(ValueError):
    """A supposed fixed point fails the operator's membership test."""


def default_fix_tol(z):
    return 1e-12 * (1.0 + np.linalg.norm(z))


@dataclass(frozen=True)
class OperatorHandle:
    """An evaluable map on R^n.

    Parameters
    ----------
    dim : int
        Ambient dimension.
    eval : callable
        ``x -> T(x)``; must be deterministic.
    fix_test : callable, optional
        Predicate ``x -> bool`` deciding membership in Fix T (within a
        tolerance chosen by the constructor of the handle).
    reference_fixed_point : ndarray, optional
        A known point of Fix T.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    fix_test: Optional[Callable[[np.ndarray], bool]] = None
    reference_fixed_point: Optional[np.ndarray] = None
    name: str = field(default="T", compare=False)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        z = self.reference_fixed_point
        if z is not None:
            z = np.asarray(z, dtype=float)
            object.__setattr__(self, "reference_fixed_point", z)
            gap = np.linalg.norm(self.eval(z) - z)
            if gap > default_fix_tol(z):
                raise InconsistentSetup(
                    f"{self.name}: reference point moves by {gap:.3e}")

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))

    def is_fixed(self, x, tol=None):
        """Membership in Fix T; falls back to ``||T(x) - x|| <= tol``."""
        x = np.asarray(x, dtype=float)
        if self.fix_test is not None:
            return bool(self.fix_test(x))
        if tol is None:
            tol = 1e-10 * (1.0 + np.linalg.norm(x))
        return bool(np.linalg.norm(self.eval(x) - x) <= tol)


class StepMode(enum.Enum):
    CONSTANT = "constant"
    SIGMA_MAX = "sigma_max"


@dataclass(frozen=True)
class RelaxationSpec:
    """Relaxation parameter ``lam`` in [0, 2] and a step-size mode.

    ``value`` is the constant step size used when ``step_mode`` is
    :attr:`StepMode.CONSTANT`.
    """

    lam: float = 1.0
    step_mode: StepMode = StepMode.CONSTANT
    value: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 2.0:
            raise ValueError(f"relaxation parameter must lie in [0, 2], got {self.lam}")
        if self.step_mode is StepMode.CONSTANT and not self.value > 0:
            raise ValueError(f"constant step size must be positive, got {self.value}")


def relax(T, alpha):
    """Return ``(1 - alpha) Id + alpha T`` for ``alpha`` in (0, 1].

    Fix T is unchanged, so the fixed-point metadata of ``T`` is inherited.
    """
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha == 1.0:
        return T

    def ev(x):
        return (1.0 - alpha) * x + alpha * T.eval(x)

    return replace(T, eval=ev, name=f"relax({T.name}, {alpha:g})")


def generalized_relax(T, spec, sigma=None):
    """Return ``x -> x + lam * sigma(x) * (T(x) - x)``.

    ``sigma`` defaults to the constant step of ``spec``. A non-positive or
    non-finite step at a queried point raises ``ValueError``.
    """
    lam = spec.lam
    if sigma is None:
        if spec.step_mode is not StepMode.CONSTANT:
            raise ValueError("sigma_max step mode needs an explicit step-size function")
        c = spec.value
        sigma = lambda x: c  # noqa: E731

    if lam == 0.0:
        return replace(T, eval=lambda x: np.array(x, dtype=float), name="Id")

    def ev(x):
        s = sigma(x)
        if not (np.isfinite(s) and s > 0):
            raise ValueError(f"step size must be positive and finite, got {s}")
        tx = T.eval(x)
        if lam * s == 1.0:
            return tx
        return x + (lam * s) * (tx - x)

    return replace(T, eval=ev, name=f"{T.name}_sigma,{lam:g}")


class Property(enum.Enum):
    QNE = "qne"
    SQNE = "sqne"
    CUTTER = "cutter"


@dataclass
class PropertyCheckReport:
    """Outcome of a sampled property check.

    ``violations`` holds ``(x, z, margin)`` triples where ``margin`` is the
    left side minus the right side of the defining inequality (the inner
    product itself for cutters).
    """

    property: Property
    sample_count: int
    violations: list
    samples: list = field(default_factory=list, repr=False)

    @property
    def passed(self):
        return not self.violations


def check_property(T, prop, samples, zs, tol=None):
    """Check a defining inequality of ``prop`` at every (sample, z) pair.

    QNE:    ||T(x) - z|| <= ||x - z|| + tol
    SQNE:   ||T(x) - z|| <  ||x - z|| - tol   for x with ||T(x) - x|| > tol
    Cutter: <x - T(x), z - T(x)> <= tol

    With ``tol=None`` a scale-aware tolerance ``1e-8 (1 + ||x||)`` is used.
    """
    prop = Property(prop)
    samples = [np.asarray(x, dtype=float) for x in samples]
    if not samples:
        raise ValueError("samples must be nonempty")
    zs = [np.asarray(z, dtype=float) for z in zs]
    for z in zs:
        if not T.is_fixed(z):
            raise InconsistentSetup(f"{T.name}: supplied point is not in Fix T: {z}")

    violations = []
    for x in samples:
        tx = T(x)
        eps = 1e-8 * (1.0 + np.linalg.norm(x)) if tol is None else tol
        if prop is Property.SQNE and np.linalg.norm(tx - x) <= eps:
            continue
        for z in zs:
            if prop is Property.CUTTER:
                margin = float(np.dot(x - tx, z - tx))
            else:
                margin = float(np.linalg.norm(tx - z) - np.linalg.norm(x - z))
            failed = margin >= -eps if prop is Property.SQNE else margin > eps
            if failed:
                violations.append((x, z, margin))
    return PropertyCheckReport(prop, len(samples), violations, samples)


def halfspace_projection(a, beta):
    """Metric projection onto ``{x : <a, x> <= beta}``."""
    a = np.asarray(a, dtype=float)
    beta = float(beta)
    aa = float(a @ a)
    if aa == 0.0:
        raise ValueError("normal vector must be nonzero")

    def ev(x):
        viol = float(a @ x) - beta
        if viol <= 0.0:
            return np.array(x, dtype=float)
        return x - (viol / aa) * a

    return OperatorHandle(
        a.size, ev, fix_test=lambda x: float(a @ x) - beta <= 1e-12 * (1 + abs(beta)),
        name="P_halfspace")


def ball_projection(center, radius):
    """Metric projection onto a closed Euclidean ball."""
    c = np.asarray(center, dtype=float)
    r = float(radius)

    def ev(x):
        d = x - c
        nd = np.linalg.norm(d)
        if nd <= r:
            return np.array(x, dtype=float)
        return c + (r / nd) * d

    return OperatorHandle(
        c.size, ev, fix_test=lambda x: np.linalg.norm(x - c) <= r * (1 + 1e-12),
        reference_fixed_point=c, name="P_ball")


def rational_branch_operator():
    """``T(x) = -x/2`` on R: strictly quasi-nonexpansive but not a cutter."""
    return OperatorHandle(
        1, lambda x: -0.5 * np.asarray(x, dtype=float),
        fix_test=lambda x: bool(np.all(np.asarray(x) == 0.0)),
        reference_fixed_point=np.zeros(1), name="neg_half")
