"""Benchmark instances: six classical inequality systems and random quadratics.

The classical systems follow the usual index maps of the extended test
functions (``j`` computed from the constraint index ``i`` with ``div`` and
``mod``); indices in this module are 1-based in comments and formulas and
0-based in arrays. The number of constraints of a system is the largest
prefix ``i = 1..M`` (capped at 200) whose referenced variables all exist.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .strings import AveragedOperator, StringPlan
from .subgradient import (ConstraintBank, ConvexFunctionOracle, InequalityBlockSystem,
                          OracleListBank, max_violation, parallel_block_op)

__all__ = [
    "APPENDIX_NAMES",
    "DEFAULT_SIZES",
    "RNG_ALGORITHM",
    "TestProblemInstance",
    "RandomQcSpec",
    "QuadraticBank",
    "IndexMapError",
    "build_appendix_problem",
    "generate_random_qc",
    "split_blocks",
    "default_string_plan",
    "averaged_operator",
    "write_manifest",
    "read_manifest",
    "instance_from_manifest",
]

log = logging.getLogger(__name__)

APPENDIX_NAMES = ("powell", "wood", "rosenbrock", "broyden", "penalty1", "vardim")
DEFAULT_SIZES = {"powell": 102, "wood": 68, "rosenbrock": 101, "broyden": 200,
               "penalty1": 199, "vardim": 198}
MAX_CONSTRAINTS = 200
RNG_ALGORITHM = "numpy.random.Generator(PCG64)"
SQRT5, SQRT10, SQRT90 = math.sqrt(5.0), math.sqrt(10.0), math.sqrt(90.0)


class IndexMapError(ValueError):
    def __init__(self, name, i, j, n):
        self.i, self.j = i, j
        super().__init__(f"{name}: constraint i={i} references x_{j} outside 1..{n}")


@dataclass
class TestProblemInstance:
    """A constraint system with start point and default block layout."""

    __test__ = False  # not a pytest class

    name: str
    n: int
    bank: ConstraintBank
    x0: np.ndarray
    known_feasible_point: Optional[np.ndarray] = None
    convex: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.bank.M

    @property
    def oracles(self):
        return self.bank.oracles

    def block_layout(self, E=4):
        return split_blocks(self.M, E)

    def violation(self, x):
        return max_violation(self.bank)(x)


def split_blocks(M, E):
    """Contiguous blocks; the remainder goes to the leading blocks (10, 3 -> 4, 3, 3)."""
    if E > M:
        raise ValueError(f"cannot form {E} blocks from {M} constraints")
    if E < 1:
        raise ValueError("E must be positive")
    return [np.asarray(b) for b in np.array_split(np.arange(M), E)]


# -- classical systems -------------------------------------------------------
#
# Each constraint is (refs, value, grad) with refs the 1-based variable
# indices it reads; value and grad take the padded vector xp where
# xp[0] = x_0 and xp[n+1] = x_{n+1} (zero boundary), so xp[j] == x_j.

def _unit(n, *pairs):
    g = np.zeros(n + 2)
    for j, c in pairs:
        g[j] += c
    return g


def _powell(i):
    j = 2 * ((i + 3) // 4) - 1
    r = i % 4
    if r == 1:
        return (j, j + 1), lambda x: x[j] + 10 * x[j + 1], \
            lambda x, n: _unit(n, (j, 1.0), (j + 1, 10.0))
    if r == 2:
        return (j + 2, j + 3), lambda x: SQRT5 * (x[j + 2] - x[j + 3]), \
            lambda x, n: _unit(n, (j + 2, SQRT5), (j + 3, -SQRT5))
    if r == 3:
        return (j + 1, j + 2), lambda x: (x[j + 1] - 2 * x[j + 2]) ** 2, \
            lambda x, n: _unit(n, (j + 1, 2 * (x[j + 1] - 2 * x[j + 2])),
                               (j + 2, -4 * (x[j + 1] - 2 * x[j + 2])))
    return (j, j + 3), lambda x: SQRT10 * (x[j] - x[j + 3]) ** 2, \
        lambda x, n: _unit(n, (j, 2 * SQRT10 * (x[j] - x[j + 3])),
                           (j + 3, -2 * SQRT10 * (x[j] - x[j + 3])))


def _wood(i):
    j = 2 * (i // 6 + 1)
    r = i % 6
    if r == 1:
        return (j - 1, j), lambda x: 10 * (x[j - 1] ** 2 - x[j]), \
            lambda x, n: _unit(n, (j - 1, 20 * x[j - 1]), (j, -10.0))
    if r == 2:
        return (j - 1,), lambda x: x[j - 1] - 1, lambda x, n: _unit(n, (j - 1, 1.0))
    if r == 3:
        return (j + 1, j + 2), lambda x: SQRT90 * (x[j + 1] ** 2 - x[j + 2]), \
            lambda x, n: _unit(n, (j + 1, 2 * SQRT90 * x[j + 1]), (j + 2, -SQRT90))
    if r == 4:
        return (j + 1,), lambda x: x[j + 1] - 1, lambda x, n: _unit(n, (j + 1, 1.0))
    if r == 5:
        return (j, j + 2), lambda x: SQRT10 * (2 - x[j] - x[j + 2]), \
            lambda x, n: _unit(n, (j, -SQRT10), (j + 2, -SQRT10))
    return (j, j + 2), lambda x: (x[j + 2] - x[j]) / SQRT10, \
        lambda x, n: _unit(n, (j, -1 / SQRT10), (j + 2, 1 / SQRT10))


def _rosenbrock(i):
    j = (i + 1) // 2
    if i % 2 == 1:
        return (j, j + 1), lambda x: 10 * (x[j] ** 2 - x[j + 1]), \
            lambda x, n: _unit(n, (j, 20 * x[j]), (j + 1, -10.0))
    return (j,), lambda x: x[j] - 1, lambda x, n: _unit(n, (j, 1.0))


def _broyden(i, classical=False):
    j = i
    if classical:
        return (j - 1, j, j + 1), \
            lambda x: (3 - 2 * x[j]) * x[j] - x[j - 1] - 2 * x[j + 1] + 1, \
            lambda x, n: _unit(n, (j, 3 - 4 * x[j]), (j - 1, -1.0), (j + 1, -2.0))
    return (j - 1, j, j + 1), lambda x: (3 - 2 * x[j]) - x[j - 1] - 2 * x[j + 1] + 1, \
        lambda x, n: _unit(n, (j, -2.0), (j - 1, -1.0), (j + 1, -2.0))


def _shifted(i):
    return (i,), lambda x: x[i] - 1, lambda x, n: _unit(n, (i, 1.0))


def _penalty_sum(n):
    c = 1 / math.sqrt(1000.0)

    def value(x):
        v = x[1:n + 1]
        return c * float(np.sum(v * v - 0.25))

    def grad(x, n_):
        g = np.zeros(n + 2)
        g[1:n + 1] = 2 * c * x[1:n + 1]
        return g

    return tuple(range(1, n + 1)), value, grad


def _vardim_linear(n):
    jj = np.arange(1, n + 1, dtype=float)

    def grad(x, n_):
        g = np.zeros(n + 2)
        g[1:n + 1] = jj
        return g

    return tuple(range(1, n + 1)), lambda x: float(jj @ (x[1:n + 1] - 1)), grad


def _vardim_quartic(n):
    jj = np.arange(1, n + 1, dtype=float)

    def value(x):
        s = float(jj @ (x[1:n + 1] - 1) ** 2)
        return s * s

    def grad(x, n_):
        u = x[1:n + 1] - 1
        s = float(jj @ (u * u))
        g = np.zeros(n + 2)
        g[1:n + 1] = 4 * s * jj * u
        return g

    return tuple(range(1, n + 1)), value, grad


def _start(name, n):
    l = np.arange(1, n + 1)
    if name == "powell":
        return np.choose(l % 4, [1.0, 3.0, -1.0, 0.0])
    if name == "wood":
        odd = l % 2 == 1
        return np.where(l <= 4, np.where(odd, -3.0, -1.0), np.where(odd, -2.0, 0.0))
    if name == "rosenbrock":
        return np.where(l % 2 == 1, -1.2, -1.0)
    if name == "broyden":
        return -np.ones(n)
    if name == "penalty1":
        return l.astype(float)
    return 1.0 - l / n


def _constraints(name, n, classical):
    """Constraint list for ``name`` under its index map and boundary rule."""
    boundary = name in ("broyden", "penalty1")
    lo, hi = (0, n + 1) if boundary else (1, n)
    if name == "broyden":
        cons = [_broyden(i, classical) for i in range(1, n + 1)]
    elif name == "penalty1":
        cons = [_shifted(i) for i in range(1, n + 1)] + [_penalty_sum(n)]
    elif name == "vardim":
        cons = [_shifted(i) for i in range(1, n + 1)] + [_vardim_linear(n), _vardim_quartic(n)]
    else:
        gen = {"powell": _powell, "wood": _wood, "rosenbrock": _rosenbrock}[name]
        cons = []
        for i in range(1, MAX_CONSTRAINTS + 1):
            c = gen(i)
            bad = [j for j in c[0] if not lo <= j <= hi]
            if bad:
                if not cons:
                    raise IndexMapError(name, i, bad[0], n)
                break
            cons.append(c)
    for i, c in enumerate(cons, start=1):
        bad = [j for j in c[0] if not lo <= j <= hi]
        if bad:
            raise IndexMapError(name, i, bad[0], n)
    return cons[:MAX_CONSTRAINTS]


def _wrap(c, n, label):
    _, value, grad = c

    def pad(x):
        xp = np.zeros(n + 2)
        xp[1:n + 1] = x
        return xp

    return ConvexFunctionOracle(
        lambda x: float(value(pad(x))),
        lambda x: grad(pad(x), n)[1:n + 1],
        label=label)


_FEASIBLE = {"powell": 0.0, "wood": 1.0, "rosenbrock": 1.0, "broyden": 2.0,
             "penalty1": 0.0, "vardim": 1.0}


def build_appendix_problem(name, n_override=None, broyden_classical=False):
    """Build one of the six classical systems.

    ``name`` is one of :data:`APPENDIX_NAMES`. The Broyden system uses the
    affine form ``(3 - 2 x_j) - x_{j-1} - 2 x_{j+1} + 1`` unless
    ``broyden_classical`` selects ``(3 - 2 x_j) x_j - ...``.
    """
    if name not in APPENDIX_NAMES:
        raise ValueError(f"unknown problem {name!r}; choose from {APPENDIX_NAMES}")
    n = DEFAULT_SIZES[name] if n_override is None else int(n_override)
    if n < 1:
        raise ValueError("n must be positive")
    cons = _constraints(name, n, broyden_classical)
    oracles = [_wrap(c, n, f"{name}[{i}]") for i, c in enumerate(cons, start=1)]
    label = name + ("-classical" if name == "broyden" and broyden_classical else "")
    return TestProblemInstance(
        name=label, n=n, bank=OracleListBank(oracles, n), x0=_start(name, n),
        known_feasible_point=np.full(n, _FEASIBLE[name]),
        convex=not (name == "broyden" and broyden_classical),
        meta={"source": "appendix", "appendix_id": name, "broyden_classical": broyden_classical})


# -- random convex quadratics -------------------------------------------------

@dataclass(frozen=True)
class RandomQcSpec:
    """Random system ``||G_i x||^2 + c_i^T x + d_i <= 0``, feasible at ``anchor``."""

    n: int = 300
    M: int = 200
    seed: int = 0
    entry_range: tuple = (-10.0, 10.0)
    anchor: Optional[tuple] = None
    memory_budget: float = 2e9

    def __post_init__(self):
        if self.n < 1 or self.M < 1:
            raise ValueError("n and M must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


class QuadraticBank(ConstraintBank):
    """Vectorized quadratics with a one-point cache of ``G x``.

    Values are always computed from the full stack so that a value at a
    given point does not depend on which subset was requested.
    """

    def __init__(self, G, c, d):
        self.G, self.c, self.d = G, c, d
        self.M, self.n = c.shape
        self._flat = G.reshape(self.M * self.n, self.n)
        self._key = None

    def _eval(self, x):
        x = np.ascontiguousarray(x, dtype=float)
        if self._key is None or not np.array_equal(self._key, x):
            Gx = (self._flat @ x).reshape(self.M, self.n)
            vals = np.sum(Gx * Gx, axis=1) + self.c @ x + self.d
            self._key, self._cache = x.copy(), (Gx, vals)
        return self._cache

    def values(self, x, idx=None):
        vals = self._eval(x)[1]
        return vals.copy() if idx is None else vals[idx]

    def subgrads(self, x, idx):
        Gx = self._eval(x)[0]
        idx = np.asarray(idx)
        return 2.0 * np.einsum("kij,ki->kj", self.G[idx], Gx[idx]) + self.c[idx]


def generate_random_qc(spec):
    """Draw a random feasible quadratic system.

    Entries of every ``G_i`` (drawn first, as one ``(M, n, n)`` array), then
    every ``c_i``, then the starting point are uniform on ``entry_range``
    from :data:`RNG_ALGORITHM` seeded with ``spec.seed``. ``d_i`` is chosen so that
    ``f_i(anchor) == 0`` exactly.
    """
    n, M = spec.n, spec.M
    nbytes = 8.0 * M * n * n
    if nbytes > spec.memory_budget:
        warnings.warn(f"random instance needs {nbytes / 1e9:.1f} GB for G", ResourceWarning)
    lo, hi = spec.entry_range
    rng = np.random.Generator(np.random.PCG64(int(spec.seed)))
    G = rng.uniform(lo, hi, size=(M, n, n))
    c = rng.uniform(lo, hi, size=(M, n))
    x0 = rng.uniform(lo, hi, size=n)
    y = np.ones(n) if spec.anchor is None else np.asarray(spec.anchor, dtype=float)
    bank = QuadraticBank(G, c, np.zeros(M))
    base = bank.values(y)
    bank = QuadraticBank(G, c, -base)
    return TestProblemInstance(
        name=f"random-qc-{spec.seed}", n=n, bank=bank, x0=x0,
        known_feasible_point=y,
        meta={"source": "random-qc", "seed": int(spec.seed), "M": M, "rng": RNG_ALGORITHM,
              "entry_range": tuple(spec.entry_range)})


# -- plans ---------------------------------------------------------------------

def default_string_plan(instance, E=4):
    """``E`` length-one strings with equal weights ``1/E``."""
    split_blocks(instance.M, E)
    return StringPlan.simultaneous(E)


def averaged_operator(instance, E=4):
    """Block subgradient operators on contiguous blocks, averaged over ``E`` strings."""
    blocks = split_blocks(instance.M, E)
    system = InequalityBlockSystem(instance.bank, blocks)
    pool = [parallel_block_op(system, t) for t in range(E)]
    return AveragedOperator(pool, default_string_plan(instance, E),
                            violation=max_violation(instance.bank),
                            reference=instance.known_feasible_point if instance.convex else None)


# -- manifests -------------------------------------------------------------------

def write_manifest(path, instance, E=4):
    """Plain-text description sufficient to rebuild ``instance`` bit-identically."""
    meta = instance.meta
    lines = [f"name = {instance.name}", f"n = {instance.n}", f"M = {instance.M}",
             f"source = {meta.get('source', 'unknown')}"]
    if meta.get("source") == "appendix":
        lines += [f"appendix_id = {meta['appendix_id']}",
                  f"broyden_classical = {str(meta['broyden_classical']).lower()}"]
    elif meta.get("source") == "random-qc":
        lo, hi = meta["entry_range"]
        lines += [f"seed = {meta['seed']}", f"rng = {meta['rng']}",
                  f"entry_range = {lo!r} {hi!r}"]
    sizes = [len(b) for b in split_blocks(instance.M, E)]
    lines += [f"E = {E}", "block_sizes = " + " ".join(map(str, sizes))]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def instance_from_manifest(man):
    src = man.get("source")
    if src == "appendix":
        return build_appendix_problem(man["appendix_id"], int(man["n"]),
                                      man.get("broyden_classical", "false") == "true")
    if src == "random-qc":
        lo, hi = (float(v) for v in man.get("entry_range", "-10 10").split())
        return generate_random_qc(RandomQcSpec(int(man["n"]), int(man["M"]),
                                               int(man["seed"]), (lo, hi)))
    raise ValueError(f"manifest source {src!r} cannot be rebuilt")
