"""Experiment configuration, single runs and UE/WE comparisons.

A run builds a problem, wraps it in an averaged operator, iterates once to
the tightest requested tolerance and reads the iteration count for every
looser tolerance off the trace. ``ue`` uses the extrapolated step
``sigma_max``; ``we`` uses ``sigma = 1``.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linear import (Fixed, LinearBlockProblem, ResidualMinimizing, SpectralBand,
                     assemble_sequential, assemble_simultaneous, contiguous_blocks,
                     read_coo, read_vector)
from .operators import StepMode
from .problems import (APPENDIX_NAMES, RNG_ALGORITHM, RandomQcSpec, averaged_operator,
                       build_appendix_problem, generate_random_qc)
from .strings import SolverConfig, TerminalStatus, iterate
from .tomography import PhantomSpec, block_by_view, build_projection_matrix

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "EXIT_CODES",
    "SMALL_PRESET",
    "load_config",
    "dump_config",
    "run_experiment",
    "batch_compare",
    "Comparison",
]

log = logging.getLogger(__name__)

EXIT_CODES = {TerminalStatus.FEASIBILITY_REACHED: 0, TerminalStatus.MAX_ITERS: 2,
              TerminalStatus.GUARD_TRIGGERED: 3}
SMALL_PRESET = {"n": 50, "M": 40, "count": 20}
FULL_QC = {"n": 300, "M": 200, "count": 100}
KINDS = ("appendix", "random-qc", "tomography", "linear")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``problem`` holds the source-specific keys (``name``/``n`` for appendix
    problems, ``n``/``M``/``seed`` for random quadratics, ``grid``/``views``/
    ``rays`` for tomography, ``matrix``/``rhs``/``solution`` plus ``blocks``
    or ``blocks_file`` for an external linear system).
    """

    kind: str
    problem: dict = field(default_factory=dict)
    E: int = 4
    mode: str = "ue"
    tolerances: tuple = (1e-1, 1e-4)
    max_iters: int = 5000
    lam: float = 1.0
    guard: float = 1e-10
    assert_fejer: bool = False
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"problem.kind: expected one of {KINDS}, got {self.kind!r}")
        if self.mode not in ("ue", "we"):
            raise ConfigError(f"solver.mode: expected 'ue' or 'we', got {self.mode!r}")
        self.tolerances = tuple(sorted({float(t) for t in self.tolerances}, reverse=True))
        if not self.tolerances or min(self.tolerances) <= 0:
            raise ConfigError("solver.tolerances: need at least one positive value")
        if self.max_iters < 1:
            raise ConfigError("solver.max_iters: must be at least 1")
        if not 0 < self.lam < 2:
            raise ConfigError("solver.lambda: must lie in (0, 2)")
        if self.E < 1:
            raise ConfigError("plan.E: must be positive")
        if not self.label:
            self.label = _default_label(self)

    def with_mode(self, mode):
        return dataclasses.replace(self, mode=mode, label="")

    def pairing_key(self):
        d = dataclasses.asdict(self)
        d.pop("mode")
        d.pop("label")
        return json.dumps(d, sort_keys=True, default=str)

    def problem_name(self):
        p = self.problem
        if self.kind == "appendix":
            return p.get("name", "?") + ("-classical" if p.get("broyden_classical") else "")
        if self.kind == "random-qc":
            return f"random-qc-n{p.get('n')}-M{p.get('M')}-s{p.get('seed')}"
        if self.kind == "tomography":
            return f"tomography-{p.get('grid', 63)}"
        return os.path.basename(str(p.get("matrix", "linear")))


def _default_label(cfg):
    return f"{cfg.problem_name()}-{cfg.mode}"


_INT_KEYS = {"n", "M", "seed", "grid", "views", "rays", "blocks"}
_BOOL_KEYS = {"broyden_classical"}


def _coerce(key, val):
    if key in _INT_KEYS:
        return int(val)
    if key in _BOOL_KEYS:
        return str(val).lower() in ("1", "true", "yes", "on")
    return val


def load_config(path):
    """Read an INI-style config with sections problem, plan, solver."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not cp.has_section("problem"):
        raise ConfigError(f"{path}: missing [problem] section")
    prob = dict(cp["problem"])
    kind = prob.pop("kind", None)
    if kind is None:
        raise ConfigError(f"{path}: problem.kind is required")
    base = os.path.dirname(os.path.abspath(path))
    for key in ("matrix", "rhs", "solution", "blocks_file"):
        if key in prob and not os.path.isabs(prob[key]):
            prob[key] = os.path.join(base, prob[key])
    try:
        problem = {k: _coerce(k, v) for k, v in prob.items()}
        kw = {}
        if cp.has_section("plan"):
            kw.update({k: int(v) for k, v in cp["plan"].items() if k == "E"})
        if cp.has_section("solver"):
            s = cp["solver"]
            if "mode" in s:
                kw["mode"] = s["mode"]
            if "tolerances" in s:
                kw["tolerances"] = tuple(float(t) for t in s["tolerances"].split())
            if "max_iters" in s:
                kw["max_iters"] = int(s["max_iters"])
            if "lambda" in s:
                kw["lam"] = float(s["lambda"])
            if "guard" in s:
                kw["guard"] = float(s["guard"])
            if "assert_fejer" in s:
                kw["assert_fejer"] = s.getboolean("assert_fejer")
        if cp.has_section("output") and "label" in cp["output"]:
            kw["label"] = cp["output"]["label"]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig(kind, problem, **kw)


def dump_config(cfg):
    """INI text that :func:`load_config` turns back into ``cfg``."""
    lines = ["[problem]", f"kind = {cfg.kind}"]
    for k in sorted(cfg.problem):
        v = cfg.problem[k]
        lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    lines += ["", "[plan]", f"E = {cfg.E}", "", "[solver]", f"mode = {cfg.mode}",
              "tolerances = " + " ".join(repr(t) for t in cfg.tolerances),
              f"max_iters = {cfg.max_iters}", f"lambda = {cfg.lam!r}", f"guard = {cfg.guard!r}",
              f"assert_fejer = {str(cfg.assert_fejer).lower()}",
              "", "[output]", f"label = {cfg.label}"]
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trace: object
    x: np.ndarray
    iterations_to_tol: dict
    wall_time: float
    extra: dict = field(default_factory=dict)

    @property
    def status(self):
        return self.trace.terminal_status

    @property
    def exit_code(self):
        return EXIT_CODES[self.status]

    @property
    def iterations(self):
        return self.trace.iterations

    def summary(self):
        return {
            "label": self.config.label,
            "problem": self.config.problem_name(),
            "mode": self.config.mode,
            "iterations": self.iterations,
            "iterations_to_tol": {repr(t): k for t, k in self.iterations_to_tol.items()},
            "terminal_status": self.status.value,
            "final_violation": self.trace.rows[-1].violation,
            "wall_time": self.wall_time,
            "config": dump_config(self.config),
            **self.extra,
        }


def build_operator(cfg):
    """Problem operator, start point and extra summary fields for ``cfg``."""
    p = cfg.problem
    if cfg.kind == "appendix":
        name = p.get("name")
        if name not in APPENDIX_NAMES:
            raise ConfigError(f"problem.name: expected one of {APPENDIX_NAMES}, got {name!r}")
        inst = build_appendix_problem(name, p.get("n"), p.get("broyden_classical", False))
        return averaged_operator(inst, cfg.E), inst.x0, {"M": inst.M, "n": inst.n}
    if cfg.kind == "random-qc":
        spec = RandomQcSpec(p.get("n", FULL_QC["n"]), p.get("M", FULL_QC["M"]),
                            p.get("seed", 0))
        inst = generate_random_qc(spec)
        return averaged_operator(inst, cfg.E), inst.x0, {"rng": RNG_ALGORITHM,
                                                         "seed": spec.seed}
    if cfg.kind == "tomography":
        spec = PhantomSpec(grid=p.get("grid", 63), views=p.get("views", 16),
                           rays_per_view=p.get("rays", 99))
        proj = build_projection_matrix(spec)
        P = block_by_view(proj)
        return (assemble_simultaneous(P), np.zeros(P.n),
                {"rows": proj.A.shape[0], "cols": proj.A.shape[1],
                 "x_true_norm": float(np.linalg.norm(proj.x_true))})
    for key in ("matrix", "rhs"):
        if key not in p:
            raise ConfigError(f"problem.{key} is required for a linear system")
    A = read_coo(p["matrix"])
    b = read_vector(p["rhs"])
    sol = read_vector(p["solution"]) if "solution" in p else None
    strategy = {"fixed": Fixed(float(p.get("lambda_t", 1.0))),
                "residual": ResidualMinimizing(),
                "spectral": SpectralBand(float(p.get("eps", 0.1)))}.get(p.get("strategy", "fixed"))
    if strategy is None:
        raise ConfigError("problem.strategy: expected fixed, residual or spectral")
    if "blocks_file" in p:
        ids = read_vector(p["blocks_file"]).astype(int)
        if ids.shape != (A.shape[0],):
            raise ConfigError("problem.blocks_file: need one block id per row")
        partition = [np.flatnonzero(ids == v) for v in np.unique(ids)]
    else:
        partition = contiguous_blocks(A.shape[0], p.get("blocks", cfg.E))
    P = LinearBlockProblem(A, b, partition, lambda_strategy=strategy, solution=sol)
    plan = p.get("plan", "simultaneous")
    if plan not in ("simultaneous", "sequential"):
        raise ConfigError("problem.plan: expected simultaneous or sequential")
    op = assemble_simultaneous(P) if plan == "simultaneous" else assemble_sequential(P)
    return op, np.zeros(P.n), {"rows": A.shape[0], "cols": A.shape[1]}


def run_experiment(cfg, out_dir=None):
    """Run one configuration; optionally write ``<label>.csv`` and ``<label>.json``."""
    op, x0, extra = build_operator(cfg)
    solver = SolverConfig(
        lambda_schedule=cfg.lam,
        step_mode=StepMode.SIGMA_MAX if cfg.mode == "ue" else StepMode.CONSTANT,
        max_iters=cfg.max_iters, feasibility_tol=min(cfg.tolerances),
        fixed_point_guard=cfg.guard, assert_fejer=cfg.assert_fejer)
    t0 = time.perf_counter()
    x, trace = iterate(op, x0, solver)
    wall = time.perf_counter() - t0
    if cfg.kind == "tomography":
        extra["relative_error"] = [float(v) for v in
                                   trace.column("distance") / extra["x_true_norm"]]
    res = ExperimentResult(cfg, trace, x, {t: trace.first_below(t) for t in cfg.tolerances},
                           wall, extra)
    log.info("%s: %s after %d iterations", cfg.label, res.status.value, res.iterations)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, cfg.label + ".csv"), "w", newline="\n") as fh:
            fh.write(trace.to_csv())
        with open(os.path.join(out_dir, cfg.label + ".json"), "w", newline="\n") as fh:
            json.dump(res.summary(), fh, indent=2)
            fh.write("\n")
    return res


@dataclass
class Comparison:
    """Per-problem UE/WE iteration counts at one tolerance."""

    tol: Optional[float]
    rows: list  # (name, ue_iters, we_iters, ratio)

    @property
    def mean_ue(self):
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_we(self):
        return float(np.mean([r[2] for r in self.rows]))

    def to_csv(self):
        out = ["name,ue_iters,we_iters,ratio"]
        out += [f"{n},{u},{w},{r!r}" for n, u, w, r in self.rows]
        out.append(f"MEAN,{self.mean_ue!r},{self.mean_we!r},"
                   f"{self.mean_ue / self.mean_we if self.mean_we else float('nan')!r}")
        return "\n".join(out) + "\n"


def _count(res, tol):
    if tol is None:
        return res.iterations
    k = res.iterations_to_tol.get(tol)
    return res.iterations if k is None else k


def batch_compare(results, tol=None):
    """Pair UE and WE results of otherwise identical configs.

    With ``tol=None`` the terminal iteration count is compared; otherwise the
    first iteration meeting ``tol`` (the terminal count when never met).
    """
    groups = {}
    for r in results:
        groups.setdefault(r.config.pairing_key(), {})[r.config.mode] = r
    rows = []
    for key, pair in groups.items():
        if set(pair) != {"ue", "we"}:
            raise ValueError(f"unpaired configuration: {next(iter(pair.values())).config.label}")
        ue, we = _count(pair["ue"], tol), _count(pair["we"], tol)
        ratio = 1.0 if ue == we else (ue / we if we else float("inf"))
        rows.append((pair["ue"].config.problem_name(), ue, we, ratio))
    rows.sort(key=lambda r: r[0])
    return Comparison(tol, rows)
