"""Stationary solver: Picard warm-up, damped Newton, continuation in Ra."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fem import DofMap
from .linalg import Factorization, SingularLinearSystem, linear_solve  # noqa: F401
from .mesh import Mesh
from .properties import PropertyRatios
from .system import BLOCKS, CoupledProblem, SolutionFields

log = logging.getLogger(__name__)

__all__ = ["SolverConfig", "SolveReport", "StageReport", "NonConvergence", "SingularLinearSystem",
           "SolutionFields", "default_continuation", "solve_stationary", "linear_solve"]


def default_continuation(ra: float) -> list[float]:
    """Decade ladder starting at ``min(ra, 1e3)`` and ending at ``ra``."""
    if ra <= 1e3:
        return [float(ra)]
    ladder = []
    r = 1e3
    while r < ra * (1 - 1e-12):
        ladder.append(r)
        r *= 10
    return ladder + [float(ra)]


@dataclass
class SolverConfig:
    tolerance: float = 1e-6
    max_newton: int = 25
    max_picard: int = 2
    damping: float = 1.0
    continuation: Sequence[float] | None = None
    min_step: float = 1.0 / 64
    max_bisections: int = 4
    backend: str = "auto"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_newton < 1 or self.max_picard < 0:
            raise ValueError("iteration caps must be non-negative (max_newton >= 1)")
        if self.continuation is not None:
            c = [float(v) for v in self.continuation]
            if not c or any(b <= a for a, b in zip(c, c[1:])) or c[0] < 0:
                raise ValueError("continuation must be a non-empty strictly increasing list of Ra >= 0")
            self.continuation = c

    def ladder(self, ra: float) -> list[float]:
        if self.continuation is None:
            return default_continuation(ra)
        c = list(self.continuation)
        if not math.isclose(c[-1], ra, rel_tol=1e-12):
            raise ValueError(f"continuation must end at the target Ra={ra:g}")
        return c


@dataclass
class StageReport:
    ra: float
    picard_iterations: int = 0
    newton_iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    block_norms: dict[str, float] = field(default_factory=dict)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return self.picard_iterations + self.newton_iterations


@dataclass
class SolveReport:
    converged: bool = False
    tolerance: float = 1e-6
    stages: list[StageReport] = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.stages[-1].residual_history[-1] if self.stages else math.inf

    @property
    def total_iterations(self) -> int:
        return sum(s.iterations for s in self.stages)

    def to_text(self) -> str:
        lines = [f"converged: {str(self.converged).lower()}",
                 f"tolerance: {self.tolerance:.17g}",
                 "residual_norm: euclidean over free dofs",
                 f"stages: {len(self.stages)}"]
        for k, s in enumerate(self.stages):
            lines += [f"[stage {k}]",
                      f"ra: {s.ra:.17g}",
                      f"converged: {str(s.converged).lower()}",
                      f"picard_iterations: {s.picard_iterations}",
                      f"newton_iterations: {s.newton_iterations}",
                      "residual_history: " + " ".join(f"{r:.6e}" for r in s.residual_history)]
            lines += [f"residual_{name}: {s.block_norms.get(name, 0.0):.6e}" for name in BLOCKS]
        return "\n".join(lines) + "\n"


class NonConvergence(RuntimeError):
    """Iteration cap reached; carries the last iterate and the report."""

    def __init__(self, message: str, solution: SolutionFields, report: SolveReport):
        super().__init__(message)
        self.solution = solution
        self.report = report


def _norm(r):
    return float(np.linalg.norm(r))


class _Stepper:
    def __init__(self, problem: CoupledProblem, config: SolverConfig):
        self.problem = problem
        self.config = config

    def solve_step(self, x, newton=True):
        system = self.problem.assemble(x, newton=newton)
        delta = linear_solve(system, self.config.backend)
        return system.residual, delta

    def update(self, x, delta, scale):
        y = x.copy()
        y[self.problem.free] -= scale * delta
        return y

    def conduction_start(self, x):
        """One linear solve at Ra = 0 from zero velocity: pure conduction."""
        ra, self.problem.ra = self.problem.ra, 0.0
        try:
            _, delta = self.solve_step(x)
            return self.update(x, delta, 1.0)
        finally:
            self.problem.ra = ra

    def run_stage(self, x, stage: StageReport):
        cfg, prob = self.config, self.problem
        r = prob.residual(x)
        rn = _norm(r)
        stage.residual_history.append(rn)
        for _ in range(cfg.max_picard):
            if rn <= cfg.tolerance:
                break
            _, delta = self.solve_step(x, newton=False)
            trial = self.update(x, delta, 1.0)
            tn = _norm(prob.residual(trial))
            if not tn < rn:
                break
            x, rn = trial, tn
            stage.picard_iterations += 1
            stage.residual_history.append(rn)
        while rn > cfg.tolerance and stage.newton_iterations < cfg.max_newton:
            _, delta = self.solve_step(x, newton=True)
            step = cfg.damping
            while True:
                trial = self.update(x, delta, step)
                tn = _norm(prob.residual(trial))
                if tn < rn or step <= cfg.min_step:
                    break
                step *= 0.5
            stage.newton_iterations += 1
            if not np.isfinite(tn):
                break
            x, rn = trial, tn
            stage.residual_history.append(rn)
            log.debug("Ra=%g newton %d residual %.3e step %.3g", prob.ra, stage.newton_iterations, rn, step)
        stage.converged = bool(rn <= cfg.tolerance)
        full = prob.residual(x)
        stage.block_norms = {k: _norm(full[idx]) for k, idx in prob.blocks.items()}
        return x


def solve_stationary(mesh: Mesh, dofs: DofMap, ratios: PropertyRatios, pr: float, ra: float,
                     config: SolverConfig | None = None, initial: SolutionFields | None = None,
                     momentum_source: Callable | None = None, energy_source: Callable | None = None,
                     problem: CoupledProblem | None = None):
    """Solve the discrete stationary problem at ``(pr, ra)``.

    Returns ``(SolutionFields, SolveReport)``.  Each continuation stage
    seeds the next.  A stage that fails to converge is retried after
    inserting the geometric mean of it and the last converged stage, up to
    ``config.max_bisections`` times.

    Raises
    ------
    NonConvergence
        When a stage still fails after all bisections.
    SingularLinearSystem
        When a factorization fails.
    """
    config = config or SolverConfig()
    if problem is None:
        problem = CoupledProblem(mesh, dofs, ratios, pr, ra, momentum_source, energy_source)
    stepper = _Stepper(problem, config)
    report = SolveReport(tolerance=config.tolerance)

    if initial is None:
        x = stepper.conduction_start(problem.initial_state())
    else:
        x = problem.apply_dirichlet(initial.pack())

    pending = list(config.ladder(ra))
    last_ok, last_ra = x, None
    bisections = 0
    try:
        while pending:
            target = pending.pop(0)
            problem.ra = target
            stage = StageReport(ra=target)
            x = stepper.run_stage(last_ok, stage)
            report.stages.append(stage)
            if stage.converged:
                last_ok, last_ra = x, target
                continue
            if last_ra is None or bisections >= config.max_bisections or target <= 0:
                raise NonConvergence(f"no convergence at Ra={target:g} after "
                                     f"{stage.newton_iterations} Newton steps "
                                     f"(residual {stage.residual_history[-1]:.3e})",
                                     SolutionFields.unpack(x, dofs), report)
            bisections += 1
            mid = math.sqrt(max(last_ra, 1.0) * target)
            pending[:0] = [mid, target]
    finally:
        problem.ra = float(ra)
    report.converged = True
    return SolutionFields.unpack(last_ok, dofs), report
