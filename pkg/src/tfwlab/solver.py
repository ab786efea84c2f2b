"""Staggered augmented-Lagrangian solver for the periodic TFW / TFWD ground state.

Each outer iteration

1. lowers the augmented Lagrangian in ``u`` at frozen ``phi`` by gradient
   descent with Armijo backtracking,
2. updates the multiplier ``mu <- mu + Q / c`` and the penalty
   ``c <- max(kappa c, c_min)``,
3. re-solves the Poisson equation for ``phi``,

and stops once the relative charge violation and the Euler-Lagrange residual
are both below tolerance.

Minimising fully at frozen ``phi`` and then swapping in the new potential is
unstable on long cells: the long-wavelength charge response to a potential
change overshoots by a factor of order ``16 pi u^2 / lambda_1``. The inner
descent is therefore limited to a pseudo-time budget of
``inner_budget_scale * lambda_1 / (16 pi max u^2)`` per outer pass (the sum of
accepted step lengths), which keeps the frozen-potential iteration
contractive. The budget is far larger than a single step on small cells, so
there the inner solve still runs to ``inner_grad_tol``.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .functional import (
    AlmState,
    FieldState,
    ModelParams,
    energy_array,
    kinetic_change,
    kinetic_energy,
    local_energy_change,
    local_energy_density,
    residual_array,
)
from .grid import Field, require_same_grid
from .nuclear import NuclearDensity
from .poisson import FOUR_PI, poisson_array, smallest_nonzero_eigenvalue

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("outer_iter", "energy", "Q", "mu", "c", "inner_steps", "el_residual")


class LineSearchError(RuntimeError):
    """Backtracking found no Armijo decrease above the minimum step."""


class ConvergenceError(RuntimeError):
    """A solve that was required to converge did not."""


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration controls of :func:`staggered_solve`.

    Attributes:
        tol_constraint: Bound on ``|int(u^2 - m)|`` relative to the total charge.
        tol_residual: Bound on the sup-norm of the Euler-Lagrange residual.
        max_outer: Outer (multiplier / Poisson) iterations.
        max_inner: Gradient steps per inner minimisation.
        inner_grad_tol: Sup-norm gradient level at which an inner solve stops.
        inner_forcing: The inner solve also stops once the gradient falls
            below this fraction of the previous outer residual.
        step_init: Largest trial step of the line search.
        armijo_c: Sufficient-decrease constant.
        backtrack_factor: Step reduction per failed trial.
        seed: Seed for randomised initial guesses.
        kappa: Penalty reduction factor per outer pass.
        c_init: Initial penalty parameter.
        c_min: Penalty floor.
        mu_init: Initial multiplier.
        inner_budget_scale: Multiplier on the per-pass pseudo-time budget.
    """

    tol_constraint: float = 1e-8
    tol_residual: float = 1e-6
    max_outer: int = 20000
    max_inner: int = 20000
    inner_grad_tol: float = 1e-10
    inner_forcing: float = 0.1
    step_init: float = 1.0
    armijo_c: float = 0.25
    backtrack_factor: float = 0.5
    seed: int = 0
    kappa: float = 0.5
    c_init: float = 1.0
    c_min: float = 1e-2
    mu_init: float = 0.0
    inner_budget_scale: float = 1.0

    def __post_init__(self):
        for name in ("tol_constraint", "tol_residual", "inner_grad_tol", "step_init", "c_init", "c_min",
                     "inner_budget_scale"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        for name in ("max_outer", "max_inner"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("armijo_c", "backtrack_factor", "kappa"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
        if not 0 <= self.inner_forcing < 1:
            raise ValueError(f"inner_forcing must lie in [0, 1), got {self.inner_forcing!r}")
        if self.c_init < self.c_min:
            raise ValueError("c_init must not be below c_min")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed:
            raise ValueError(f"seed must be an integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_dict(cls, data: dict) -> "SolverOptions":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"unknown solver option {unknown[0]!r}")
        return cls(**data)

    def alm_state(self) -> AlmState:
        return AlmState(self.mu_init, self.c_init, self.kappa, self.c_min)


@dataclass(frozen=True)
class IterationRecord:
    outer_iter: int
    energy: float
    Q: float
    mu: float
    c: float
    inner_steps: int
    el_residual: float


@dataclass(frozen=True)
class SolveResult:
    """Outcome of :func:`staggered_solve`.

    ``constraint_violation`` is relative to the total charge; ``el_residual`` is
    the sup-norm Euler-Lagrange residual with ``mu_final`` absorbed.
    """

    state: FieldState
    mu_final: float
    energy: float
    outer_iterations: int
    constraint_violation: float
    el_residual: float
    converged: bool
    trace: tuple[IterationRecord, ...] = ()
    message: str = ""

    def summary(self) -> dict:
        """Scalar fields as a JSON-ready dict."""
        return {
            "converged": self.converged,
            "message": self.message,
            "mu_final": self.mu_final,
            "energy": self.energy,
            "outer_iterations": self.outer_iterations,
            "constraint_violation": self.constraint_violation,
            "el_residual": self.el_residual,
            "inner_steps": sum(r.inner_steps for r in self.trace),
        }

    def write_trace(self, path) -> None:
        write_trace_csv(self.trace, path)


def write_trace_csv(trace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            row = asdict(rec)
            writer.writerow([row["outer_iter"], *(f"{row[k]:.17g}" for k in TRACE_COLUMNS[1:5]),
                             row["inner_steps"], f"{row['el_residual']:.17g}"])


# --- constrained problems -------------------------------------------------
#
# The descent engine below works on any problem object offering the methods
# of _TFWProblem. The frozen objective is L(x) at fixed potential phi,
# multiplier mu and penalty c; Q(x) is the charge constraint.


class _TFWProblem:
    """Ground state of a nuclear density ``m``: unknown ``u``, constraint ``int(u^2 - m) = 0``."""

    def __init__(self, m: np.ndarray, grid, params: ModelParams):
        self.m = m
        self.grid = grid
        self.h = grid.spacing
        self.params = params
        self.charge_scale = max(self.h * float(np.sum(m)), np.finfo(float).tiny)

    def density(self, u):
        return u * u

    def charge(self, u):
        return u * u - self.m

    def constraint(self, u) -> float:
        return self.h * float(np.sum(self.charge(u)))

    def potential(self, u):
        return poisson_array(self.charge(u), self.grid)

    def value(self, u, phi, mu, c) -> float:
        h, p = self.h, self.params
        q = self.constraint(u)
        return (kinetic_energy(u, h, p.c_w) + h * float(np.sum(local_energy_density(u, p)))
                + h * float(np.dot(self.charge(u), phi)) + mu * q + q * q / (2.0 * c))

    def change(self, u, d, phi, mu, c, q) -> float:
        h, p = self.h, self.params
        dq = d * (2.0 * u + d)
        dQ = h * float(np.sum(dq))
        return (kinetic_change(u, d, h, p.c_w) + h * float(np.sum(local_energy_change(u, d, p)))
                + h * float(np.dot(dq, phi)) + mu * dQ + dQ * (2.0 * q + dQ) / (2.0 * c))

    def gradient(self, u, phi, mu, c, q):
        return residual_array(u, phi, mu + q / c, self.h, self.params)

    def residual(self, u, phi, mu):
        return residual_array(u, phi, mu, self.h, self.params)

    def energy(self, u, phi) -> float:
        return energy_array(u, self.m, self.grid, self.params, phi)


@dataclass
class _DescentOutcome:
    x: np.ndarray
    steps: int
    step: float
    grad_norm: float
    stalled: bool = False
    detail: str = ""


def _descend(problem, x, phi, mu, c, opts: SolverOptions, tol, step, budget=math.inf, history=None):
    """Armijo gradient descent on the frozen objective.

    ``step`` is the warm-start step length; each iteration first tries
    ``step / backtrack_factor`` (capped at ``step_init``). If ``budget`` is
    finite, the accepted step lengths sum to at most ``budget``.
    """
    h = problem.h
    q = problem.constraint(x)
    spent = 0.0
    steps = 0
    t = min(step, opts.step_init)
    t_min = 1e-16 * opts.step_init
    if history is not None:
        history.append(problem.value(x, phi, mu, c))
    g = problem.gradient(x, phi, mu, c, q)
    gnorm = float(np.max(np.abs(g)))
    while steps < opts.max_inner and gnorm > tol:
        remaining = budget - spent
        if steps and remaining < 0.01 * t:
            break
        gg = h * float(np.dot(g, g))
        t = min(t / opts.backtrack_factor, opts.step_init)
        while True:
            s = min(t, remaining)
            d = -s * g
            dl = problem.change(x, d, phi, mu, c, q)
            if dl <= -opts.armijo_c * s * gg:
                break
            t *= opts.backtrack_factor
            if t < t_min:
                detail = (f"no Armijo decrease down to step {t:.3g} after {steps} steps: "
                          f"|grad|_inf={gnorm:.3g}, last change {dl:.3g}, <g,g>_h={gg:.3g}")
                return _DescentOutcome(x, steps, t / opts.backtrack_factor, gnorm, True, detail)
        x = x + d
        spent += s
        steps += 1
        if history is not None:
            history.append(history[-1] + dl)
        q = problem.constraint(x)
        g = problem.gradient(x, phi, mu, c, q)
        gnorm = float(np.max(np.abs(g)))
    return _DescentOutcome(x, steps, t, gnorm)


def _budget(problem, x, scale: float) -> float:
    peak = float(np.max(problem.density(x)))
    if peak <= 0:
        return math.inf
    return scale * smallest_nonzero_eigenvalue(problem.grid) / (FOUR_PI * 4.0 * peak)


@dataclass
class _AlmOutcome:
    x: np.ndarray
    phi: np.ndarray
    alm: AlmState
    trace: list
    converged: bool
    violation: float
    residual: float
    message: str


def _run_alm(problem, x, phi, alm: AlmState, opts: SolverOptions) -> _AlmOutcome:
    """Outer augmented-Lagrangian loop shared by all constrained problems."""
    trace = []
    step = opts.step_init
    residual = math.inf
    violation = math.inf
    message = f"not converged after {opts.max_outer} outer iterations"
    converged = False
    for k in range(1, opts.max_outer + 1):
        tol = max(opts.inner_grad_tol, opts.inner_forcing * residual)
        budget = _budget(problem, x, opts.inner_budget_scale)
        out = _descend(problem, x, phi, alm.mu, alm.c, opts, tol, step, budget)
        x, step = out.x, out.step
        q = problem.constraint(x)
        alm = alm.updated(q)
        phi = problem.potential(x)
        residual = float(np.max(np.abs(problem.residual(x, phi, alm.mu))))
        violation = abs(q) / problem.charge_scale
        trace.append(IterationRecord(k, problem.energy(x, phi), q, alm.mu, alm.c, out.steps, residual))
        if violation <= opts.tol_constraint and residual <= opts.tol_residual:
            converged = True
            message = f"converged after {k} outer iterations"
            break
        if out.stalled:
            message = f"line search stalled at outer iteration {k}: {out.detail}"
            break
        if not np.all(np.isfinite(x)):
            message = f"iterate became non-finite at outer iteration {k}"
            break
    log.debug("ALM finished: %s (violation %.3g, residual %.3g)", message, violation, residual)
    return _AlmOutcome(x, phi, alm, trace, converged, violation, residual, message)


# --- public API ----------------------------------------------------------


def minimize_u(
    u0: Field,
    m: NuclearDensity,
    phi: Field,
    alm: AlmState,
    params: ModelParams,
    opts: SolverOptions,
    history: list | None = None,
) -> Field:
    """Minimise the augmented Lagrangian over ``u`` at frozen ``phi``, ``mu`` and ``c``.

    Runs Armijo gradient descent until the sup-norm gradient is at most
    ``opts.inner_grad_tol`` or ``opts.max_inner`` steps have been taken.

    Args:
        u0: Starting square-root density.
        m: Nuclear density.
        phi: Frozen potential.
        alm: Multiplier and penalty.
        params: Functional coefficients.
        opts: Solver options.
        history: If given, receives the Lagrangian value before the first
            step and after every accepted step.

    Raises:
        LineSearchError: If backtracking cannot find a decrease.
    """
    grid = require_same_grid(u0, m, phi)
    problem = _TFWProblem(m.values, grid, params)
    out = _descend(problem, np.array(u0.values), phi.values, alm.mu, alm.c, opts,
                   opts.inner_grad_tol, opts.step_init, history=history)
    if out.stalled:
        raise LineSearchError(out.detail)
    return Field(grid, out.x)


def staggered_solve(
    m: NuclearDensity,
    params: ModelParams,
    opts: SolverOptions | None = None,
    init: FieldState | None = None,
) -> SolveResult:
    """Ground state of nuclear density ``m`` by the staggered augmented-Lagrangian loop.

    Without ``init`` the iteration starts from the uniform field
    ``sqrt(total_charge / 2L)`` and ``phi = 0``. The multiplier and penalty
    start from ``opts.mu_init`` and ``opts.c_init``.

    Returns:
        A :class:`SolveResult`; ``converged`` is False if either tolerance
        was missed, and the trace records every outer iteration.
    """
    opts = opts or SolverOptions()
    grid = m.grid
    if m.is_perturbation:
        raise ValueError("staggered_solve needs a full nuclear density, not a perturbation")
    total = m.total_charge
    if not total > 0:
        raise ValueError("nuclear density carries no charge")
    if init is None:
        u = np.full(grid.num_points, math.sqrt(total / grid.length))
        phi = np.zeros(grid.num_points)
    else:
        require_same_grid(init.u, m)
        u, phi = np.array(init.u.values), np.array(init.phi.values)
    problem = _TFWProblem(m.values, grid, params)
    out = _run_alm(problem, u, phi, opts.alm_state(), opts)
    u = out.x if np.mean(out.x) >= 0 else -out.x
    state = FieldState(Field(grid, u), Field(grid, out.phi))
    return SolveResult(
        state=state,
        mu_final=out.alm.mu,
        energy=problem.energy(u, out.phi),
        outer_iterations=len(out.trace),
        constraint_violation=out.violation,
        el_residual=out.residual,
        converged=out.converged,
        trace=tuple(out.trace),
        message=out.message,
    )


def random_initial_state(m: NuclearDensity, rng: np.random.Generator) -> FieldState:
    """Positive random start ``sqrt(mean m) * U(0.5, 1.5)`` with ``phi = 0``."""
    grid = m.grid
    base = math.sqrt(m.total_charge / grid.length)
    u = base * rng.uniform(0.5, 1.5, grid.num_points)
    return FieldState(Field(grid, u), grid.zeros())


def _solve_task(args):
    m, params, opts, init = args
    return staggered_solve(m, params, opts, init)


def uniqueness_probe(
    m: NuclearDensity,
    params: ModelParams,
    opts: SolverOptions | None = None,
    trials: int = 3,
    workers: int = 1,
    return_results: bool = False,
):
    """Solve from ``trials`` random positive starts and measure their disagreement.

    Starts are drawn from ``numpy.random.default_rng(opts.seed)``, so the
    result does not depend on ``workers``.

    Returns:
        The largest pairwise sup-norm difference of ``|u|``, or
        ``(spread, results)`` when ``return_results`` is set.

    Raises:
        ConvergenceError: If any trial fails to converge.
    """
    opts = opts or SolverOptions()
    if int(trials) != trials or trials < 2:
        raise ValueError(f"trials must be an integer >= 2, got {trials!r}")
    rng = np.random.default_rng(opts.seed)
    tasks = [(m, params, opts, random_initial_state(m, rng)) for _ in range(int(trials))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_task, tasks))
    else:
        results = [_solve_task(t) for t in tasks]
    for i, res in enumerate(results):
        if not res.converged:
            raise ConvergenceError(f"uniqueness trial {i} did not converge: {res.message}")
    mags = [np.abs(r.state.u.values) for r in results]
    spread = max(
        float(np.max(np.abs(a - b))) for i, a in enumerate(mags) for b in mags[i + 1:]
    )
    return (spread, results) if return_results else spread


__all__ = [
    "ConvergenceError",
    "IterationRecord",
    "LineSearchError",
    "SolveResult",
    "SolverOptions",
    "TRACE_COLUMNS",
    "minimize_u",
    "random_initial_state",
    "staggered_solve",
    "uniqueness_probe",
    "write_trace_csv",
]
