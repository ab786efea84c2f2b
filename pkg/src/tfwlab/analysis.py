"""Defect energetics: relative energy, truncated estimator, charge neutrality, decay fits.

A defect is a perturbation ``nu`` of a reference crystal ``m1``. Given the
ground states of ``m1`` and ``m2 = m1 + nu`` on the same cell, the response
fields are ``v = u2 - u1`` and the potential difference ``phi_d``.

Potentials enter the defect formulas in the Euler-Lagrange gauge
``psi = phi + mu`` (see :func:`tfwlab.functional.el_gauge_offset`). In that
gauge the potential difference decays to zero away from the defect and the
relative-energy formula reproduces ``E(m2) - E(m1)`` exactly; the zero-mean
potentials differ from it by the constant ``mu``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .functional import (
    FieldState,
    ModelParams,
    el_gauge_offset,
    kinetic_change,
    kinetic_energy,
    local_energy_change,
    local_potential,
)
from .grid import Field, central_difference, forward_difference, laplacian, require_same_grid
from .nuclear import NuclearDensity
from .poisson import poisson_array
from .solver import ConvergenceError, SolveResult, SolverOptions, _run_alm

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-13
DEFECT_CSV_COLUMNS = ("z", "m1", "m2", "u1", "u2", "phi1", "phi2", "v", "phi_d")
TRUNCATION_CSV_COLUMNS = ("K", "gamma_K")


@dataclass(frozen=True)
class DefectFields:
    """Reference and perturbed ground states with their difference fields.

    Attributes:
        v: ``u2 - u1``.
        phi_d: ``psi2 - psi1``, the potential difference in the Euler-Lagrange gauge.
        reference: Ground state of ``m1`` as returned by the solver.
        perturbation: ``nu = m2 - m1``.
        perturbed: Ground state of ``m2``.
        reference_potential: ``psi1 = phi1 + mu1``.
        perturbed_potential: ``psi2 = phi2 + mu2``.
    """

    v: Field
    phi_d: Field
    reference: FieldState
    perturbation: NuclearDensity
    perturbed: FieldState
    reference_potential: Field
    perturbed_potential: Field

    @classmethod
    def from_states(
        cls, reference: FieldState, perturbed: FieldState, nu: NuclearDensity, params: ModelParams
    ) -> "DefectFields":
        grid = require_same_grid(reference.u, perturbed.u, nu)
        if not nu.is_perturbation:
            raise ValueError("nu must be a perturbation density")
        psi1 = reference.phi + el_gauge_offset(reference, params)
        psi2 = perturbed.phi + el_gauge_offset(perturbed, params)
        return cls(
            v=Field(grid, perturbed.u.values - reference.u.values),
            phi_d=psi2 - psi1,
            reference=reference,
            perturbation=nu,
            perturbed=perturbed,
            reference_potential=psi1,
            perturbed_potential=psi2,
        )

    @classmethod
    def from_results(
        cls, reference: SolveResult, perturbed: SolveResult, nu: NuclearDensity, params: ModelParams
    ) -> "DefectFields":
        """Like :meth:`from_states` but refuses unconverged solves."""
        for name, res in (("reference", reference), ("perturbed", perturbed)):
            if not res.converged:
                raise ConvergenceError(f"{name} solve did not converge: {res.message}")
        return cls.from_states(reference.state, perturbed.state, nu, params)

    @property
    def grid(self):
        return self.v.grid

    @property
    def charge_response(self) -> np.ndarray:
        """``v^2 + 2 u1 v - nu``, the net charge the defect adds."""
        v, u1 = self.v.values, self.reference.u.values
        return v * v + 2.0 * u1 * v - self.perturbation.values

    def write_csv(self, path, m1: NuclearDensity) -> None:
        """Defect profile table; ``phi1``/``phi2`` are written in the Euler-Lagrange gauge."""
        require_same_grid(m1, self.v)
        cols = (
            self.grid.coordinates,
            m1.values,
            m1.values + self.perturbation.values,
            self.reference.u.values,
            self.perturbed.u.values,
            self.reference_potential.values,
            self.perturbed_potential.values,
            self.v.values,
            self.phi_d.values,
        )
        _write_table(path, DEFECT_CSV_COLUMNS, np.column_stack(cols))


@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit ``|f| ~ k1 exp(-k2 dist)`` with ``dist`` measured from the defect core."""

    k1: float
    k2: float
    fit_window: tuple[float, float]
    correlation: float

    def to_dict(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "fit_window": list(self.fit_window),
                "correlation": self.correlation}


@dataclass(frozen=True)
class RelativeEnergyReport:
    """Relative energy of a defect with its truncation, neutrality and decay diagnostics.

    A decay fit is None when the response is too small to fit (for instance a
    zero perturbation).
    """

    gamma: float
    truncated: tuple[tuple[float, float], ...]
    neutrality_defect: float
    decay_u: DecayFit | None
    decay_phi: DecayFit | None
    variational_value: float | None = None

    def __post_init__(self):
        ks = [k for k, _ in self.truncated]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("truncation lengths must be strictly increasing")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "truncated": [[k, g] for k, g in self.truncated],
            "neutrality_defect": self.neutrality_defect,
            "decay_u": self.decay_u.to_dict() if self.decay_u else None,
            "decay_phi": self.decay_phi.to_dict() if self.decay_phi else None,
            "variational_value": self.variational_value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def write_truncation_csv(self, path) -> None:
        _write_table(path, TRUNCATION_CSV_COLUMNS, np.array(self.truncated, dtype=float).reshape(-1, 2))


def _write_table(path, header, rows: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{x:.17g}" for x in row])


# --- relative energy ------------------------------------------------------


def _bracket(u1: np.ndarray, w: np.ndarray, params: ModelParams) -> np.ndarray:
    """Taylor remainder of the local energy: ``F(u1 + w) - F(u1) - F'(u1) w``."""
    return local_energy_change(u1, w, params) - local_potential(u1, params) * w


def _gamma_density(d: DefectFields, params: ModelParams) -> np.ndarray:
    """Pointwise integrand whose ``h``-sum is the relative energy."""
    h = d.grid.spacing
    v, u1 = d.v.values, d.reference.u.values
    dv = forward_difference(v, h)
    return (
        params.c_w * dv * dv
        + _bracket(u1, v, params)
        + 0.5 * d.phi_d.values * d.charge_response
        + d.reference_potential.values * (v * v - d.perturbation.values)
    )


def relative_energy(d: DefectFields, params: ModelParams) -> float:
    """Relative energy of the defect from the response fields alone.

    ``gamma = C_W int v'^2 + int [F(u1 + v) - F(u1) - F'(u1) v]
    + 1/2 int phi_d (v^2 + 2 u1 v - nu) + int psi1 (v^2 - nu)``, where ``F`` is
    the Thomas-Fermi(-Dirac) energy density. For converged states it equals
    ``energy(u2, m2) - energy(u1, m1)``.
    """
    return d.grid.spacing * float(np.sum(_gamma_density(d, params)))


def truncated_relative_energy(d: DefectFields, params: ModelParams, K: float) -> float:
    """Relative-energy integrand summed only over the window ``|z| <= K / 2``.

    Args:
        K: Window width with ``L0 < K <= 2L``; ``K = 2L`` is the whole cell.
    """
    grid = d.grid
    width = d.perturbation.defect_width
    if not width < K <= grid.length:
        raise ValueError(f"truncation width K={K} must satisfy {width} < K <= {grid.length}")
    inside = np.abs(grid.coordinates) <= K / 2 + 1e-9 * grid.spacing
    return grid.spacing * float(np.sum(_gamma_density(d, params)[inside]))


def check_charge_neutrality(d: DefectFields) -> float:
    """``|int(v^2 + 2 u1 v - nu)| / max(1, int|nu|)``."""
    h = d.grid.spacing
    scale = max(1.0, h * float(np.sum(np.abs(d.perturbation.values))))
    return abs(h * float(np.sum(d.charge_response))) / scale


# --- decay fits -----------------------------------------------------------


def decay_profile(f: Field, derivatives: int = 0) -> np.ndarray:
    """``|f|``, or ``|f| + |f'| + |f''|`` (central differences) for ``derivatives=2``."""
    vals = f.values
    h = f.grid.spacing
    if derivatives == 0:
        return np.abs(vals)
    if derivatives == 1:
        return np.abs(vals) + np.abs(central_difference(vals, h))
    if derivatives == 2:
        return np.abs(vals) + np.abs(central_difference(vals, h)) + np.abs(laplacian(vals, h))
    raise ValueError(f"derivatives must be 0, 1 or 2, got {derivatives}")


def fit_decay(
    f: Field,
    core_half_width: float,
    boundary_buffer: float | None = None,
    derivatives: int = 0,
    side: str = "both",
) -> DecayFit:
    """Fit ``log|f| = log k1 - k2 dist`` away from a defect core centred at ``z = 0``.

    ``dist = |z| - core_half_width``. The window is
    ``core_half_width + h <= |z| <= L - boundary_buffer``; both tails are pooled
    unless ``side`` is ``"left"`` or ``"right"``. Samples at or below the noise
    floor ``1e-13`` are dropped.

    Args:
        f: Field to fit.
        core_half_width: Half-width of the excluded defect core.
        boundary_buffer: Distance kept clear of the cell boundary, where the
            periodic image of the defect contaminates the tail. Defaults to
            ``0.2 L``.
        derivatives: Also add the first and second derivative magnitudes to
            ``|f|`` (0, 1 or 2). Oscillatory tails are fitted more cleanly
            this way because the derivatives fill in the zeros of ``f``.
        side: ``"both"``, ``"left"`` or ``"right"``.

    Raises:
        ValueError: If fewer than 10 usable samples remain.
    """
    grid = f.grid
    L, h = grid.half_width, grid.spacing
    if boundary_buffer is None:
        boundary_buffer = 0.2 * L
    if core_half_width < 0 or boundary_buffer < 0:
        raise ValueError("core half-width and boundary buffer must be nonnegative")
    if side not in ("both", "left", "right"):
        raise ValueError(f"side must be 'both', 'left' or 'right', got {side!r}")
    lo, hi = core_half_width + h, L - boundary_buffer
    z = grid.coordinates
    az = np.abs(z)
    mask = (az >= lo - 1e-9 * h) & (az <= hi + 1e-9 * h)
    if side == "left":
        mask &= z < 0
    elif side == "right":
        mask &= z > 0
    profile = decay_profile(f, derivatives)
    if np.count_nonzero(mask) < 10:
        raise ValueError(f"fit window [{lo:.6g}, {hi:.6g}] holds fewer than 10 samples")
    mask &= profile > NOISE_FLOOR
    if not np.any(mask):
        raise ValueError("all samples in the fit window are below the noise floor")
    if np.count_nonzero(mask) < 10:
        raise ValueError("fewer than 10 samples in the fit window exceed the noise floor")
    dist = az[mask] - core_half_width
    logs = np.log(profile[mask])
    slope, intercept = np.polyfit(dist, logs, 1)
    pred = intercept + slope * dist
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(math.exp(intercept)), float(-slope), (float(lo), float(hi)), r2)


# --- variational cross-check ---------------------------------------------


class _DefectProblem:
    """Direct minimisation of the defect energy over ``w`` at a fixed reference state.

    Objective at frozen potential ``phi``:
    ``C_W int w'^2 + int bracket(u1, w) + int psi1 (w^2 - nu) + int phi q(w)``
    with ``q(w) = w^2 + 2 u1 w - nu`` and the constraint ``int q(w) = 0``.
    Swapping in the self-consistent ``phi_w`` with a factor 1/2 gives the
    defect energy itself.
    """

    def __init__(self, u1: np.ndarray, psi1: np.ndarray, nu: np.ndarray, grid, params: ModelParams):
        self.u1, self.psi1, self.nu = u1, psi1, nu
        self.grid = grid
        self.h = grid.spacing
        self.params = params
        self.local1 = local_potential(u1, params)
        scale = self.h * float(np.sum(np.abs(nu)))
        self.charge_scale = scale if scale > 0 else self.h * float(np.dot(u1, u1))

    def density(self, w):
        return (self.u1 + w) ** 2

    def charge(self, w):
        return w * (w + 2.0 * self.u1) - self.nu

    def constraint(self, w) -> float:
        return self.h * float(np.sum(self.charge(w)))

    def potential(self, w):
        return poisson_array(self.charge(w), self.grid)

    def _fixed(self, w) -> float:
        h, p = self.h, self.params
        return (kinetic_energy(w, h, p.c_w) + h * float(np.sum(_bracket(self.u1, w, p)))
                + h * float(np.dot(self.psi1, w * w - self.nu)))

    def value(self, w, phi, mu, c) -> float:
        q = self.constraint(w)
        return self._fixed(w) + self.h * float(np.dot(phi, self.charge(w))) + mu * q + q * q / (2.0 * c)

    def change(self, w, d, phi, mu, c, q) -> float:
        h, p = self.h, self.params
        dq = d * (2.0 * (self.u1 + w) + d)
        dQ = h * float(np.sum(dq))
        return (kinetic_change(w, d, h, p.c_w)
                + h * float(np.sum(local_energy_change(self.u1 + w, d, p) - self.local1 * d))
                + h * float(np.dot(self.psi1, d * (2.0 * w + d)))
                + h * float(np.dot(phi, dq)) + mu * dQ + dQ * (2.0 * q + dQ) / (2.0 * c))

    def residual(self, w, phi, mu):
        p = self.params
        return (-2.0 * p.c_w * laplacian(w, self.h) + local_potential(self.u1 + w, p) - self.local1
                + 2.0 * self.psi1 * w + 2.0 * (phi + mu) * (self.u1 + w))

    def gradient(self, w, phi, mu, c, q):
        return self.residual(w, phi, mu + q / c)

    def energy(self, w, phi) -> float:
        return self._fixed(w) + 0.5 * self.h * float(np.dot(phi, self.charge(w)))


def defect_energy(w: Field, reference: FieldState, nu: NuclearDensity, params: ModelParams) -> float:
    """Defect energy functional evaluated at a trial response ``w`` (self-consistent potential)."""
    grid = require_same_grid(w, reference.u, nu)
    psi1 = reference.phi.values + el_gauge_offset(reference, params)
    prob = _DefectProblem(reference.u.values, psi1, nu.values, grid, params)
    return prob.energy(w.values, prob.potential(w.values))


def variational_cross_check(
    reference: FieldState,
    nu: NuclearDensity,
    params: ModelParams,
    opts: SolverOptions | None = None,
) -> tuple[float, Field]:
    """Minimise the defect energy directly over the response ``w``, starting from ``w = 0``.

    The charge constraint ``int((u1 + w)^2 - u1^2) = int nu`` is enforced with
    the same augmented-Lagrangian loop as the ground-state solver. At the
    minimum the value equals the relative energy and ``w`` equals ``u2 - u1``.

    Returns:
        ``(minimum value, minimiser w)``.

    Raises:
        ConvergenceError: If the minimisation does not converge.
    """
    opts = opts or SolverOptions()
    grid = require_same_grid(reference.u, nu)
    psi1 = reference.phi.values + el_gauge_offset(reference, params)
    problem = _DefectProblem(reference.u.values, psi1, nu.values, grid, params)
    w0 = np.zeros(grid.num_points)
    out = _run_alm(problem, w0, problem.potential(w0), opts.alm_state(), opts)
    if not out.converged:
        raise ConvergenceError(f"variational minimisation did not converge: {out.message}")
    return problem.energy(out.x, out.phi), Field(grid, out.x)


def feasibility(w: Field, reference: FieldState, nu: NuclearDensity) -> float:
    """Relative violation ``|int((u1 + w)^2 - u1^2 - nu)| / int|nu|`` of the defect charge constraint."""
    grid = require_same_grid(w, reference.u, nu)
    prob = _DefectProblem(reference.u.values, reference.phi.values, nu.values, grid, ModelParams())
    return abs(prob.constraint(w.values)) / prob.charge_scale


# --- orchestration --------------------------------------------------------


def default_truncation_widths(defect_width: float, cell_length: float, count: int = 12) -> list[float]:
    """``count`` widths ``L0 + j * step`` with unit step, shrunk to fit inside the cell."""
    step = min(1.0, (cell_length - defect_width) / count)
    return [defect_width + j * step for j in range(1, count + 1)]


def solve_defect(m1: NuclearDensity, nu: NuclearDensity, params: ModelParams, opts: SolverOptions | None = None):
    """Solve the reference and perturbed crystals independently.

    Returns:
        ``(reference result, perturbed result)``; check ``converged`` on both.
    """
    from .nuclear import superpose
    from .solver import staggered_solve

    m2 = superpose(m1, nu)
    return staggered_solve(m1, params, opts), staggered_solve(m2, params, opts)


def _try_fit(f: Field, core: float, buffer, derivatives: int, name: str) -> DecayFit | None:
    try:
        return fit_decay(f, core, buffer, derivatives)
    except ValueError as exc:
        log.warning("no decay fit for %s: %s", name, exc)
        return None


def build_report(
    d: DefectFields,
    params: ModelParams,
    truncation_widths=None,
    boundary_buffer: float | None = None,
    fit_derivatives: int = 2,
    variational_value: float | None = None,
) -> RelativeEnergyReport:
    """Collect the relative energy and its diagnostics for a solved defect."""
    nu = d.perturbation
    if truncation_widths is None:
        truncation_widths = default_truncation_widths(nu.defect_width, d.grid.length)
    truncated = tuple((float(K), truncated_relative_energy(d, params, K)) for K in truncation_widths)
    core = nu.defect_half_width
    return RelativeEnergyReport(
        gamma=relative_energy(d, params),
        truncated=truncated,
        neutrality_defect=check_charge_neutrality(d),
        decay_u=_try_fit(d.v, core, boundary_buffer, fit_derivatives, "v"),
        decay_phi=_try_fit(d.phi_d, core, boundary_buffer, fit_derivatives, "phi_d"),
        variational_value=variational_value,
    )
