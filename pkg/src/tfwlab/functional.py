"""TFW / TFWD energy, the charge-constrained augmented Lagrangian and its gradient.

Conventions used throughout the package:

* ``u`` is the square-root electron density, ``rho = u**2``.
* The electrostatic potential solves ``-phi'' = 4 pi (u^2 - m)`` with zero
  mean, so the Coulomb energy ``1/2 int phi (u^2 - m)`` is nonnegative and the
  Euler-Lagrange equation reads
  ``-2 C_W u'' + 10/3 C_TF |u|^(4/3) u - 8/3 C_D |u|^(2/3) u + 2 (phi + mu) u = 0``.
* The kinetic term is ``C_W h sum((u[i+1] - u[i]) / h)^2``. Its exact discrete
  gradient is ``-2 C_W`` times the three-point Laplacian, the same stencil the
  Poisson solve uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import Field, forward_difference, laplacian, require_same_grid
from .nuclear import NuclearDensity
from .poisson import poisson_array

DIRAC_CONSTANT = 0.75 * (3.0 / math.pi) ** (1.0 / 3.0)


@dataclass(frozen=True)
class ModelParams:
    """Functional coefficients; ``c_d == 0`` selects TFW, ``c_d > 0`` TFWD."""

    c_w: float = 1.0
    c_tf: float = 3.2
    c_d: float = 0.0

    def __post_init__(self):
        if not self.c_w > 0:
            raise ValueError(f"c_w must be positive, got {self.c_w}")
        if not self.c_tf > 0:
            raise ValueError(f"c_tf must be positive, got {self.c_tf}")
        if not self.c_d >= 0:
            raise ValueError(f"c_d must be nonnegative, got {self.c_d}")

    @classmethod
    def tfw(cls, c_w: float = 1.0, c_tf: float = 3.2) -> "ModelParams":
        return cls(c_w, c_tf, 0.0)

    @classmethod
    def tfwd(cls, c_w: float = 1.0, c_tf: float = 3.2) -> "ModelParams":
        return cls(c_w, c_tf, DIRAC_CONSTANT)

    @property
    def name(self) -> str:
        return "tfwd" if self.c_d > 0 else "tfw"


@dataclass(frozen=True)
class FieldState:
    """Square-root density and electrostatic potential on one grid."""

    u: Field
    phi: Field

    def __post_init__(self):
        require_same_grid(self.u, self.phi)

    @property
    def grid(self):
        return self.u.grid

    @property
    def density(self) -> Field:
        return Field(self.grid, self.u.values**2)


@dataclass(frozen=True)
class AlmState:
    """Multiplier ``mu`` and penalty parameter ``c`` of the augmented Lagrangian.

    The penalty weight is ``1 / (2 c)``; each outer pass shrinks ``c`` by
    ``kappa`` down to ``c_min``.
    """

    mu: float = 0.0
    c: float = 1.0
    kappa: float = 0.5
    c_min: float = 1e-2

    def __post_init__(self):
        if not self.c_min > 0:
            raise ValueError(f"c_min must be positive, got {self.c_min}")
        if not self.c >= self.c_min:
            raise ValueError(f"penalty c={self.c} is below c_min={self.c_min}")
        if not 0 < self.kappa < 1:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")

    def updated(self, violation: float) -> "AlmState":
        """Multiplier step ``mu + Q / c`` followed by ``c <- max(kappa c, c_min)``."""
        return replace(self, mu=self.mu + violation / self.c, c=max(self.kappa * self.c, self.c_min))


# --- array kernels -------------------------------------------------------


def local_energy_density(u: np.ndarray, p: ModelParams) -> np.ndarray:
    a = np.abs(u)
    out = p.c_tf * a ** (10.0 / 3.0)
    if p.c_d:
        out -= p.c_d * a ** (8.0 / 3.0)
    return out


def local_potential(u: np.ndarray, p: ModelParams) -> np.ndarray:
    """Derivative of :func:`local_energy_density` with respect to signed ``u``."""
    a = np.abs(u)
    out = (10.0 / 3.0) * p.c_tf * a ** (4.0 / 3.0) * u
    if p.c_d:
        out -= (8.0 / 3.0) * p.c_d * a ** (2.0 / 3.0) * u
    return out


def power_change(u: np.ndarray, d: np.ndarray, power: float) -> np.ndarray:
    """``|u + d|**power - |u|**power`` without catastrophic cancellation for small ``d``."""
    a = np.abs(u)
    out = np.abs(u + d) ** power - a**power
    safe = np.abs(d) < 0.5 * a
    if np.any(safe):
        x = d[safe] / u[safe]
        out[safe] = a[safe] ** power * np.expm1(power * np.log1p(x))
    return out


def local_energy_change(u: np.ndarray, d: np.ndarray, p: ModelParams) -> np.ndarray:
    out = p.c_tf * power_change(u, d, 10.0 / 3.0)
    if p.c_d:
        out -= p.c_d * power_change(u, d, 8.0 / 3.0)
    return out


def kinetic_energy(u: np.ndarray, h: float, c_w: float) -> float:
    du = forward_difference(u, h)
    return c_w * h * float(np.dot(du, du))


def kinetic_change(u: np.ndarray, d: np.ndarray, h: float, c_w: float) -> float:
    du, dd = forward_difference(u, h), forward_difference(d, h)
    return c_w * h * float(np.dot(dd, 2.0 * du + dd))


def energy_array(u: np.ndarray, m: np.ndarray, grid, p: ModelParams, phi: np.ndarray | None = None) -> float:
    h = grid.spacing
    charge = u * u - m
    if phi is None:
        phi = poisson_array(charge, grid)
    return (
        kinetic_energy(u, h, p.c_w)
        + h * float(np.sum(local_energy_density(u, p)))
        + 0.5 * h * float(np.dot(phi, charge))
    )


def residual_array(u: np.ndarray, phi: np.ndarray, mu: float, h: float, p: ModelParams) -> np.ndarray:
    return -2.0 * p.c_w * laplacian(u, h) + local_potential(u, p) + 2.0 * (phi + mu) * u


# --- public API ----------------------------------------------------------


def potential(u: Field, m: NuclearDensity) -> Field:
    """Zero-mean potential generated by the net charge ``u^2 - m``."""
    grid = require_same_grid(u, m)
    return Field(grid, poisson_array(u.values**2 - m.values, grid))


def energy(u: Field, m: NuclearDensity, params: ModelParams) -> float:
    """Physical energy ``C_W int u'^2 + C_TF int |u|^(10/3) - C_D int |u|^(8/3) + 1/2 int phi_u (u^2 - m)``.

    ``phi_u`` is the zero-mean Poisson potential of ``u^2 - m``.
    """
    grid = require_same_grid(u, m)
    return energy_array(u.values, m.values, grid, params)


def charge_violation(u: Field, m: NuclearDensity) -> float:
    """``Q = int (u^2 - m)``."""
    grid = require_same_grid(u, m)
    return grid.spacing * float(np.sum(u.values**2 - m.values))


def augmented_lagrangian(
    u: Field, m: NuclearDensity, phi: Field, alm: AlmState, params: ModelParams
) -> float:
    """Augmented Lagrangian at a frozen potential ``phi``.

    ``L = C_W int u'^2 + C_TF int |u|^(10/3) - C_D int |u|^(8/3)
    + int (u^2 - m) phi + mu Q + Q^2 / (2 c)`` with ``Q = int (u^2 - m)``.
    """
    grid = require_same_grid(u, m, phi)
    if not alm.c > 0:
        raise ValueError("penalty parameter must be positive")
    h = grid.spacing
    uv = u.values
    charge = uv * uv - m.values
    q = h * float(np.sum(charge))
    return (
        kinetic_energy(uv, h, params.c_w)
        + h * float(np.sum(local_energy_density(uv, params)))
        + h * float(np.dot(charge, phi.values))
        + alm.mu * q
        + q * q / (2.0 * alm.c)
    )


def grad_augmented_lagrangian(
    u: Field, m: NuclearDensity, phi: Field, alm: AlmState, params: ModelParams
) -> Field:
    """Functional derivative of :func:`augmented_lagrangian` with respect to ``u``.

    ``-2 C_W u'' + 10/3 C_TF |u|^(4/3) u - 8/3 C_D |u|^(2/3) u + 2 phi u
    + 2 mu u + (2 / c) Q u``. Paired with the ``h``-weighted inner product this
    is the exact gradient of the discrete Lagrangian.
    """
    grid = require_same_grid(u, m, phi)
    if not alm.c > 0:
        raise ValueError("penalty parameter must be positive")
    h = grid.spacing
    uv = u.values
    q = h * float(np.sum(uv * uv - m.values))
    g = residual_array(uv, phi.values, alm.mu + q / alm.c, h, params)
    return Field(grid, g)


def el_residual(state: FieldState, mu: float, params: ModelParams) -> Field:
    """Residual of the Euler-Lagrange equation with the multiplier ``mu`` absorbed into ``phi``."""
    grid = state.grid
    return Field(grid, residual_array(state.u.values, state.phi.values, mu, grid.spacing, params))


def el_gauge_offset(state: FieldState, params: ModelParams) -> float:
    """Constant that turns ``state.phi`` into the potential ``phi + mu`` of the Euler-Lagrange equation.

    A solved state fixes its multiplier only through the equation itself;
    this recovers it as the least-squares ``mu`` minimising the residual of
    :func:`el_residual`. Adding a constant to ``state.phi`` shifts the result
    by minus that constant, so ``phi + el_gauge_offset`` is gauge invariant.
    """
    u = state.u.values
    r0 = residual_array(u, state.phi.values, 0.0, state.grid.spacing, params)
    uu = float(np.dot(u, u))
    if uu == 0.0:
        raise ValueError("gauge offset is undefined for u == 0")
    return -float(np.dot(r0, u)) / (2.0 * uu)
