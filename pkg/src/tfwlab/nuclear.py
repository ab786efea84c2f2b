"""Nuclear charge densities: perfect-crystal references and slab-confined perturbations.

A reference density ``m1`` is nonnegative everywhere. A perturbation ``nu``
may be signed but vanishes identically outside the slab
``|z| <= defect_half_width``; the perturbed crystal is ``m2 = m1 + nu`` and
must again be nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Field, Grid1D, integrate, require_same_grid

# Relative threshold below which Gaussian tails are treated as zero.
TAIL_CUTOFF = 1e-14


@dataclass(frozen=True)
class NuclearDensity:
    """Sampled nuclear density with slab-support metadata.

    Attributes:
        field: Samples of the density on the grid.
        defect_half_width: Half-width of the slab that contains the support of
            a perturbation (the defect core is ``|z| <= defect_half_width``).
            Zero for perfect crystals.
        is_perturbation: True for a perturbation ``nu``; such densities may be
            signed but must vanish outside the slab.
    """

    field: Field
    defect_half_width: float = 0.0
    is_perturbation: bool = False

    def __post_init__(self):
        if self.defect_half_width < 0:
            raise ValueError("defect_half_width must be nonnegative")
        vals = self.field.values
        if self.is_perturbation:
            outside = np.abs(self.grid.coordinates) > self.defect_half_width + 1e-9 * self.grid.spacing
            if np.any(vals[outside] != 0.0):
                i = int(np.flatnonzero(outside & (vals != 0.0))[0])
                raise ValueError(
                    f"perturbation is nonzero at z={self.grid.coordinates[i]:.6g}, "
                    f"outside |z| <= {self.defect_half_width:.6g}"
                )
        elif np.any(vals < 0):
            i = int(np.flatnonzero(vals < 0)[0])
            raise ValueError(f"nuclear density is negative at index {i}: {vals[i]!r}")

    @property
    def grid(self) -> Grid1D:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def total_charge(self) -> float:
        return integrate(self.field)

    @property
    def defect_width(self) -> float:
        """Slab width L0 (twice the half-width)."""
        return 2.0 * self.defect_half_width


def jellium(grid: Grid1D, rho0: float) -> NuclearDensity:
    """Uniform background of density ``rho0 > 0``."""
    if not rho0 > 0:
        raise ValueError(f"jellium density must be positive, got {rho0}")
    return NuclearDensity(grid.constant(rho0))


def uniform_bump(grid: Grid1D, center: float, width: float, height: float) -> NuclearDensity:
    """Perturbation equal to ``height`` on ``[center - width/2, center + width/2]``.

    Grid samples lying on the closed interval are included, so the sampled
    charge differs from ``height * width`` by at most one cell.
    """
    if not width > 0:
        raise ValueError(f"bump width must be positive, got {width}")
    lo, hi = center - width / 2, center + width / 2
    L = grid.half_width
    if lo <= -L or hi >= L:
        raise ValueError(f"bump [{lo:.6g}, {hi:.6g}] does not fit strictly inside [-{L}, {L})")
    z = grid.coordinates
    inside = np.abs(z - center) <= width / 2 + 1e-9 * grid.spacing
    vals = np.where(inside, float(height), 0.0)
    return NuclearDensity(grid.field(vals), abs(center) + width / 2, is_perturbation=True)


def _gaussian(z: np.ndarray, sigma: float) -> np.ndarray:
    # Normalisation (2 pi sigma^2)^(-1/2) with exponent -(z/sigma)^2, so each
    # profile carries charge 1/sqrt(2).
    return np.exp(-((z / sigma) ** 2)) / math.sqrt(2.0 * math.pi * sigma**2)


def gaussian_comb(grid: Grid1D, sigma: float, period: float = 1.0) -> NuclearDensity:
    """Mollified Dirac comb: Gaussian teeth of width ``sigma`` at multiples of ``period``.

    Teeth with ``|k * period| <= L + 6 sigma`` are summed, which covers the
    periodic images that reach into the cell.
    """
    if not 0 < sigma < period / 4:
        raise ValueError(f"comb requires 0 < sigma < period/4, got sigma={sigma}, period={period}")
    ratio = grid.length / period
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"cell length {grid.length} is not a multiple of period {period}")
    z = grid.coordinates
    kmax = int(math.floor((grid.half_width + 6 * sigma) / period))
    vals = np.zeros(grid.num_points)
    for k in range(-kmax, kmax + 1):
        vals += _gaussian(z - k * period, sigma)
    return NuclearDensity(grid.field(vals))


def gaussian_perturbation(grid: Grid1D, amplitude: float, sigma: float) -> NuclearDensity:
    """Perturbation ``M / sqrt(2 pi sigma^2) * exp(-z^2 / sigma^2)`` centred at 0.

    Samples below ``TAIL_CUTOFF`` times the peak are set to zero so that the
    slab support is exact.
    """
    if not amplitude > 0:
        raise ValueError(f"perturbation amplitude must be positive, got {amplitude}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if math.exp(-((grid.half_width / sigma) ** 2)) >= TAIL_CUTOFF:
        raise ValueError(
            f"Gaussian tail at |z|=L is not negligible (sigma={sigma}, L={grid.half_width})"
        )
    z = grid.coordinates
    vals = amplitude * _gaussian(z, sigma)
    keep = vals > TAIL_CUTOFF * vals.max()
    vals = np.where(keep, vals, 0.0)
    half_width = float(np.max(np.abs(z[keep])))
    return NuclearDensity(grid.field(vals), half_width, is_perturbation=True)


def zero_perturbation(grid: Grid1D) -> NuclearDensity:
    return NuclearDensity(grid.zeros(), 0.0, is_perturbation=True)


def superpose(m1: NuclearDensity, nu: NuclearDensity) -> NuclearDensity:
    """Perturbed density ``m1 + nu``; rejected if negative anywhere."""
    require_same_grid(m1, nu)
    vals = m1.values + nu.values
    if np.any(vals < 0):
        i = int(np.flatnonzero(vals < 0)[0])
        raise ValueError(
            f"m1 + nu is negative at z={m1.grid.coordinates[i]:.6g} ({vals[i]:.6g})"
        )
    return NuclearDensity(m1.grid.field(vals), nu.defect_half_width)


def difference(m2: NuclearDensity, m1: NuclearDensity, defect_half_width: float) -> NuclearDensity:
    """Recover the perturbation ``nu = m2 - m1`` with a declared slab half-width."""
    require_same_grid(m1, m2)
    vals = m2.values - m1.values
    return NuclearDensity(m1.grid.field(vals), defect_half_width, is_perturbation=True)


def load_density(
    path, grid: Grid1D, defect_half_width: float = 0.0, is_perturbation: bool = False
) -> NuclearDensity:
    """Read a two-column ``z m`` text file whose sample points must match ``grid``.

    With ``is_perturbation`` the samples may be signed but must vanish outside
    ``|z| <= defect_half_width``.
    """
    data = np.loadtxt(Path(path), ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (z, m), found {data.shape[1]}")
    z, m = data[:, 0], data[:, 1]
    if z.size != grid.num_points:
        raise ValueError(f"{path}: {z.size} samples but grid has N={grid.num_points}")
    if z.size > 1:
        h = float(np.mean(np.diff(z)))
        if abs(h - grid.spacing) > 1e-9 * grid.spacing:
            raise ValueError(f"{path}: spacing {h:.12g} does not match grid spacing {grid.spacing:.12g}")
    if np.max(np.abs(z - grid.coordinates)) > 1e-6 * grid.spacing:
        raise ValueError(f"{path}: sample positions do not match the grid coordinates")
    return NuclearDensity(grid.field(m), defect_half_width, is_perturbation)
