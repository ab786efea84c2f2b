"""Periodic 1D Poisson solve ``-phi'' = 4 pi (rhs - mean(rhs))`` in the zero-mean gauge.

The discrete operator is the circulant three-point stencil of
:func:`tfwlab.grid.second_derivative`, which the discrete Fourier transform
diagonalises exactly; the solve is therefore direct and deterministic.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .grid import Field, Grid1D, _check_finite

FOUR_PI = 4.0 * np.pi


@lru_cache(maxsize=64)
def stencil_eigenvalues(grid: Grid1D) -> np.ndarray:
    """Eigenvalues of ``-second_derivative`` for the real-FFT modes of ``grid``.

    ``lambda_j = (4 / h^2) sin^2(pi j / N)``; entry 0 (the constant mode) is zero.
    """
    n, h = grid.num_points, grid.spacing
    j = np.arange(n // 2 + 1)
    lam = (4.0 / h**2) * np.sin(np.pi * j / n) ** 2
    lam.flags.writeable = False
    return lam


def smallest_nonzero_eigenvalue(grid: Grid1D) -> float:
    return float(stencil_eigenvalues(grid)[1])


def poisson_array(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Array kernel of :func:`solve_periodic_poisson` (no validation, mean discarded)."""
    coeffs = np.fft.rfft(values)
    lam = stencil_eigenvalues(grid)
    coeffs[0] = 0.0
    coeffs[1:] *= FOUR_PI / lam[1:]
    return np.fft.irfft(coeffs, n=grid.num_points)


def solve_periodic_poisson(rhs: Field, return_mean: bool = False):
    """Solve ``-phi'' = 4 pi (rhs - mean(rhs))`` with ``integrate(phi) == 0``.

    A periodic problem is solvable only for zero-mean sources, so the mean of
    ``rhs`` is removed first.

    Args:
        rhs: Source field.
        return_mean: Also return the subtracted mean of ``rhs``.

    Returns:
        The potential as a :class:`Field`, or ``(phi, mean)`` if ``return_mean``.
    """
    _check_finite(rhs.values, "Poisson source")
    phi = Field(rhs.grid, poisson_array(rhs.values, rhs.grid))
    if return_mean:
        return phi, float(np.mean(rhs.values))
    return phi
