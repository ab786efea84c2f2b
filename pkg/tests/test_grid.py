import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tfwlab.grid import Field, Grid1D, GridMismatchError, integrate, require_same_grid, second_derivative


def test_coordinates_and_spacing():
    g = Grid1D(5.0, 10)
    assert g.spacing == pytest.approx(1.0)
    np.testing.assert_allclose(g.coordinates, np.arange(-5.0, 5.0))
    assert not g.coordinates.flags.writeable


@pytest.mark.parametrize("half_width, n", [(0.0, 16), (-1.0, 16), (1.0, 7), (1.0, 6), (1.0, 9), (1.0, 8.5)])
def test_invalid_grids_rejected(half_width, n):
    with pytest.raises(ValueError):
        Grid1D(half_width, n)


def test_grids_compare_by_value():
    assert Grid1D(2.0, 16) == Grid1D(2, 16)
    assert hash(Grid1D(2.0, 16)) == hash(Grid1D(2, 16))


def test_field_rejects_wrong_length():
    with pytest.raises(ValueError, match="shape"):
        Field(Grid1D(1.0, 8), np.zeros(9))


def test_field_rejects_nan_and_names_index():
    vals = np.zeros(8)
    vals[3] = np.nan
    with pytest.raises(ValueError, match="index 3"):
        Field(Grid1D(1.0, 8), vals)


def test_field_values_are_copied_and_frozen():
    src = np.ones(8)
    f = Field(Grid1D(1.0, 8), src)
    src[0] = 5.0
    assert f.values[0] == 1.0
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_field_arithmetic_requires_same_grid():
    a = Grid1D(1.0, 8).constant(1.0)
    b = Grid1D(2.0, 8).constant(1.0)
    with pytest.raises(GridMismatchError):
        a + b
    with pytest.raises(GridMismatchError):
        require_same_grid(a, b)


def test_field_arithmetic():
    g = Grid1D(1.0, 8)
    a, b = g.constant(2.0), g.constant(3.0)
    np.testing.assert_array_equal((a * b - 1.0).values, 5.0)
    np.testing.assert_array_equal((1.0 - a).values, -1.0)
    assert (-a).sup_norm() == 2.0


def test_integrate_gaussian_against_quadrature():
    g = Grid1D(6.0, 256)
    exact, _ = quad(lambda z: math.exp(-z * z), -6.0, 6.0)
    assert abs(integrate(g.sample(lambda z: np.exp(-z * z))) - exact) < 1e-12


def test_integrate_constant_is_exact():
    g = Grid1D(3.5, 64)
    assert integrate(g.constant(2.0)) == pytest.approx(14.0, rel=1e-15)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=16, max_size=16),
    st.lists(st.floats(-10, 10), min_size=16, max_size=16),
    st.floats(-5, 5),
)
def test_integrate_is_linear(a, b, s):
    g = Grid1D(2.0, 16)
    fa, fb = g.field(a), g.field(b)
    lhs = integrate(fa + s * fb)
    rhs = integrate(fa) + s * integrate(fb)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_second_derivative_is_second_order():
    errors = []
    for n in (64, 128, 256):
        g = Grid1D(math.pi, n)
        f = g.sample(np.sin)
        errors.append(np.max(np.abs(second_derivative(f).values + np.sin(g.coordinates))))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    np.testing.assert_allclose(orders, 2.0, atol=0.05)


def test_second_derivative_wraps_periodically():
    g = Grid1D(1.0, 8)
    vals = np.zeros(8)
    vals[0] = 1.0
    d2 = second_derivative(g.field(vals)).values * g.spacing**2
    assert d2[0] == -2.0 and d2[1] == 1.0 and d2[-1] == 1.0
