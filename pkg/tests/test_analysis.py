import json
import math

import numpy as np
import pytest

from tfwlab.analysis import (
    DefectFields,
    DecayFit,
    RelativeEnergyReport,
    build_report,
    check_charge_neutrality,
    default_truncation_widths,
    defect_energy,
    feasibility,
    fit_decay,
    relative_energy,
    truncated_relative_energy,
    variational_cross_check,
)
from tfwlab.functional import FieldState, ModelParams
from tfwlab.grid import Grid1D
from tfwlab.nuclear import jellium, superpose, uniform_bump, zero_perturbation
from tfwlab.solver import ConvergenceError, SolverOptions, staggered_solve


@pytest.fixture(scope="module")
def zero_case():
    g = Grid1D(3.0, 256)
    m1 = jellium(g, 1.0)
    r1 = staggered_solve(m1, ModelParams())
    nu = zero_perturbation(g)
    return r1, nu, DefectFields.from_results(r1, r1, nu, ModelParams())


def test_zero_perturbation_has_zero_response(zero_case):
    _, _, d = zero_case
    assert d.v.sup_norm() == 0.0
    assert d.phi_d.sup_norm() == 0.0
    assert relative_energy(d, ModelParams()) == 0.0
    assert check_charge_neutrality(d) <= 1e-12


def test_relative_energy_matches_direct_difference(small_bump):
    gamma = relative_energy(small_bump.fields, small_bump.params)
    direct = small_bump.r2.energy - small_bump.r1.energy
    assert gamma == pytest.approx(direct, rel=1e-6)


def test_relative_energy_is_gauge_independent(small_bump):
    c = small_bump
    assert check_charge_neutrality(c.fields) <= 1e-6
    base = relative_energy(c.fields, c.params)
    shifted = DefectFields.from_states(
        FieldState(c.r1.state.u, c.r1.state.phi + 0.7),
        FieldState(c.r2.state.u, c.r2.state.phi + 0.7),
        c.nu,
        c.params,
    )
    assert relative_energy(shifted, c.params) == pytest.approx(base, abs=1e-10 * abs(base))


def test_potential_difference_decays_to_zero(small_bump):
    phi_d = small_bump.fields.phi_d.values
    z = small_bump.grid.coordinates
    far = np.abs(z) > 4.0
    assert np.max(np.abs(phi_d[far])) < 1e-3 * np.max(np.abs(phi_d))


def test_truncation_full_window_is_exact(small_bump):
    d, p = small_bump.fields, small_bump.params
    assert truncated_relative_energy(d, p, d.grid.length) == relative_energy(d, p)


@pytest.mark.parametrize("K", [0.05, 0.01, 10.5])
def test_truncation_window_bounds(small_bump, K):
    with pytest.raises(ValueError):
        truncated_relative_energy(small_bump.fields, small_bump.params, K)


def test_truncation_error_decreases(small_bump):
    d, p = small_bump.fields, small_bump.params
    gamma = relative_energy(d, p)
    errors = [abs(gamma - truncated_relative_energy(d, p, K)) for K in (1.05, 2.05, 3.05, 4.05, 5.05)]
    assert all(b < a for a, b in zip(errors, errors[1:]))


def test_default_truncation_widths():
    ks = default_truncation_widths(0.05, 20.0)
    assert len(ks) == 12 and ks[0] == pytest.approx(1.05) and ks[-1] == pytest.approx(12.05)
    short = default_truncation_widths(0.5, 4.0)
    assert short[-1] == pytest.approx(4.0) and all(k > 0.5 for k in short)


def test_neutrality_flags_unconverged_state(small_bump):
    c = small_bump
    rough = staggered_solve(c.m2, c.params, SolverOptions(max_outer=2))
    assert not rough.converged
    d = DefectFields.from_states(c.r1.state, rough.state, c.nu, c.params)
    assert check_charge_neutrality(d) > 1e-6
    with pytest.raises(ConvergenceError):
        DefectFields.from_results(c.r1, rough, c.nu, c.params)


def test_fit_recovers_synthetic_exponential():
    g = Grid1D(10.0, 2048)
    fit = fit_decay(g.sample(lambda z: 3 * np.exp(-2 * np.abs(z))), 0.0)
    assert fit.k1 == pytest.approx(3.0, rel=0.01)
    assert fit.k2 == pytest.approx(2.0, rel=0.01)
    assert fit.correlation >= 0.999


def test_fit_measures_distance_from_core_edge():
    g = Grid1D(10.0, 2048)
    fit = fit_decay(g.sample(lambda z: 3 * np.exp(-2 * (np.abs(z) - 0.5))), 0.5)
    assert fit.k1 == pytest.approx(3.0, rel=1e-6)
    assert fit.fit_window[0] == pytest.approx(0.5 + g.spacing)
    assert fit.fit_window[1] == pytest.approx(8.0)


def test_fit_distinguishes_algebraic_decay():
    g = Grid1D(10.0, 2048)
    exp_fit = fit_decay(g.sample(lambda z: 3 * np.exp(-2 * np.abs(z))), 0.0)
    alg_fit = fit_decay(g.sample(lambda z: 1 / (1 + z * z)), 0.0)
    assert exp_fit.correlation >= 0.999
    assert alg_fit.correlation < 0.98


def test_fit_single_side():
    g = Grid1D(10.0, 2048)
    f = g.sample(lambda z: np.where(z > 0, np.exp(-z), np.exp(3 * z)))
    assert fit_decay(f, 0.0, side="right").k2 == pytest.approx(1.0, rel=1e-6)
    assert fit_decay(f, 0.0, side="left").k2 == pytest.approx(3.0, rel=1e-6)


def test_fit_with_derivatives_handles_oscillating_tail():
    g = Grid1D(10.0, 4096)
    f = g.sample(lambda z: np.exp(-np.abs(z)) * np.cos(2 * z))
    plain = fit_decay(f, 0.0)
    with_derivs = fit_decay(f, 0.0, derivatives=2)
    assert with_derivs.correlation > plain.correlation
    assert with_derivs.k2 == pytest.approx(1.0, rel=0.05)


def test_fit_window_errors():
    g = Grid1D(1.0, 8)
    with pytest.raises(ValueError, match="fewer than 10"):
        fit_decay(g.constant(1.0), 0.0)
    g = Grid1D(10.0, 256)
    with pytest.raises(ValueError, match="noise floor"):
        fit_decay(g.zeros(), 0.0)
    with pytest.raises(ValueError):
        fit_decay(g.constant(1.0), 0.0, side="up")


def test_variational_zero_perturbation(zero_case):
    r1, nu, _ = zero_case
    value, w = variational_cross_check(r1.state, nu, ModelParams())
    assert value == 0.0
    assert w.sup_norm() == 0.0


def test_variational_minimum_matches_response(small_bump):
    c = small_bump
    value, w = variational_cross_check(c.r1.state, c.nu, c.params)
    gamma = relative_energy(c.fields, c.params)
    assert value == pytest.approx(gamma, rel=1e-4)
    assert np.max(np.abs(w.values - c.fields.v.values)) <= 1e-4 * c.fields.v.sup_norm()
    assert feasibility(w, c.r1.state, c.nu) <= 1e-8
    assert defect_energy(c.fields.v, c.r1.state, c.nu, c.params) == pytest.approx(gamma, rel=1e-6)


def test_variational_minimiser_is_locally_optimal(small_bump):
    c = small_bump
    _, w = variational_cross_check(c.r1.state, c.nu, c.params)
    u1 = c.r1.state.u.values
    target = float(np.sum(u1**2 + c.nu.values))
    best = defect_energy(w, c.r1.state, c.nu, c.params)
    rng = np.random.default_rng(11)
    g = c.grid
    for _ in range(20):
        trial = u1 + w.values + 1e-3 * rng.normal(size=g.num_points)
        trial *= math.sqrt(target / float(np.sum(trial**2)))
        w_trial = g.field(trial - u1)
        assert feasibility(w_trial, c.r1.state, c.nu) <= 1e-10
        assert defect_energy(w_trial, c.r1.state, c.nu, c.params) >= best


def test_report_serialisation(tmp_path, small_bump):
    c = small_bump
    report = build_report(c.fields, c.params, [1.05, 2.05, 3.05], boundary_buffer=1.0)
    doc = json.loads(report.to_json())
    assert set(doc) == {"gamma", "truncated", "neutrality_defect", "decay_u", "decay_phi", "variational_value"}
    assert doc["variational_value"] is None
    assert doc["truncated"][0][0] == 1.05
    report.write_truncation_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "K,gamma_K" and len(lines) == 4
    c.fields.write_csv(tmp_path / "d.csv", c.m1)
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "z,m1,m2,u1,u2,phi1,phi2,v,phi_d"


def test_report_rejects_unsorted_truncation():
    fit = DecayFit(1.0, 1.0, (0.0, 1.0), 1.0)
    with pytest.raises(ValueError):
        RelativeEnergyReport(1.0, ((2.0, 1.0), (1.0, 1.0)), 0.0, fit, fit)


def test_from_states_requires_perturbation(small_bump):
    c = small_bump
    with pytest.raises(ValueError):
        DefectFields.from_states(c.r1.state, c.r2.state, c.m1, c.params)


def test_superposed_bump_uses_perturbation_support():
    g = Grid1D(5.0, 256)
    nu = uniform_bump(g, 1.0, 0.4, 2.0)
    assert superpose(jellium(g, 1.0), nu).defect_half_width == nu.defect_half_width
