import csv
import json
import subprocess
import sys

import pytest

from tfwlab.cli import PRESETS, build_config, main

SMALL_BUMP = {
    "grid": {"half_width": 4.0, "num_points": 800},
    "nuclear": {
        "kind": "jellium",
        "rho0": 1.0,
        "perturbation": {"kind": "bump", "center": 0.0, "width": 0.05, "height": 10.0},
    },
}


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_jellium_preset(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--preset", "jellium", "--out", str(out)]) == 0
    result = json.loads((out / "result.json").read_text())
    assert result["converged"] is True
    assert result["energy_per_length"] == pytest.approx(3.2, abs=1e-6)
    rows = read_csv(out / "fields.csv")
    assert rows[0] == ["z", "m", "u", "phi"]
    assert len(rows) == 1 + PRESETS["jellium"]["grid"]["num_points"]
    assert read_csv(out / "trace.csv")[0] == ["outer_iter", "energy", "Q", "mu", "c", "inner_steps", "el_residual"]
    assert (out / "metadata.json").exists()


def test_solve_is_byte_identical_across_runs(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"grid": {"half_width": 2.0, "num_points": 400},
                                              "nuclear": {"kind": "comb", "sigma": 0.1}})
    for name in ("a", "b"):
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for name in ("fields.csv", "trace.csv", "result.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_unknown_key_exits_2_and_names_it(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"grid": {"half_width": 2.0, "num_points": 64, "spacing": 1},
                                              "nuclear": {"kind": "jellium"}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "'spacing'" in capsys.readouterr().err


def test_unknown_solver_option_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"grid": {"half_width": 2.0, "num_points": 64},
                                              "nuclear": {"kind": "jellium"}, "solver": {"tolerance": 1}})
    assert main(["solve", "--config", cfg]) == 2
    assert "'tolerance'" in capsys.readouterr().err


@pytest.mark.parametrize("doc", [
    {"grid": {"half_width": 2.0, "num_points": 63}, "nuclear": {"kind": "jellium"}},
    {"grid": {"half_width": 2.0, "num_points": 64}, "nuclear": {"kind": "crystal"}},
    {"grid": {"half_width": 2.0, "num_points": 64}, "nuclear": {"kind": "jellium", "rho0": -1}},
    {"grid": {"half_width": 2.0, "num_points": 64}, "nuclear": {"kind": "jellium"}, "model": {"preset": "lda"}},
    {"grid": {"half_width": 2.0, "num_points": 64}, "nuclear": {"kind": "jellium"}, "solver": {"kappa": 2}},
    {"grid": {"half_width": 2.0, "num_points": 64},
     "nuclear": {"kind": "jellium", "perturbation": {"kind": "bump", "width": 0.5, "height": -2}}},
])
def test_invalid_inputs_exit_2(tmp_path, doc):
    assert main(["solve", "--config", write_config(tmp_path / "c.json", doc)]) == 2


def test_missing_config_exits_2():
    assert main(["solve"]) == 2


def test_non_convergence_exits_1_with_trace(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"grid": {"half_width": 2.0, "num_points": 400},
                                              "nuclear": {"kind": "comb", "sigma": 0.1},
                                              "solver": {"max_outer": 2}})
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 1
    assert len(read_csv(out / "trace.csv")) == 3
    assert json.loads((out / "result.json").read_text())["converged"] is False


def test_relative_energy_outputs(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMALL_BUMP)
    out = tmp_path / "o"
    assert main(["relative-energy", "--config", cfg, "--out", str(out), "--variational"]) == 0
    report = json.loads((out / "report.json").read_text())
    summary = json.loads((out / "summary.json").read_text())
    assert set(report) == {"gamma", "truncated", "neutrality_defect", "decay_u", "decay_phi", "variational_value"}
    assert report["gamma"] == pytest.approx(summary["direct_difference"], rel=1e-6)
    assert summary["variational_agreement_ratio"] == pytest.approx(1.0, abs=1e-4)
    assert read_csv(out / "defect.csv")[0] == ["z", "m1", "m2", "u1", "u2", "phi1", "phi2", "v", "phi_d"]
    assert read_csv(out / "truncation.csv")[0] == ["K", "gamma_K"]


def test_relative_energy_of_zero_perturbation(tmp_path):
    doc = {"grid": {"half_width": 2.0, "num_points": 256},
           "nuclear": {"kind": "jellium", "perturbation": {"kind": "zero"}},
           "analysis": {"truncation_widths": [1.0, 2.0], "boundary_buffer": 0.4}}
    out = tmp_path / "o"
    assert main(["relative-energy", "--config", write_config(tmp_path / "c.json", doc), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert abs(report["gamma"]) <= 1e-10
    # a zero response leaves nothing to fit
    assert report["decay_u"] is None and report["decay_phi"] is None


def test_perturbed_config_must_match_grid(tmp_path):
    ref = write_config(tmp_path / "ref.json", {"grid": {"half_width": 4.0, "num_points": 800},
                                                "nuclear": {"kind": "jellium"}})
    pert = write_config(tmp_path / "p.json", {"grid": {"half_width": 4.0, "num_points": 400},
                                               "nuclear": {"kind": "bump", "width": 0.05, "height": 10.0}})
    assert main(["relative-energy", "--config", ref, "--perturbed", pert]) == 2


def test_perturbed_config_is_applied(tmp_path):
    ref = write_config(tmp_path / "ref.json", {"grid": {"half_width": 4.0, "num_points": 800},
                                                "nuclear": {"kind": "jellium"}})
    pert = write_config(tmp_path / "p.json", {"grid": {"half_width": 4.0, "num_points": 800},
                                               "nuclear": {"kind": "bump", "width": 0.05, "height": 10.0}})
    out = tmp_path / "o"
    assert main(["decay-study", "--config", ref, "--perturbed", pert, "--out", str(out)]) == 0
    decay = json.loads((out / "decay.json").read_text())
    for name in ("v", "phi_d"):
        assert {"both", "left", "right"} == set(decay[name])
        assert decay[name]["both"]["k2"] > 0


def test_convergence_study(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMALL_BUMP)
    out = tmp_path / "o"
    assert main(["convergence-study", "--config", cfg, "--sizes", "1", "2", "3", "4", "--out", str(out)]) == 0
    rows = read_csv(out / "convergence.csv")
    assert rows[0] == ["L", "gamma_L", "u_diff"]
    assert len(rows) == 5
    assert float(rows[-1][2]) == 0.0
    summary = json.loads((out / "convergence.json").read_text())
    steps = summary["gamma_successive_differences"]
    assert all(b < a for a, b in zip(steps, steps[1:]))


def test_convergence_study_needs_three_sizes(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMALL_BUMP)
    assert main(["convergence-study", "--config", cfg, "--sizes", "2", "--out", str(tmp_path / "o")]) == 2
    assert main(["convergence-study", "--config", cfg, "--sizes", "3", "2", "4", "--out", str(tmp_path / "o")]) == 2


def test_convergence_study_rejects_incompatible_size(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMALL_BUMP)
    assert main(["convergence-study", "--config", cfg, "--sizes", "1", "2", "2.005", "--out", str(tmp_path / "o")]) == 2


def test_uniqueness_probe_command(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"grid": {"half_width": 1.0, "num_points": 200},
                                              "nuclear": {"kind": "comb", "sigma": 0.1}})
    out = tmp_path / "o"
    assert main(["uniqueness-probe", "--config", cfg, "--trials", "2", "--seed", "4", "--out", str(out)]) == 0
    doc = json.loads((out / "uniqueness.json").read_text())
    assert doc["within_tolerance"] is True and doc["seed"] == 4 and doc["model"] == "tfw"
    assert main(["uniqueness-probe", "--config", cfg, "--trials", "1", "--out", str(out)]) == 2


def test_model_override(tmp_path):
    raw = json.loads(json.dumps(PRESETS["jellium"]))
    raw["model"] = {"preset": "tfwd"}
    assert build_config(raw).params.c_d > 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tfwlab", "solve", "--preset", "jellium", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "result.json").exists()
