import json
import os

import numpy as np
import pytest

from epswitch.cli import emit, emit_json, main

REFERENCE_BLOCK = {
    "omega2": 400.0,
    "delta2": 1400.0,
    "gamma1": 900.0,
    "gamma2": 1500.0,
    "kappa_u1": 1.0,
    "kappa_u2": 1.0,
    "kappa_d1": 1.0,
    "kappa_d2": 1.0,
}


def write_config(tmp_path, body, name="run.json"):
    cfg = tmp_path / name
    cfg.write_text(json.dumps(body))
    return str(cfg)


def scan_config(tmp_path, outdir, points=3):
    return write_config(
        tmp_path,
        {
            "command": "scan",
            "params": REFERENCE_BLOCK,
            "grid": {
                "axis1": {"name": "delta1", "min": -120.0, "max": -40.0, "points": points},
                "axis2": {"name": "omega1", "min": 180.0, "max": 260.0, "points": points},
            },
            "output": str(outdir),
            "format": "csv",
        },
    )


# ---------------------------------------------------------------------------
# config validation (exit code 2)


def test_unknown_top_level_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, {"command": "scan", "bogus": 1})
    assert main(["--config", cfg]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_command_rejected(tmp_path):
    cfg = write_config(tmp_path, {"command": "fly"})
    assert main(["--config", cfg]) == 2


def test_missing_grid_rejected(tmp_path):
    cfg = write_config(
        tmp_path, {"command": "scan", "params": REFERENCE_BLOCK, "output": str(tmp_path)}
    )
    assert main(["--config", cfg]) == 2


def test_bad_params_rejected(tmp_path):
    cfg = write_config(
        tmp_path,
        {"command": "scan", "params": {"gamma1": -5.0}, "output": str(tmp_path)},
    )
    assert main(["--config", cfg]) == 2


def test_unknown_grid_key_rejected(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "command": "scan",
            "params": REFERENCE_BLOCK,
            "grid": {
                "axis1": {"name": "delta1", "min": 0, "max": 1, "points": 2, "step": 1},
                "axis2": {"name": "omega1", "min": 0, "max": 1, "points": 2},
            },
            "output": str(tmp_path),
        },
    )
    assert main(["--config", cfg]) == 2


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json")]) == 2


def test_seed_section_required_when_ambiguous(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "command": "find-ep",
            "params": REFERENCE_BLOCK,
            "search": {
                "order": 2,
                "free": ["delta1", "omega1"],
                "seeds": {"a": [[-80.0, 225.0]], "b": [[-80.0, 295.0]]},
            },
            "output": str(tmp_path / "out"),
        },
    )
    assert main(["--config", cfg]) == 2


# ---------------------------------------------------------------------------
# compute failure (exit code 3)


def test_partial_outputs_removed_on_compute_error(tmp_path):
    # an EP-centered loop with the large radii crosses the real-axis
    # degeneracy lines, so the coefficient tracking fails after the switch
    # report has already been written; the partial output must be removed
    outdir = tmp_path / "out"
    cfg = write_config(
        tmp_path,
        {
            "command": "evolve",
            "params": REFERENCE_BLOCK,
            "path": {
                "center": [-74.9621, 226.8793],
                "radii": [260.0, 125.0],
                "phase_over_pi": 0.39,
                "period_dephasing_units": 15.0,
            },
            "evolve": {"input": 1, "direction": "cw", "coefficient_samples": 64},
            "output": str(outdir),
        },
    )
    assert main(["--config", cfg]) == 3
    assert not (outdir / "switch_report.json").exists()
    assert not (outdir / "manifest.json").exists()


def test_all_starts_failed_is_compute_error(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        {
            "command": "find-ep",
            "params": {"omega2": 400.0, "delta2": 1400.0},
            "search": {
                "order": 3,
                "free": ["delta1", "omega1"],
                "seeds": {"hopeless": [[500.0, 500.0]]},
                "widen": False,
            },
            "output": str(tmp_path / "out"),
        },
    )
    assert main(["--config", cfg]) == 3
    assert "compute error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# scan command


def test_scan_outputs_and_manifest(tmp_path):
    outdir = tmp_path / "out"
    cfg = scan_config(tmp_path, outdir)
    assert main(["--config", cfg]) == 0

    scan_file = outdir / "scan.csv"
    lines = scan_file.read_text().splitlines()
    assert lines[0] == "delta1,omega1,max_cond_num"
    assert len(lines) == 1 + 9  # header + points^2

    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["command"] == "scan"
    assert manifest["outputs"] == [{"path": "scan.csv", "rows": 9}]
    for entry in manifest["outputs"]:
        assert (outdir / entry["path"]).exists()


def test_scan_serial_runs_byte_identical(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cfg_a = scan_config(tmp_path, out_a)
    cfg_b = write_config(
        tmp_path,
        json.loads(open(cfg_a).read()) | {"output": str(out_b)},
        name="run_b.json",
    )
    assert main(["--config", cfg_a]) == 0
    assert main(["--config", cfg_b]) == 0
    assert (out_a / "scan.csv").read_bytes() == (out_b / "scan.csv").read_bytes()


def test_scan_parallel_matches_serial(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", scan_config(tmp_path, out_a)]) == 0
    cfg = write_config(
        tmp_path,
        json.loads(open(scan_config(tmp_path, out_b, points=3)).read())
        | {"output": str(out_b), "parallel": 2},
        name="run_par.json",
    )
    assert main(["--config", cfg]) == 0
    assert (out_a / "scan.csv").read_bytes() == (out_b / "scan.csv").read_bytes()


def test_cli_flag_overrides_output(tmp_path):
    outdir = tmp_path / "flagged"
    cfg = scan_config(tmp_path, tmp_path / "ignored")
    assert main(["--config", cfg, "--output", str(outdir)]) == 0
    assert (outdir / "scan.csv").exists()


def test_env_override_format(tmp_path, monkeypatch):
    outdir = tmp_path / "env"
    monkeypatch.setenv("EPSWITCH_FORMAT", "json")
    monkeypatch.setenv("EPSWITCH_OUTPUT", str(outdir))
    cfg = scan_config(tmp_path, tmp_path / "ignored")
    assert main(["--config", cfg]) == 0
    rows = json.loads((outdir / "scan.json").read_text())
    assert len(rows) == 9
    assert set(rows[0]) == {"delta1", "omega1", "max_cond_num"}


# ---------------------------------------------------------------------------
# surface and loop commands


def test_surface_row_count(tmp_path):
    outdir = tmp_path / "out"
    cfg = write_config(
        tmp_path,
        {
            "command": "surface",
            "params": REFERENCE_BLOCK,
            "grid": {
                "axis1": {"name": "delta1", "min": -100.0, "max": -60.0, "points": 2},
                "axis2": {"name": "omega1", "min": 200.0, "max": 260.0, "points": 2},
            },
            "output": str(outdir),
        },
    )
    assert main(["--config", cfg]) == 0
    lines = (outdir / "surface.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2 * 8


def test_loop_control_identity(tmp_path):
    outdir = tmp_path / "out"
    cfg = write_config(
        tmp_path,
        {
            "command": "loop",
            "params": REFERENCE_BLOCK,
            "path": {
                "center": [425.0, 226.9],
                "radii": [10.0, 3.0],
                "phase_over_pi": 0.39,
                "period_dephasing_units": 15.0,
                "samples": 64,
            },
            "output": str(outdir),
        },
    )
    assert main(["--config", cfg]) == 0
    perm = json.loads((outdir / "permutation.json").read_text())
    assert perm["permutation"] == {str(k): k for k in range(1, 9)}
    assert perm["cycles"] == []
    assert perm["encloses_ep"] is False

    lines = (outdir / "loop.csv").read_text().splitlines()
    assert lines[0] == "t,branch,re_lambda,im_lambda"
    assert (len(lines) - 1) % 8 == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert {e["path"] for e in manifest["outputs"]} == {"loop.csv", "permutation.json"}


# ---------------------------------------------------------------------------
# emit primitives


def test_emit_empty_stream_header_only(tmp_path):
    path = str(tmp_path / "empty.csv")
    n = emit([], ("a", "b"), "csv", path)
    assert n == 0
    assert open(path, "rb").read() == b"a,b\n"


def test_emit_bloch_vector_row(tmp_path):
    path = str(tmp_path / "bloch.csv")
    s = np.arange(1.0, 9.0) / 7.0
    emit([tuple(s)], tuple(f"s{i}" for i in range(1, 9)), "csv", path)
    lines = open(path).read().splitlines()
    assert lines[0] == "s1,s2,s3,s4,s5,s6,s7,s8"
    values = [float(v) for v in lines[1].split(",")]
    assert np.allclose(values, s, rtol=1e-11)
    for v in lines[1].split(","):
        assert len(v.replace("-", "").replace(".", "").replace("e", "").lstrip("0")) <= 13


def test_switch_report_json_round_trip(tmp_path):
    report = {
        "input": 1,
        "direction": "cw",
        "swapped": True,
        "projections_in": np.linspace(0.0, 1.0, 8),
        "output_state": np.eye(3, dtype=complex) / 3.0,
    }
    path = str(tmp_path / "report.json")
    emit_json(report, path)
    parsed = json.loads(open(path).read())
    emit_json(parsed, str(tmp_path / "report2.json"))
    assert open(path).read() == open(str(tmp_path / "report2.json")).read()
    assert parsed["swapped"] is True
    assert parsed["projections_in"][-1] == 1.0
    assert parsed["output_state"]["re"][0][0] == pytest.approx(1.0 / 3.0)


def test_find_ep2_command(tmp_path):
    outdir = tmp_path / "out"
    cfg = write_config(
        tmp_path,
        {
            "command": "find-ep",
            "params": REFERENCE_BLOCK,
            "search": {
                "order": 2,
                "free": ["delta1", "omega1"],
                "seeds": {"quoted": [[-80.0, 225.0]]},
            },
            "output": str(outdir),
            "format": "json",
        },
    )
    assert main(["--config", cfg]) == 0
    result = json.loads((outdir / "ep_candidate.json").read_text())
    assert result["success"] is True
    assert result["classified_order"] == 2
    assert result["cluster_diameter_khz"] < 1e-3
    assert abs(result["location"]["delta1"] + 74.96) < 0.1


def test_evolve_command_switch_report(tmp_path):
    outdir = tmp_path / "out"
    cfg = write_config(
        tmp_path,
        {
            "command": "evolve",
            "params": REFERENCE_BLOCK,
            "path": {
                "center": [-80.0, 295.0],
                "radii": [260.0, 125.0],
                "phase_over_pi": 0.39,
                "period_dephasing_units": 15.0,
            },
            "evolve": {
                "input": 1,
                "direction": "cw",
                "coefficient_samples": 64,
                "trajectory_samples": 128,
            },
            "output": str(outdir),
        },
    )
    assert main(["--config", cfg]) == 0
    rep = json.loads((outdir / "switch_report.json").read_text())
    assert rep["swapped"] is True
    assert len(rep["projections_in"]) == 8
    assert abs(sum(rep["projections_out"]) - 1.0) < 1e-9
    # diagonal-suppressed presentation variant rides along with the raw state
    offdiag = np.array(rep["output_state_offdiagonal"]["re"])
    assert np.allclose(np.diag(offdiag), 0.0)
    raw = np.array(rep["output_state"]["re"])
    assert np.abs(np.diag(raw)).max() > 0.1

    lines = (outdir / "coefficients.csv").read_text().splitlines()
    assert lines[0] == "t,a1_sq,a2_sq,a3_sq,a4_sq,a5_sq,a6_sq,a7_sq,a8_sq"
    assert len(lines) >= 65
    tlines = (outdir / "trajectory.csv").read_text().splitlines()
    assert tlines[0] == "t,s1,s2,s3,s4,s5,s6,s7,s8"
    assert len(tlines) == 1 + 129
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert {e["path"] for e in manifest["outputs"]} == {
        "switch_report.json",
        "coefficients.csv",
        "trajectory.csv",
    }


def test_shipped_example_configs_are_valid():
    import glob

    from epswitch.cli import load_config

    configs = glob.glob(os.path.join(os.path.dirname(__file__), "..", "configs", "*.json"))
    assert len(configs) >= 6
    for c in configs:
        cfg = load_config(c, {"seed_section": "x"})
        assert cfg["command"] in ("scan", "surface", "find-ep", "loop", "evolve")
