"""Command-line entry point: config validation, outputs, manifest, exit codes."""
import hashlib
import json
from importlib.resources import files

import pytest

from mrcm import cli


def run(tmp_path, cfg, command, name="out", workers=None):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg) if not isinstance(cfg, str) else cfg)
    out = tmp_path / name
    argv = [command, "--config", str(path), "--out-dir", str(out)]
    if workers is not None:
        argv += ["--workers", str(workers)]
    return cli.main(argv), out


SCAN = {"model": {"fixture": "boolean_d1"}, "seed": 7,
        "scan": {"lambda_grid": [0.1, 0.2], "n_runs": 10}}


def test_kernels_d4_matches_bundled_file(tmp_path):
    code, out = run(tmp_path, {"model": "three_mark", "seed": 0}, "kernels")
    assert code == 0
    expected = files("mrcm").joinpath("data/three_mark_D4.csv").read_bytes()
    assert (out / "D_k4.csv").read_bytes() == expected


def test_scan_rows(tmp_path):
    code, out = run(tmp_path, SCAN, "scan")
    assert code == 0
    lines = (out / "scan.csv").read_text().splitlines()
    assert lines[0] == "run_id,seed,lambda,root_mark,size,capped,generations,max_radius"
    assert len(lines) == 21
    assert [int(r.split(",")[0]) for r in lines[1:]] == list(range(20))


def test_manifest_hashes(tmp_path):
    code, out = run(tmp_path, SCAN, "scan")
    man = json.loads((out / "manifest.json").read_text())
    raw = (tmp_path / "out.json").read_bytes()
    assert man["config_sha256"] == hashlib.sha256(raw).hexdigest()
    names = [e["path"] for e in man["outputs"]]
    assert len(names) == len(set(names))
    produced = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert produced == set(names)
    for e in man["outputs"]:
        assert hashlib.sha256((out / e["path"]).read_bytes()).hexdigest() == e["sha256"]


def test_resolved_config_echoes_defaults(tmp_path):
    _, out = run(tmp_path, SCAN, "scan")
    res = json.loads((out / "config_resolved.json").read_text())
    assert res["scan"]["size_cap"] == 100000 and res["scan"]["mode"] == "thinned"


def test_env_threads_do_not_change_output(tmp_path, monkeypatch):
    _, a = run(tmp_path, SCAN, "scan", "a", workers=1)
    monkeypatch.setenv("MRCM_THREADS", "4")
    _, b = run(tmp_path, SCAN, "scan", "b", workers=1)
    assert (a / "scan.csv").read_bytes() == (b / "scan.csv").read_bytes()


@pytest.mark.parametrize("cfg,fragment", [
    ({"model": "three_mark"}, "seed"),
    ({"model": "three_mark", "seed": 1, "seeed": 2}, "did you mean 'seed'"),
    ({"model": {"d": 1, "adjacensy": {}, "marks": {}}, "seed": 1}, "did you mean 'adjacency'"),
    ({"model": "three_mark", "seed": 1, "scan": {"lambda_grid": [0.2, 0.1]}}, "scan.lambda_grid"),
    ({"model": "three_mark", "seed": 1, "scan": {"lambda_grid": [0.1], "n_runz": 3}}, "did you mean 'n_runs'"),
    ({"model": "nope", "seed": 1}, "model"),
])
def test_config_errors(tmp_path, capsys, cfg, fragment):
    code, _ = run(tmp_path, cfg, "scan")
    assert code == 2
    assert fragment in capsys.readouterr().err


def test_bad_weights_report_path(tmp_path, capsys):
    cfg = {"model": {"d": 1, "adjacency": {"kind": "boolean_disc", "r_min": 0.1, "r_max": 1},
                     "marks": {"kind": "finite", "weights": [0.5, 0.6], "values": [0.5, 0.5]}}, "seed": 1}
    assert run(tmp_path, cfg, "kernels")[0] == 2
    assert "model.marks.weights" in capsys.readouterr().err


def test_invalid_json(tmp_path):
    assert run(tmp_path, "{not json", "kernels")[0] == 2


def test_missing_config_file(tmp_path):
    assert cli.main(["kernels", "--config", str(tmp_path / "absent.json")]) == 1


def test_unwritable_out_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "three_mark", "seed": 1}))
    assert cli.main(["kernels", "--config", str(cfg), "--out-dir", str(blocker / "sub")]) == 1


def test_box_refusal_exit_code(tmp_path, capsys):
    cfg = {"model": "boolean_d1", "seed": 1,
           "simulate": {"lambda": 5.0, "mode": "box", "box_half_width": 1e6, "vertex_limit": 1000}}
    assert run(tmp_path, cfg, "simulate")[0] == 4
    assert "limit" in capsys.readouterr().err


def test_box_mode_outputs(tmp_path):
    cfg = {"model": "boolean_d1", "seed": 1,
           "simulate": {"lambda": 0.3, "mode": "box", "box_half_width": 10, "n_runs": 5}}
    code, out = run(tmp_path, cfg, "simulate")
    assert code == 0
    assert len((out / "box.csv").read_text().splitlines()) == 6


def test_validate_flags_violation(tmp_path):
    # a critical estimate just above the grid point forces chi far below its lower bound
    cfg = {"model": "three_mark", "seed": 3,
           "validate": {"lambda_hat": 0.51, "chi_grid": [0.5], "n_runs": 500, "gamma_ladder": []}}
    code, out = run(tmp_path, cfg, "validate")
    assert code == 3
    rep = json.loads((out / "bounds.json").read_text())
    assert rep["any_violated"]
    assert "violated" in (out / "bounds.txt").read_text()


def test_validate_passes_with_honest_inputs(tmp_path):
    cfg = {"model": "three_mark", "seed": 3,
           "validate": {"lambda_hat": 3.0, "chi_grid": [0.5, 1.0], "n_runs": 2000,
                        "gamma_ladder": [0.5, 0.25], "mode": "branching", "size_cap": 2000}}
    code, out = run(tmp_path, cfg, "validate")
    rep = json.loads((out / "bounds.json").read_text())
    assert code == 0, rep
    names = {e["name"].split("[")[0] for e in rep["entries"]}
    assert {"susceptibility_lower_sup", "sup_chi_ratio", "magnetization_lower", "magnetization_upper"} <= names


def test_fit_synthetic_scan(tmp_path):
    cfg = {"model": "three_mark", "seed": 5,
           "fit": {"form": "chi_divergence", "lambda_hat": 1.6649, "mode": "branching",
                   "lambda_grid": [0.4, 0.6, 0.8, 1.0, 1.1, 1.2, 1.3, 1.4], "n_runs": 2000,
                   "exclude_nearest": 0, "max_rel_stderr": 0.5}}
    code, out = run(tmp_path, cfg, "fit")
    assert code == 0
    fit = json.loads((out / "fit.json").read_text())
    assert 0.5 < fit["exponent"] < 1.5


def test_report(tmp_path):
    code, out = run(tmp_path, {"model": "three_mark", "seed": 0}, "report")
    assert code == 0
    text = (out / "report.txt").read_text()
    assert "witness k = 4" in text
    assert json.loads((out / "report.json").read_text())["assumptions"]["d2"]["holds"]
