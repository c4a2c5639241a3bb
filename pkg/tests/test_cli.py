import csv
import json
import subprocess
import sys
import time
from functools import partial

import pytest

from irl_teaching import cli
from irl_teaching.learner import nll_loss_and_gradient
from irl_teaching.verification import LEVELS, verify


def write_config(tmp_path, **overrides):
    doc = {
        "environment": {"tasks": [0, 2], "n_lanes": 1},
        "learner": {"eta": 1.0},
        "teachers": [{"kind": "bbox", "B": 2, "k": 2}, {"kind": "agnostic"}],
        "lambda_star": {"opt_tol": 1e-3},
        "pool": {"K": 3, "horizon": 10},
        "T": 3,
        "seeds": [1],
        "output_dir": None,
    }
    doc.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def corrupted_gradient(model, mdp, demo, lam, tol=1e-10):
    loss, grad = nll_loss_and_gradient(model, mdp, demo, lam, tol=tol)
    return loss, 1.1 * grad


def test_verify_quick_passes_fast(capsys):
    start = time.perf_counter()
    assert cli.main(["verify", "--verify-level", "quick"]) == 0
    assert time.perf_counter() - start < 60
    out = capsys.readouterr().out
    assert "all 6 checks passed" in out and "FAIL" not in out


def test_verify_negative_control_names_the_failure(monkeypatch, capsys):
    monkeypatch.setattr(cli, "verify", partial(verify, grad_fn=corrupted_gradient))
    assert cli.main(["verify"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  likelihood gradient" in out
    assert "FAILED likelihood gradient" in out


def test_full_level_contains_the_200_pair_sweep():
    assert LEVELS["full"][2] == 200


def test_console_script_verify_exit_status():
    proc = subprocess.run([sys.executable, "-m", "irl_teaching", "verify"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr


def test_run_and_export(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seeds", "1,2"]) == 0
    assert (out / "bbox" / "seed_2.csv").is_file()
    original = (out / "bbox" / "aggregate.csv").read_bytes()
    (out / "bbox" / "aggregate.csv").unlink()
    assert cli.main(["export", str(out), "--format", "csv"]) == 0
    assert (out / "bbox" / "aggregate.csv").read_bytes() == original
    assert cli.main(["export", str(out), "--format", "svg", "--out", str(tmp_path / "charts")]) == 0
    svg = (tmp_path / "charts" / "bbox" / "curriculum.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_bbox_curriculum_export_is_blockwise(tmp_path):
    cfg = write_config(tmp_path, teachers=[{"kind": "bbox", "B": 5, "k": 2}], T=15)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "bbox" / "seed_1.csv") as fh:
        tasks = [int(row["sel_task"]) for row in csv.DictReader(fh)]
    for block in range(0, 15, 5):
        assert len(set(tasks[block:block + 5])) == 1


def test_export_of_empty_directory(tmp_path, capsys):
    assert cli.main(["export", str(tmp_path)]) == 1


def test_gen_env_then_run_from_file_matches_generator(tmp_path):
    cfg = write_config(tmp_path, output_dir=str(tmp_path / "gen"))
    mdp_path = tmp_path / "mdp.json"
    assert cli.main(["gen-env", "--config", str(cfg), "--out", str(mdp_path)]) == 0
    doc = json.loads(cfg.read_text())
    doc["environment"] = {"mdp_file": str(mdp_path)}
    doc["output_dir"] = str(tmp_path / "file")
    (tmp_path / "file.json").write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert cli.main(["run", "--config", str(tmp_path / "file.json")]) == 0
    for teacher in ("bbox", "agnostic"):
        a = (tmp_path / "gen" / teacher / "seed_1.csv").read_bytes()
        b = (tmp_path / "file" / teacher / "seed_1.csv").read_bytes()
        assert a == b


def test_lambda_star_command(tmp_path, capsys):
    cfg = write_config(tmp_path)
    target = tmp_path / "star.json"
    assert cli.main(["lambda-star", "--config", str(cfg), "--out", str(target)]) == 0
    result = json.loads(target.read_text())
    assert result[0]["residual"] < 1e-3 and len(result[0]["lambda_star"]) == 8


def test_print_schema(capsys):
    assert cli.main(["--print-schema"]) == 0
    assert "properties" in json.loads(capsys.readouterr().out)


def test_bad_seeds_rejected():
    with pytest.raises(SystemExit):
        cli.main(["run", "--seeds", "1,x"])


def test_bad_config_exits_with_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"teachers": [{"kind": "oracle"}]}))
    assert cli.main(["run", "--config", str(path)]) == 2
    assert "error" in capsys.readouterr().err


def test_no_command_prints_help(capsys):
    assert cli.main([]) == 2
