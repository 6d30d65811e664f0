import json
import subprocess
import sys

import pytest

from sggadjust.cli import main

SMALL = {
    "synth": {"n_scenes": 40},
    "train": {"epochs": 1, "e_dim": 8, "n_heads": 2, "adjust_mode": "softplus"},
    "base_epochs": 20,
}


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """Run the stage-by-stage chain once; every test inspects the outputs."""
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "config.json"
    cfg.write_text(json.dumps(SMALL))
    common = ["--config", str(cfg), "--seed", "2", "--quiet"]
    p = {k: str(d / v) for k, v in {
        "data": "data.json", "split": "split.json", "dist": "dist.json", "base": "base.json",
        "vectors": "vectors.txt", "pairs": "pairs.json", "dist_cam": "dist_cam.json", "cam": "cam.json",
        "report": "report.json", "tensor": "tensor.json",
    }.items()}
    steps = [
        ["gen-data", "--out", p["data"]],
        ["split", "--data", p["data"], "--out", p["split"]],
        ["extract-dist", "--data", p["data"], "--split", p["split"], "--out", p["dist"]],
        ["train-base", "--data", p["data"], "--split", p["split"], "--out", p["base"]],
        ["gen-vectors", "--data", p["data"], "--out", p["vectors"]],
        ["infer-pairs", "--data", p["data"], "--split", p["split"], "--vectors", p["vectors"],
         "--dist", p["dist"], "--dist-out", p["dist_cam"], "--out", p["pairs"]],
        ["train-cam", "--data", p["data"], "--split", p["split"], "--base", p["base"],
         "--dist", p["dist_cam"], "--out", p["cam"]],
        ["export-adjust", "--cam", p["cam"], "--dist", p["dist_cam"], "--out", p["tensor"]],
        ["eval", "--data", p["data"], "--split", p["split"], "--base", p["base"], "--cam", p["cam"],
         "--dist", p["dist_cam"], "--vanilla", "--pairs", p["pairs"], "--out", p["report"]],
    ]
    codes = [main(common + step) for step in steps]
    return d, p, codes, common


def test_every_stage_succeeds(chain):
    _, p, codes, _ = chain
    assert codes == [0] * len(codes)
    report = json.loads(open(p["report"]).read())
    assert [s["label"] for s in report["systems"]] == ["base", "vanilla", "camodule"]
    assert report["systems"][2]["zpR"] is not None
    assert json.loads(open(p["tensor"]).read())["shape"] == [20, 10, 20]


def test_artifacts_carry_config_hash(chain):
    _, p, _, _ = chain
    hashes = {json.loads(open(p[k]).read())["config_hash"] for k in ("split", "dist", "base", "cam", "pairs")}
    assert len(hashes) == 1


def test_report_subcommand_prints_table(chain, capsys):
    _, p, _, _ = chain
    assert main(["report", "--report", p["report"]]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[:2] == ["system", "R@20"]
    assert len(out.splitlines()) == 4


def test_global_flags_after_subcommand(chain, tmp_path):
    _, _, _, common = chain
    assert main(["gen-data", "--out", str(tmp_path / "x.json")] + common) == 0
    assert json.loads((tmp_path / "x.json").read_text())["seed"] == 2


def test_mixed_config_artifacts_are_rejected(chain, tmp_path, capsys):
    d, p, _, common = chain
    other = d / "other.json"
    other.write_text(json.dumps(dict(SMALL, base_epochs=21)))
    alt_base = str(tmp_path / "base2.json")
    assert main(["--config", str(other), "--seed", "2", "--quiet", "train-base", "--data", p["data"],
                 "--split", p["split"], "--out", alt_base]) == 0
    code = main(common + ["eval", "--data", p["data"], "--split", p["split"], "--base", alt_base])
    assert code == 1
    assert "different configurations" in capsys.readouterr().err


def test_usage_and_validation_errors_exit_1(chain, tmp_path):
    _, p, _, common = chain
    assert main(["no-such-command"]) == 1
    assert main(common + ["eval", "--data", p["data"], "--split", p["split"]]) == 1
    assert main(common + ["split", "--data", str(tmp_path / "missing.json"), "--out", str(tmp_path / "s")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"objects": ["a", "b"], "predicates": ["x"], "scenes": [{"id": "s", "triplets": [[0, 1, 1]]}]}')
    assert main(common + ["split", "--data", str(bad), "--out", str(tmp_path / "s")]) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text('{"seeed": 1}')
    assert main(["--config", str(cfg), "gen-data", "--out", str(tmp_path / "d.json")]) == 1


def test_ablate_validates_axis_before_compute(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(SMALL, synthetic_vectors=False)))
    assert main(["--config", str(cfg), "--quiet", "ablate", "--axis", "beta"]) == 1
    assert main(["--quiet", "ablate", "--axis", "gamma"]) == 1


def test_runtime_failure_exits_2(chain, tmp_path):
    _, p, _, common = chain
    tiny = tmp_path / "tiny.json"
    tiny.write_text('{"objects": ["a", "b"], "predicates": ["x"], "scenes": [{"id": "s", "triplets": [[0, 0, 1]]}]}')
    # one scene cannot be split; splitting is a runtime step on valid input
    assert main(common + ["split", "--data", str(tiny), "--out", str(tmp_path / "s.json")]) == 2


def test_run_and_ablate_end_to_end(chain, tmp_path, capsys):
    d, _, _, _ = chain
    cfg = str(d / "config.json")
    assert main(["--config", cfg, "--out-dir", str(tmp_path), "run"]) == 0
    out = capsys.readouterr().out
    assert "camodule" in out and "artifacts in" in out
    (run_dir,) = list(tmp_path.iterdir())
    assert (run_dir / "report.json").exists()
    sweep = tmp_path / "sweep.json"
    assert main(["--config", cfg, "--quiet", "ablate", "--axis", "pair_opt", "--out", str(sweep)]) == 0
    assert [r["value"] for r in json.loads(sweep.read_text())["rows"]] == [True, False]


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "sggadjust.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("gen-data", "split", "extract-dist", "train-base", "train-cam", "infer-pairs", "eval",
                 "ablate", "report"):
        assert name in res.stdout
