import csv
import json

import pytest
import yaml

from dttrack.cli import main
from dttrack.config import parse_config, resolved_defaults
from dttrack.errors import ConfigError

TINY_SETS = ["model.patch_size=4", "model.embed_dim=8", "model.num_layers=1", "model.num_heads=2",
             "model.template_res=8", "model.search_res=16", "model.head_hidden=8",
             "train.total_epochs=2", "train.steps_per_epoch=1", "train.batch_size=2",
             "data.sources=[[synth,3]]", "data.length=6", "data.canvas=32",
             "bench.per_suite=1", "bench.length=5", "bench.canvas=32"]


def _tiny(*extra):
    out = []
    for s in TINY_SETS:
        out += ["--set", s]
    return out + list(extra)


def _run(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


# ---------------------------------------------------------------------------
# configuration

def test_empty_config_defaults():
    d = resolved_defaults()
    assert (d["lambda_iou"], d["lambda_l1"], d["lambda_align"]) == (2.0, 5.0, 0.1)
    assert d["lambda_transfer"].kind == "step-drop" and d["lambda_transfer"].start == 0.5
    assert d["lambda_transfer"].end == 0.0 and d["lambda_transfer"].drop_fraction == 0.9
    assert (d["mask_ratio"].kind, d["mask_ratio"].start, d["mask_ratio"].end) == ("linear", 0.05, 0.4)
    assert d["lr_drop_fraction"] == 0.8


def test_override_mask_end():
    assert parse_config(overrides={"train.mask_ratio.end": 0.5}).train.mask_ratio.end == 0.5


def test_unknown_key_suggests(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  lamda_align: 0.2\n")
    with pytest.raises(ConfigError) as info:
        parse_config(p)
    assert info.value.path == "train.lamda_align" and "lambda_align" in str(info.value)


def test_type_and_constraint_errors(tmp_path):
    with pytest.raises(ConfigError, match="integer"):
        parse_config(sets=["train.total_epochs=1.5"])
    with pytest.raises(ConfigError):
        parse_config(sets=["train.lambda_align=-1"])
    with pytest.raises(ConfigError):
        parse_config(sets=["precision=f16"])
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.yaml")


def test_json_config_and_env_out(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 4, "model": {"num_layers": 3}}))
    monkeypatch.setenv("DTTRACK_OUT", str(tmp_path / "o"))
    cfg = parse_config(p)
    assert cfg.seed == 4 and cfg.model.num_layers == 3 and cfg.out_dir == str(tmp_path / "o")


# ---------------------------------------------------------------------------
# commands

def test_mask_end_flag_echoed(tmp_path, capsys):
    code, out, _ = _run(capsys, "gen-data", "--out", str(tmp_path), "--mask-end", "0.5", *_tiny())
    assert code == 0
    rec = json.loads(out.strip().splitlines()[-1])
    cfg = yaml.safe_load(open(f"{rec['run_dir']}/config.yaml"))
    assert cfg["train"]["mask_ratio"]["end"] == 0.5
    assert rec["synth"]["sequences"] == 3


def test_config_error_exit_code(tmp_path, capsys):
    code, _, err = _run(capsys, "train", "--out", str(tmp_path), "--set", "train.lamda_align=0.2")
    assert code == 2
    rec = json.loads(err.strip())
    assert rec["status"] == "error" and rec["path"] == "train.lamda_align"


def test_train_twice_same_digest(tmp_path, capsys):
    ids = []
    for k in range(2):
        code, out, _ = _run(capsys, "train", "--run-dir", str(tmp_path / f"r{k}"), "--evaluate", *_tiny())
        assert code == 0
        ids.append(json.loads(out.strip().splitlines()[-1])["checkpoint"])
        assert (tmp_path / f"r{k}" / f"{ids[-1]}.train.csv").exists()
        assert (tmp_path / f"r{k}" / f"{ids[-1]}.eval.csv").exists()
    assert ids[0] == ids[1]
    man = json.loads((tmp_path / "r0" / f"{ids[0]}.manifest.json").read_text())
    assert (tmp_path / "r1" / f"{ids[1]}.params.bin").read_bytes() == \
           (tmp_path / "r0" / f"{ids[0]}.params.bin").read_bytes()
    # the echoed config alone reproduces the run
    code, out, _ = _run(capsys, "train", "--config", str(tmp_path / "r0" / "config.yaml"),
                        "--run-dir", str(tmp_path / "r2"))
    assert code == 0 and json.loads(out.strip().splitlines()[-1])["checkpoint"] == ids[0]
    # eval and DT train against the stored checkpoint
    code, out, _ = _run(capsys, "eval", "--run-dir", str(tmp_path / "e"), *_tiny(),
                        "--checkpoint", str(tmp_path / "r0" / f"{ids[0]}.manifest.json"))
    assert code == 0 and (tmp_path / "e" / "eval.csv").exists()
    code, out, _ = _run(capsys, "train", "--run-dir", str(tmp_path / "dt"), *_tiny(),
                        "--teacher", str(tmp_path / "r0" / f"{ids[0]}.manifest.json"))
    assert code == 0
    dt = json.loads(out.strip().splitlines()[-1])["checkpoint"]
    dman = json.loads((tmp_path / "dt" / f"{dt}.manifest.json").read_text())
    assert dman["teacher_id"] == man["id"]


def test_run_dir_not_overwritten(tmp_path, capsys):
    args = ["gen-data", "--run-dir", str(tmp_path / "g"), *_tiny()]
    assert _run(capsys, *args)[0] == 0
    code, _, err = _run(capsys, *args)
    assert code == 1 and "--force" in json.loads(err.strip())["message"]
    assert _run(capsys, *args, "--force")[0] == 0


def test_failure_leaves_error_record(tmp_path, capsys):
    code, _, _ = _run(capsys, "eval", "--run-dir", str(tmp_path / "e"), *_tiny(),
                      "--checkpoint", str(tmp_path / "nope.manifest.json"))
    assert code == 1
    rec = json.loads((tmp_path / "e" / "error.json").read_text())
    assert rec["status"] == "error" and rec["command"] == "eval"


def test_sweep_rows_and_report(tmp_path, capsys):
    code, out, _ = _run(capsys, "sweep", "--run-dir", str(tmp_path / "s"), "--factor", "layers", "--values", "1,2,3",
                        *_tiny())
    assert code == 0
    with open(tmp_path / "s" / "trend.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["1", "2", "3"] and {r["factor"] for r in rows} == {"layers"}
    code, _, _ = _run(capsys, "sweep", "--run-dir", str(tmp_path / "bad"), "--factor", "layers,data",
                      "--values", "1,2", *_tiny())
    assert code == 2
    code, out, _ = _run(capsys, "report", "--run-dir", str(tmp_path / "rep"), str(tmp_path / "s"))
    assert code == 0
    text = (tmp_path / "rep" / "summary.txt").read_text()
    assert text.count("layers=") == 3 and "eval" in text


def test_plan_run_lineage(tmp_path, capsys):
    stage = {"config": {"patch_size": 4, "embed_dim": 8, "num_layers": 1, "num_heads": 2, "template_res": 8,
                        "search_res": 16, "head_hidden": 8},
             "data": {"sources": [["synth", 3]], "length": 6, "canvas": 32}}
    bigger = {**stage, "data": {"sources": [["synth", 4]], "length": 6, "canvas": 32}}
    wider = {**bigger, "config": {**stage["config"], "embed_dim": 16}}
    cfg = {"plan": [stage, bigger, wider]}
    p = tmp_path / "plan.yaml"
    p.write_text(yaml.safe_dump(cfg))
    code, out, _ = _run(capsys, "plan-run", "--config", str(p), "--run-dir", str(tmp_path / "p"), *_tiny())
    assert code == 0
    assert len(json.loads(out.strip().splitlines()[-1])["lineage"]) == 3
    with open(tmp_path / "p" / "lineage.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["enlarges"] for r in rows] == ["", "data", "model"]
    assert rows[1]["teacher"] == rows[0]["checkpoint"] and rows[2]["teacher"] == rows[1]["checkpoint"]
