import csv
import hashlib
import json

import pytest

from semcodec import __version__
from semcodec.cli import main, resolve_config
from semcodec.tuning import STRATEGY_NAMES

SMALL = ["--set", "data.width=64", "--set", "data.height=64", "--set", "data.n_frames=2"]
QUICK = ["--set", "train.iterations=2", "--set", "train.val_every=1", "--set", "train.val_lambdas=[0,20]"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--domain", "A", "--count", "20", "--seed", "1", "--out", str(root / "a"), *SMALL]) == 0
    assert main(["gen-data", "--domain", "B", "--count", "21", "--seed", "7", "--out", str(root / "b"), *SMALL]) == 0
    assert main(["pretrain", "--corpus", str(root / "a"), "--seed", "0", "--out", str(root / "pre.smck"), *QUICK]) == 0
    return root


def test_gen_data_outputs(workdir):
    man = json.loads((workdir / "b" / "manifest.json").read_text())
    assert sum(e["domain"] == "B" for e in man["sequences"]) == 21
    run = json.loads((workdir / "b" / "run_config.json").read_text())
    assert run["version"] == __version__ and run["config"]["data"]["width"] == 64


def test_gen_data_errors(tmp_path, capsys):
    assert main(["gen-data", "--domain", "B", "--count", "0", "--seed", "1", "--out", str(tmp_path / "x")]) == 1
    assert "must be >= 1" in capsys.readouterr().err
    with pytest.raises(SystemExit) as ei:
        main(["gen-data", "--domain", "B", "--count", "3", "--seed", "1"])
    assert ei.value.code == 2


def test_pretrain_outputs_and_determinism(workdir, capsys):
    ck = workdir / "pre.smck"
    assert (workdir / "pre.smck.log.csv").read_text().startswith("iteration,")
    assert (workdir / "pre.smck.config.json").exists()
    out2 = workdir / "pre2.smck"
    assert main(["pretrain", "--corpus", str(workdir / "a"), "--seed", "0", "--out", str(out2), *QUICK]) == 0
    assert sha(out2) in capsys.readouterr().out
    assert sha(out2) == sha(ck)


def test_pretrain_small_corpus(tmp_path, workdir):
    assert main(["gen-data", "--domain", "A", "--count", "5", "--seed", "1", "--out", str(tmp_path / "c"), *SMALL]) == 0
    assert main(["pretrain", "--corpus", str(tmp_path / "c"), "--out", str(tmp_path / "p.smck"), *QUICK]) == 1


def test_tune_pretrained_copies_input(workdir):
    out = workdir / "same.smck"
    args = ["tune", "--ckpt", str(workdir / "pre.smck"), "--strategy", "pretrained", "--corpus", str(workdir / "b")]
    assert main([*args, "--k", "1", "--seed", "0", "--out", str(out), *QUICK]) == 0
    assert sha(out) == sha(workdir / "pre.smck")
    split = json.loads((workdir / "same.smck.split.json").read_text())
    assert len(split["train"]) == 1 and len(split["test"]) == 10


def test_tune_a2c_report(workdir):
    out = workdir / "a2c.smck"
    args = ["tune", "--ckpt", str(workdir / "pre.smck"), "--strategy", "tune-a2c", "--corpus", str(workdir / "b")]
    assert main([*args, "--k", "1", "--seed", "0", "--out", str(out), *QUICK]) == 0
    rep = json.loads((workdir / "a2c.smck.report.json").read_text())
    assert 0 < rep["trainable_fraction"] <= 0.05
    assert sha(out) != sha(workdir / "pre.smck")


def test_tune_unknown_strategy(workdir, capsys):
    args = ["tune", "--ckpt", str(workdir / "pre.smck"), "--strategy", "tune-all", "--corpus", str(workdir / "b")]
    with pytest.raises(SystemExit) as ei:
        main([*args, "--k", "1", "--seed", "0", "--out", str(workdir / "x.smck")])
    assert ei.value.code == 2
    err = capsys.readouterr().err
    assert len(STRATEGY_NAMES) == 8 and all(n in err for n in STRATEGY_NAMES)


def test_anchor_and_bd_self(workdir, capsys):
    csv_path = workdir / "anchor.csv"
    assert main(["anchor", "--corpus", str(workdir / "b"), "--qps", "12,17,22,27,32,37,42", "--out", str(csv_path)]) == 0
    with open(csv_path, newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 7
    out = workdir / "bd.json"
    assert main(["bd", "--anchor", str(csv_path), "--test", str(csv_path), "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == {"bd_rate": 0.0, "bd_quality": 0.0}
    assert (workdir / "bd.json.config.json").exists()


def test_bd_errors(workdir, tmp_path):
    short = tmp_path / "short.csv"
    short.write_text("label,rate_bpp,quality_miou\na,0.1,0.5\nb,0.2,0.6\n")
    assert main(["bd", "--anchor", str(short), "--test", str(short), "--out", str(tmp_path / "o.json")]) == 1
    assert main(["bd", "--anchor", str(tmp_path / "none.csv"), "--test", str(short), "--out", str(tmp_path / "o.json")]) == 1


def test_sweep_and_baseline(workdir):
    ck = str(workdir / "pre.smck")
    out = workdir / "sweep.csv"
    assert main(["sweep", "--ckpt", ck, "--corpus", str(workdir / "b"), "--lambdas", "0,5", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3
    base = workdir / "base.csv"
    args = ["baseline", "--corpus", str(workdir / "b"), "--kinds", "linear,sqrt", "--qps", "22,32", "--out", str(base)]
    assert main(args) == 0
    assert len(base.read_text().splitlines()) == 5
    bad = ["baseline", "--corpus", str(workdir / "b"), "--kinds", "cubic", "--qps", "22", "--out", str(base)]
    assert main(bad) == 1


def test_bench(workdir, tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--corpus", str(workdir / "b"), "--limit", "1", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert {"agent_decision_s_per_frame", "encode_s_per_frame", "decode_s_per_frame"} <= set(rep)
    (tmp_path / "empty").mkdir()
    assert main(["bench", "--corpus", str(tmp_path / "empty")]) == 1


def test_config_errors(tmp_path, workdir):
    args = ["anchor", "--corpus", str(workdir / "b"), "--qps", "22", "--out", str(tmp_path / "a.csv")]
    assert main([*args, "--set", "eval.nope=1"]) == 2
    assert main([*args, "--set", "noequals"]) == 2
    assert main([*args, "--config", str(tmp_path / "missing.json")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eval": {"anchor_mode": "flat"}}))
    assert main([*args, "--config", str(cfg)]) == 0
    run = json.loads((tmp_path / "a.csv.config.json").read_text())
    assert run["config"]["eval"]["anchor_mode"] == "flat"


def test_resolve_config_layers(tmp_path):
    cfg = resolve_config(None, ["train.iterations=7", "data.width=96"])
    assert cfg["train"]["iterations"] == 7 and cfg["data"]["width"] == 96


def test_help_json_and_missing_command(capsys):
    assert main(["--help-json"]) == 0
    table = json.loads(capsys.readouterr().out)
    assert {"gen-data", "pretrain", "tune", "sweep", "anchor", "baseline", "bd", "bench"} <= set(table)
    assert main([]) == 2
