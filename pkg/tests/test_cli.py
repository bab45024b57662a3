import csv
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from oranlat.cli import main
from oranlat.forecaster import load_checkpoint, save_checkpoint
from oranlat.kpm import read_csv

from conftest import random_checkpoint

SCEN = {
    "duration_s": 10, "seed": 3,
    "traffic_profile": [
        {"kind": "sinusoid", "mean_mbps": 25, "amplitude_mbps": 15, "period_s": 5},
        {"kind": "bursty", "base_mbps": 0, "burst_mbps": 20, "burst_prob": 0.15},
    ],
}
MODEL = {"units": 4, "lookback": 8, "learning_rate": 0.01, "max_epochs": 3, "patience": 5,
         "batch_size": 32, "seed": 1}


@pytest.fixture
def files(tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps(SCEN))
    model = tmp_path / "model.json"
    model.write_text(json.dumps(MODEL))
    return tmp_path, scen, model


def run(args, capsys):
    code = main([str(a) for a in args])
    return code, capsys.readouterr()


def test_simulate_writes_rows_and_manifest(files, capsys):
    tmp, scen, _ = files
    code, out = run(["simulate", "--config", scen, "--out", tmp / "s"], capsys)
    assert code == 0 and "100 rows" in out.out
    assert len(read_csv(tmp / "s" / "kpm.csv")) == 100
    man = json.loads((tmp / "s" / "manifest.json").read_text())
    assert man["subcommand"] == "simulate" and man["seed"] == 3
    assert "time" not in json.dumps(man).lower()


def test_simulate_is_reproducible_and_seed_overrides(files, capsys):
    tmp, scen, _ = files
    for name, seed in (("a", []), ("b", []), ("c", ["--seed", 99])):
        assert run(["simulate", "--config", scen, "--out", tmp / name, *seed], capsys)[0] == 0
    a = (tmp / "a" / "kpm.csv").read_bytes()
    assert a == (tmp / "b" / "kpm.csv").read_bytes()
    assert a != (tmp / "c" / "kpm.csv").read_bytes()


def test_simulate_bad_scenario_exits_2(files, capsys):
    tmp, _, _ = files
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"duration_s": 0, "seed": 1}))
    code, out = run(["simulate", "--config", bad, "--out", tmp / "s"], capsys)
    assert code == 2 and "duration_s" in out.err
    bad.write_text("{not json")
    assert run(["simulate", "--config", bad, "--out", tmp / "s"], capsys)[0] == 2


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_train_outputs_and_history(files, capsys):
    tmp, scen, model = files
    run(["simulate", "--config", scen, "--out", tmp / "s"], capsys)
    code, out = run(["train", "--data", tmp / "s" / "kpm.csv", "--config", model,
                     "--out", tmp / "t", "--quiet"], capsys)
    assert code == 0
    assert re.search(r"below 0\.04: (yes|no)", out.out)
    for name in ("model.ckpt", "history.csv", "scaler.json", "manifest.json", "train_summary.json"):
        assert (tmp / "t" / name).exists()
    hist = list(csv.DictReader(open(tmp / "t" / "history.csv")))
    summary = json.loads((tmp / "t" / "train_summary.json").read_text())
    assert len(hist) == summary["epochs_run"]
    assert summary["best_val_loss"] == min(float(h["val_loss"]) for h in hist)
    ckpt = load_checkpoint(tmp / "t" / "model.ckpt")
    assert ckpt.config.units == 4 and ckpt.best_val_loss == summary["best_val_loss"]


def test_train_json_summary(files, capsys):
    tmp, scen, model = files
    run(["simulate", "--config", scen, "--out", tmp / "s"], capsys)
    code, out = run(["train", "--data", tmp / "s" / "kpm.csv", "--config", model,
                     "--out", tmp / "t", "--quiet", "--json-summary", "--max-epochs", "1"], capsys)
    data = json.loads(out.out)
    assert code == 0 and data["epochs_run"] == 1 and isinstance(data["below_target"], bool)


def test_train_too_small_exits_2_naming_lookback(files, capsys):
    tmp, _, _ = files
    small = tmp / "small.json"
    small.write_text(json.dumps({"duration_s": 5, "seed": 1}))
    run(["simulate", "--config", small, "--out", tmp / "s"], capsys)
    code, out = run(["train", "--data", tmp / "s" / "kpm.csv", "--out", tmp / "t"], capsys)
    assert code == 2 and "lookback" in out.err


def test_train_divergence_exits_3(files, capsys):
    tmp, scen, _ = files
    run(["simulate", "--config", scen, "--out", tmp / "s"], capsys)
    wild = tmp / "wild.json"
    wild.write_text(json.dumps({**MODEL, "learning_rate": 1e300, "max_epochs": 5}))
    code, out = run(["train", "--data", tmp / "s" / "kpm.csv", "--config", wild,
                     "--out", tmp / "t", "--quiet"], capsys)
    assert code == 3 and "numerical" in out.err


def test_gradcheck_pass_and_corrupt(tmp_path, capsys):
    code, out = run(["gradcheck", "--out", tmp_path], capsys)
    assert code == 0 and "PASS" in out.out
    names = [line.split()[0] for line in out.out.splitlines() if "max rel err" in line]
    assert names == ["W_fwd", "U_fwd", "b_fwd", "W_bwd", "U_bwd", "b_bwd", "w_dense", "b_dense"]
    code, out = run(["gradcheck", "--corrupt", "b_bwd"], capsys)
    assert code == 1 and "worst parameter b_bwd" in out.out


def test_gradcheck_hook_is_hidden(capsys):
    with pytest.raises(SystemExit):
        main(["gradcheck", "--help"])
    assert "--corrupt" not in capsys.readouterr().out


@pytest.fixture
def trained(files):
    tmp, scen, _ = files
    ckpt = random_checkpoint(lookback=8)
    save_checkpoint(ckpt, tmp / "m.ckpt")
    return tmp, scen, tmp / "m.ckpt"


def test_run_end_to_end_and_plot(trained, capsys):
    tmp, scen, ckpt = trained
    code, _ = run(["run", "--config", scen, "--checkpoint", ckpt, "--out", tmp / "r",
                   "--no-pacing", "--port", 0], capsys)
    assert code == 0
    rows = list(csv.DictReader(open(tmp / "r" / "forecast_log.csv")))
    assert len(rows) == 100 - 8
    summ = json.loads((tmp / "r" / "summary.json").read_text())
    err = np.array([float(r["predicted_latency_ms"]) - float(r["actual_latency_ms"]) for r in rows])
    assert abs(summ["mse_ms"] - np.mean(err**2)) < 1e-9
    assert abs(summ["mae_ms"] - np.mean(np.abs(err))) < 1e-9

    code, out = run(["plot", "--log", tmp / "r" / "forecast_log.csv", "--out", tmp / "p"], capsys)
    assert code == 0
    tidy = list(csv.reader(open(tmp / "p" / "plot.csv")))
    assert tidy[0] == ["ts_ms", "actual_latency_ms", "predicted_latency_ms"]
    assert len(tidy) - 1 == len(rows)
    svg = (tmp / "p" / "plot.svg").read_text()
    assert svg.count("<polyline") == 2 and "<script" not in svg and "href" not in svg


def test_run_twice_is_bitwise_identical(trained, capsys):
    tmp, scen, ckpt = trained
    for name in ("a", "b"):
        assert run(["run", "--config", scen, "--checkpoint", ckpt, "--out", tmp / name,
                    "--no-pacing", "--port", 0], capsys)[0] == 0
    for f in ("forecast_log.csv", "summary.json"):
        assert (tmp / "a" / f).read_bytes() == (tmp / "b" / f).read_bytes()


def test_run_port_in_use_exits_2(trained, capsys):
    import socket
    tmp, scen, ckpt = trained
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        code, out = run(["run", "--config", scen, "--checkpoint", ckpt, "--out", tmp / "r",
                         "--no-pacing", "--port", port], capsys)
    assert code == 2 and "port" in out.err


def test_run_bad_checkpoint_exits_2(trained, capsys):
    tmp, scen, ckpt = trained
    data = ckpt.read_bytes()
    ckpt.write_bytes(data[:-5])
    code, _ = run(["run", "--config", scen, "--checkpoint", ckpt, "--out", tmp / "r",
                   "--no-pacing", "--port", 0], capsys)
    assert code == 2


def test_plot_excludes_unpredicted_rows_and_coincident_lines(tmp_path, capsys):
    log = tmp_path / "log.csv"
    log.write_text("ts_ms,actual_latency_ms,predicted_latency_ms,verdict\n"
                   "100,5.0,,\n"
                   "200,6.0,6.0,TRANSMIT\n"
                   "300,7.5,7.5,TRANSMIT\n"
                   "400,9.0,9.0,DEFER\n")
    code, _ = run(["plot", "--log", log, "--out", tmp_path / "p"], capsys)
    assert code == 0
    tidy = list(csv.reader(open(tmp_path / "p" / "plot.csv")))[1:]
    assert [r[0] for r in tidy] == ["200", "300", "400"]
    svg = (tmp_path / "p" / "plot.svg").read_text()
    pts = re.findall(r'points="([^"]*)"', svg)
    assert len(pts) == 2 and pts[0] == pts[1] and len(pts[0].split()) == 3


def test_plot_empty_log_exits_2(tmp_path, capsys):
    log = tmp_path / "log.csv"
    log.write_text("ts_ms,actual_latency_ms,predicted_latency_ms,verdict\n")
    assert run(["plot", "--log", log, "--out", tmp_path / "p"], capsys)[0] == 2


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "oranlat.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "0.1.0" in proc.stdout
