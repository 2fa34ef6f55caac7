import json
import socket
import subprocess
import sys
import threading

import pytest

from gconvdbd.cli import EXIT_DATA, EXIT_OK, EXIT_TRANSPORT, EXIT_USAGE, main
from gconvdbd.nn import load_checkpoint
from gconvdbd.stream import StreamMessage


@pytest.fixture(scope="module")
def trained(tmp_path_factory, recording_csv):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"hidden_sizes": [4, 3], "epochs": 1}))
    ckpt = d / "model.json"
    code = main(["train", "--data", str(recording_csv), "--subset", "A", "--config", str(cfg),
                 "--out", str(ckpt), "--report", str(d / "report.json"), "--roc-csv", str(d / "roc.csv")])
    assert code == EXIT_OK
    return d, ckpt


def test_train_writes_outputs(trained, capsys):
    d, ckpt = trained
    assert load_checkpoint(ckpt).subset == "A"
    assert json.loads((d / "report.json").read_text())["subset"] == "A"
    assert (d / "roc.csv").read_text().startswith("threshold,fpr,tpr")


def test_evaluate_prints_json(trained, recording_csv, capsys):
    _, ckpt = trained
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(recording_csv)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"confusion", "metrics", "auc"}


def test_replay_serve_tail_pipeline(trained, recording_csv, tmp_path, capsys):
    _, ckpt = trained
    frames = tmp_path / "frames.ndjson"
    preds = tmp_path / "preds.ndjson"
    assert main(["replay", "--data", str(recording_csv), "--subset", "A", "--speed", "0",
                 "--out", f"file:{frames}", "--limit", "30"]) == EXIT_OK
    assert len(frames.read_text().splitlines()) == 30
    assert main(["serve", "--checkpoint", str(ckpt), "--in", f"file:{frames}",
                 "--out", f"file:{preds}", "--start-date", "2024-01-01"]) == EXIT_OK
    msgs = [StreamMessage.from_line(l) for l in preds.read_text().splitlines()]
    assert sum(m.kind == "prediction" for m in msgs) == 5
    assert msgs[-2].payload["date"] == "2024-01-01"
    capsys.readouterr()
    assert main(["tail", "--in", f"file:{preds}", "--kinds", "prediction"]) == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == 5


def test_serve_over_tcp(trained, recording_csv, tmp_path):
    _, ckpt = trained
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    preds = tmp_path / "p.ndjson"
    result = {}
    t = threading.Thread(target=lambda: result.setdefault("code", main(
        ["serve", "--checkpoint", str(ckpt), "--in", f"tcp:127.0.0.1:{port}", "--out", f"file:{preds}"])))
    t.start()
    code = main(["replay", "--data", str(recording_csv), "--subset", "A", "--speed", "0",
                 "--out", f"tcp:127.0.0.1:{port}", "--limit", "20"])
    t.join(30)
    assert code == EXIT_OK and result["code"] == EXIT_OK
    assert sum('"prediction"' in l for l in preds.read_text().splitlines()) == 3


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["replay", "--data", "x.csv", "--subset", "Q", "--out", "-"],
        ["replay", "--data", "x.csv", "--subset", "A", "--out", "-", "--speed", "-2"],
        ["tail", "--in", "-", "--kinds", "frame,bogus"],
        ["replay", "--data", "x.csv", "--subset", "A", "--out", "carrier-pigeon"],
    ],
)
def test_usage_errors(argv, tmp_path):
    with_file = [a if a != "x.csv" else str(tmp_path / "x.csv") for a in argv]
    (tmp_path / "x.csv").write_text("Vehicle_speed,Engine_speed,Calculated_LOAD_value,Absolute_throttle_position,Class\n1,2,3,4,A\n")
    try:
        code = main(with_file)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_bad_config_is_usage_error(tmp_path, recording_csv):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"colour": "red"}')
    assert main(["train", "--data", str(recording_csv), "--subset", "A", "--config", str(cfg),
                 "--out", str(tmp_path / "m.json")]) == EXIT_USAGE


def test_data_errors(tmp_path, trained):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,Class\n1,x,A\n")
    assert main(["replay", "--data", str(bad), "--subset", "full", "--out", "-"]) == EXIT_DATA
    assert main(["replay", "--data", str(tmp_path / "none.csv"), "--subset", "A", "--out", "-"]) == EXIT_DATA
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert main(["serve", "--checkpoint", str(junk), "--in", "-", "--out", "-"]) == EXIT_DATA


def test_transport_errors(trained, tmp_path):
    _, ckpt = trained
    assert main(["serve", "--checkpoint", str(ckpt), "--in", f"file:{tmp_path / 'none'}",
                 "--out", "-"]) == EXIT_TRANSPORT


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gconvdbd", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "replay" in r.stdout
    r = subprocess.run([sys.executable, "-m", "gconvdbd", "tail"], capture_output=True, text=True)
    assert r.returncode == EXIT_USAGE
