import json

import numpy as np
import pytest

from csi2q import io
from csi2q.cli import main
from csi2q.errors import ContainerFormatError, InvalidInputError
from csi2q.simulate import FrameSet

from conftest import crandn

SMALL = ["--epochs", "2", "--widths", "4", "4", "8", "8", "--hidden", "8", "--batch-size", "8"]
TARGET = ["--epochs", "30", "--lr", "1e-3", "--hidden", "16", "--batch-size", "8"]


def _frames(rng, n, length):
    return FrameSet(crandn(rng, n, length), np.arange(n) % 3)


# ---------------------------------------------------------------- containers

def test_container_round_trip(tmp_path, rng):
    fs = _frames(rng, 7, 52)
    p = io.write_container(tmp_path / "a.csq", fs)
    back, magic = io.read_container(p)
    assert magic == b"CSQ1"
    np.testing.assert_array_equal(back.device_ids, fs.device_ids)
    np.testing.assert_array_equal(back.samples, fs.samples.astype(np.complex64))
    assert p.stat().st_size == io.HEADER.size + 7 * (4 + 52 * 8)
    assert io.read_header(p) == (b"CSQ1", 1, 7, 52)
    fs = _frames(rng, 3, 320)
    _, magic = io.read_container(io.write_container(tmp_path / "b.iqf", fs))
    assert magic == b"IQF1"


def test_container_errors(tmp_path, rng):
    with pytest.raises(InvalidInputError):
        io.write_container(tmp_path / "x", _frames(rng, 2, 52), b"IQF1")
    with pytest.raises(InvalidInputError):
        io.write_container(tmp_path / "x", _frames(rng, 2, 40))
    with pytest.raises(ContainerFormatError):
        io.read_container(tmp_path / "missing.csq")
    p = io.write_container(tmp_path / "a.csq", _frames(rng, 4, 52))
    raw = p.read_bytes()
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ContainerFormatError, match="magic"):
        io.read_container(p)
    p.write_bytes(raw[:-5])
    with pytest.raises(ContainerFormatError, match="declares"):
        io.read_container(p)
    p.write_bytes(raw[:6])
    with pytest.raises(ContainerFormatError, match="truncated"):
        io.read_container(p)
    p.write_bytes(raw[:4] + (9).to_bytes(2, "little") + raw[6:])
    with pytest.raises(ContainerFormatError, match="version"):
        io.read_container(p)


def test_csv_round_trip_bit_exact(tmp_path, rng):
    fs = _frames(rng, 5, 52)
    q = FrameSet(fs.samples.astype(np.complex64).astype(np.complex128), fs.device_ids)
    io.export_csv(tmp_path / "a.csv", q)
    back = io.import_csv(tmp_path / "a.csv", "csi")
    assert back.samples.tobytes() == q.samples.tobytes()
    np.testing.assert_array_equal(back.device_ids, q.device_ids)


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,1,2\n")
    with pytest.raises(ContainerFormatError, match="columns"):
        io.import_csv(p, "csi")
    p.write_text("0," + ",".join(["x"] * 104) + "\n")
    with pytest.raises(ContainerFormatError):
        io.import_csv(p, "csi")
    p.write_text("")
    with pytest.raises(ContainerFormatError):
        io.import_csv(p, "csi")
    with pytest.raises(InvalidInputError):
        io.import_csv(p, "tdsg")


# ---------------------------------------------------------------- CLI

def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-dataset", "--devices", "3", "--frames", "40", "--seed", "1", "--out", str(d / "tgt")]) == 0
    assert main(["gen-dataset", "--devices", "3", "--frames", "10", "--seed", "1", "--first-device-id", "50",
                 "--out", str(d / "src")]) == 0
    assert main(["preprocess", "--in", str(d / "tgt/csi.csq"), "--out", str(d / "proc.csq")]) == 0
    assert main(["transform", "--in", str(d / "proc.csq"), "--out", str(d / "feat.iqf")]) == 0
    assert main(["train-source", "--iq", str(d / "src/iq.iqf"), "--out", str(d / "src.model"), "--epochs", "1"]) == 0
    # CSI features keep the target model quick to train; TDSG output is checked separately
    assert main(["train-target", "--features", str(d / "proc.csq"), "--source", str(d / "src.model"),
                 "--lambda", "0.3", "--out", str(d / "tgt.model"), "--trace", str(d / "trace.csv"), *TARGET]) == 0
    return d


def test_gen_dataset_counts(tmp_path, capsys):
    code, out, _ = _run(capsys, "gen-dataset", "--devices", 2, "--frames", 1, "--seed", 3, "--out", tmp_path)
    assert code == 0
    assert io.read_header(tmp_path / "iq.iqf")[2] == 2
    assert io.read_header(tmp_path / "csi.csq")[2] == 2
    man = io.read_manifest(tmp_path / "manifest.json")
    assert man["device_labels"] == [0, 1] and json.loads(out)["iq_frames"] == 2


def test_pipeline_artifacts(pipeline):
    rep = json.loads((pipeline / "proc.csq.discards.json").read_text())
    assert rep["frames_in"] == 120 and rep["frames_kept"] == io.read_header(pipeline / "proc.csq")[2]
    assert io.read_header(pipeline / "feat.iqf")[3] == 320
    assert (pipeline / "tgt.model.json").exists()
    assert len((pipeline / "trace.csv").read_text().splitlines()) == 31


def test_evaluate_prints_json_values(pipeline, capsys):
    code, out, _ = _run(capsys, "evaluate", "--model", pipeline / "tgt.model", "--test", pipeline / "proc.csq",
                        "--report", pipeline / "closed")
    assert code == 0
    doc = json.loads((pipeline / "closed/metrics.json").read_text())
    lines = out.strip().splitlines()
    assert lines[0] == f"accuracy {doc['accuracy']!r}"
    assert lines[1] == f"macro_f1 {doc['macro_f1']!r}"
    assert np.sum(doc["confusion"]) == doc["frames"]
    assert (pipeline / "closed/confusion.csv").read_text().startswith("true\\pred,")


def test_open_world_commands(pipeline, capsys):
    code, _, err = _run(capsys, "calibrate", "--model", pipeline / "tgt.model", "--features", pipeline / "proc.csq",
                        "--tail-size", 3, "--out", pipeline / "calib.json")
    assert code == 0, err
    code, out, _ = _run(capsys, "evaluate", "--mode", "open", "--model", pipeline / "tgt.model",
                        "--calib", pipeline / "calib.json", "--test", pipeline / "proc.csq",
                        "--report", pipeline / "open")
    assert code == 0
    doc = json.loads((pipeline / "open/metrics.json").read_text())
    assert doc["mode"] == "open" and len(doc["confusion"]) == 4


def test_calibrate_and_evaluate_open_forced(pipeline, capsys):
    # δ = 1 never labels anything unknown
    code, _, _ = _run(capsys, "calibrate", "--model", pipeline / "tgt.model", "--features", pipeline / "proc.csq",
                      "--tail-size", 5, "--out", pipeline / "calib1.json")
    assert code == 0
    assert _run(capsys, "evaluate", "--mode", "open", "--model", pipeline / "tgt.model", "--calib",
                pipeline / "calib1.json", "--delta", 1.0, "--test", pipeline / "proc.csq", "--report",
                pipeline / "open1")[0] == 0
    doc = json.loads((pipeline / "open1/metrics.json").read_text())
    assert np.asarray(doc["confusion"])[:, -1].sum() == 0


def test_error_exit_codes(pipeline, tmp_path, capsys):
    code, _, err = _run(capsys, "preprocess", "--in", tmp_path / "nope.csq", "--out", tmp_path / "o.csq")
    assert code != 0 and json.loads(err)["error"] == "ContainerFormatError"
    code, _, err = _run(capsys, "train-target", "--features", pipeline / "proc.csq", "--lambda", 0.3,
                        "--out", tmp_path / "m", *SMALL)
    assert code != 0 and json.loads(err)["error"] == "UsageError"
    code, _, err = _run(capsys, "evaluate", "--mode", "open", "--model", pipeline / "tgt.model",
                        "--test", pipeline / "proc.csq", "--report", tmp_path)
    assert code != 0 and "calib" in json.loads(err)["message"]
    # wrong container kind for the command
    code, _, err = _run(capsys, "preprocess", "--in", pipeline / "feat.iqf", "--out", tmp_path / "o.csq")
    assert code != 0 and json.loads(err)["error"] == "InvalidInputError"
    code, _, _ = _run(capsys, "bogus-command")
    assert code != 0


def test_config_file_and_seed_env(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"devices": 2, "frames": 3, "out": str(tmp_path / "a")}))
    monkeypatch.setenv("CSI2Q_SEED", "4")
    assert _run(capsys, "--config", cfg, "gen-dataset")[0] == 0
    man = json.loads((tmp_path / "a/manifest.json").read_text())
    assert man["seed"] == 4 and man["config"]["frames_per_device"] == 3
    # explicit flags beat the config file
    assert _run(capsys, "--config", cfg, "gen-dataset", "--frames", 2, "--seed", 9)[0] == 0
    man = json.loads((tmp_path / "a/manifest.json").read_text())
    assert man["seed"] == 9 and man["config"]["frames_per_device"] == 2
    monkeypatch.setenv("CSI2Q_SEED", "x")
    code, _, err = _run(capsys, "--config", cfg, "gen-dataset")
    assert code != 0 and json.loads(err)["error"] == "UsageError"


def test_csv_commands_round_trip(tmp_path, rng, capsys):
    fs = _frames(rng, 4, 52)
    q = FrameSet(fs.samples.astype(np.complex64).astype(np.complex128), fs.device_ids)
    io.export_csv(tmp_path / "in.csv", q)
    assert _run(capsys, "import-csv", "--in", tmp_path / "in.csv", "--kind", "csi", "--out", tmp_path / "c.csq")[0] == 0
    assert _run(capsys, "export-csv", "--in", tmp_path / "c.csq", "--out", tmp_path / "out.csv")[0] == 0
    assert (tmp_path / "in.csv").read_bytes() == (tmp_path / "out.csv").read_bytes()


def test_ablate_command(tmp_path, capsys):
    plan = {"num_devices": 3, "frames_per_device": 10, "seeds": [0], "source_devices": 3, "source_frames": 5,
            "train": {"epochs_source": 1, "epochs_target": 1, "extractor": {"widths": [4, 4, 8, 8]}, "hidden": 8}}
    (tmp_path / "plan.json").write_text(json.dumps(plan))
    code, out, _ = _run(capsys, "ablate", "--plan", tmp_path / "plan.json", "--report", tmp_path / "rep")
    assert code == 0
    doc = json.loads((tmp_path / "rep/ablation.json").read_text())
    assert set(doc["rungs"]) == {"raw", "CIM", "CIM+TDSG", "CIM+TDSG+ALIQ"}
    assert out.count("accuracy") == 4
