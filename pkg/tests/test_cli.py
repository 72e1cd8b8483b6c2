import csv
import json
import os
import struct
import zlib

import numpy as np
import pytest

from kcvision.checkpoint import build_model, save_checkpoint
from kcvision.cli import main
from kcvision.config import RunConfig


@pytest.fixture(scope="module")
def fixtures(tmp_path_factory):
    root = tmp_path_factory.mktemp("fx")
    assert main(["make-fixtures", "--out", str(root), "--n-train", "200", "--per-class", "3",
                 "--places", "30"]) == 0
    return root


@pytest.fixture(scope="module")
def ann_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "ann.avis"
    cfg = RunConfig()
    save_checkpoint(build_model("ann", cfg), path, cfg)
    return path


def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["inspect", "--no-such-flag"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_runtime_error_exits_one(tmp_path, capsys):
    assert main(["inspect", "--ckpt", str(tmp_path / "missing.avis")]) == 1
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("[akwta]\nrho = 1.5\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x.avis")]) == 1
    assert "rho" in capsys.readouterr().err


def test_fixture_layout(fixtures):
    assert len(os.listdir(fixtures / "train")) == 200
    assert len(os.listdir(fixtures / "flowers")) == 17
    assert len(os.listdir(fixtures / "traverse" / "reference")) == 30
    assert len(os.listdir(fixtures / "traverse" / "query")) == 30


def test_inspect_reports_architecture(ann_ckpt, capsys):
    assert main(["inspect", "--ckpt", str(ann_ckpt)]) == 0
    out = capsys.readouterr().out
    assert "kind: ann" in out
    assert "lobula channels: 128" in out
    assert "kc dim: 1024" in out
    assert "kc.weight: 1024x100 float32" in out
    cfg_line = [l for l in out.splitlines() if l.startswith("config: ")][0]
    assert cfg_line[len("config: "):] == RunConfig().to_json()


def test_vpr_identity_recall_is_one(fixtures, ann_ckpt, tmp_path, capsys):
    ref = str(fixtures / "traverse" / "reference")
    out = tmp_path / "vpr"
    assert main(["eval-vpr", "--ckpt", str(ann_ckpt), "--reference", ref, "--query", ref,
                 "--tolerance", "0", "--out", str(out)]) == 0
    with open(out / "recall.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["encoder"] for r in rows} == {"ann", "sad"}
    for r in rows:
        if r["K"] == "1":
            assert float(r["recall"]) == 1.0
    assert (out / "recall.png").exists()
    assert (out / "similarity_sad.csv").exists()


def test_encode_csv_format(fixtures, ann_ckpt, tmp_path):
    out = tmp_path / "codes.csv"
    args = ["encode", "--ckpt", str(ann_ckpt), "--images",
            str(fixtures / "traverse" / "reference"), "--out", str(out)]
    assert main(args) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image", "code"]
    assert len(rows) == 31
    for name, code in rows[1:]:
        pairs = [p.split(":") for p in code.split()]
        idx = [int(i) for i, _ in pairs]
        assert idx == sorted(idx) and all(0 <= i < 1024 for i in idx)
        assert 0 < len(idx) <= 51
        assert all(float(v) > 0 for _, v in pairs)
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_eval_flowers_prints_stats(fixtures, ann_ckpt, tmp_path, capsys):
    assert main(["eval-flowers", "--ckpt", str(ann_ckpt), "--class-a", str(fixtures / "lavender"),
                 "--class-b", str(fixtures / "sunflower"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    for key in ("intra_a", "intra_b", "intra", "inter"):
        assert f"{key}:" in out
    assert (tmp_path / "similarity_ann.csv").exists()
    assert (tmp_path / "similarity_ann.png").exists()


def test_eval_scan_small(fixtures, ann_ckpt, tmp_path, capsys):
    out = tmp_path / "scan"
    args = ["eval-scan", "--ckpt", str(ann_ckpt), "--dataset", str(fixtures / "flowers"),
            "--paths", "2", "--steps", "3", "--seeds", "2", "--out", str(out)]
    assert main(args) == 0
    with open(out / "classification.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert all(0 <= float(r["accuracy"]) <= 1 for r in rows)
    first = (out / "classification.csv").read_bytes()
    assert main(args) == 0
    assert (out / "classification.csv").read_bytes() == first
    assert (out / "classification.png").exists()


@pytest.mark.slow
def test_desk_scale_train_on_fixture(fixtures, tmp_path, capsys):
    ck = tmp_path / "m.avis"
    assert main(["train", "--desk-scale", "--data", str(fixtures / "train"),
                 "--out", str(ck)]) == 0
    blob = ck.read_bytes()
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])
    lines = [json.loads(l) for l in open(str(ck) + ".log.jsonl")]
    assert [l["epoch"] for l in lines] == [1, 2, 3]
    assert all(np.isfinite(l["mean_loss"]) for l in lines)
    assert main(["inspect", "--ckpt", str(ck)]) == 0
    assert '"n_images":2000' in capsys.readouterr().out
