import csv
import json
import random

import numpy as np
import pytest

from tumormap.bench import STAGES, format_report, run_bench
from tumormap.cli import main
from tumormap.config import ConfigError, ManifestError, ManifestRow, RunConfig, load_manifest, write_manifest
from tumormap.imaging import read_mask, read_rgb, write_rgb
from tumormap.texture import DominantPatternDictionary

TILE = 128


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"tile_size": TILE, "classifier": {"kind": "KNN"}}))
    assert main(["synth", "--config", str(cfg), "--n-train", "16", "--n-test", "8", "--out", str(root / "syn")]) == 0
    assert main(["features", str(root / "syn" / "manifest.csv"), "--config", str(cfg), "--out", str(root / "feat")]) == 0
    assert main(["train", str(root / "feat"), "--config", str(cfg), "--out", str(root / "feat" / "model.json")]) == 0
    return root, cfg


def test_synth_outputs(workspace):
    root, _ = workspace
    syn = root / "syn"
    rows = load_manifest(syn / "manifest.csv")
    assert len(rows) == 24
    assert {r.split for r in rows} == {"train", "test"}
    slide = read_rgb(syn / "slide.png")
    roi = read_mask(syn / "slide_truth.png")
    assert slide.shape == (4 * TILE, 6 * TILE, 3)
    expected = np.zeros((4, 6), bool)
    expected[2:4, 2:5] = True
    np.testing.assert_array_equal(roi, np.kron(expected, np.ones((TILE, TILE), bool)))
    meta = json.loads((syn / "synth_meta.json").read_text())
    assert meta["config"]["tile_size"] == TILE


def test_synth_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--seed", "3", "--tile-size", "64", "--n-train", "4", "--n-test", "2",
                     "--out", str(tmp_path / d)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_features_outputs(workspace):
    root, _ = workspace
    feat = root / "feat"
    meta = json.loads((feat / "features_meta.json").read_text())
    assert meta["config"]["tile_size"] == TILE and len(meta["inputs"]) == 24
    assert all(len(h) == 64 for h in meta["inputs"].values())
    dh = DominantPatternDictionary.load(feat / "dict_H.json")
    assert meta["dictionaries"]["H"]["digest"] == dh.digest
    with open(feat / "features_train.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["patch_id", "label"] and len(rows) == 17
    assert len(rows[1]) == 2 + sum(s["length"] for s in meta["layout"])
    assert (feat / "cellularity.csv").exists()


def test_test_rows_never_change_dictionaries(workspace, tmp_path):
    root, cfg = workspace
    rows = load_manifest(root / "syn" / "manifest.csv")
    train = [r for r in rows if r.split == "train"]
    test = [r for r in rows if r.split == "test"]
    random.Random(0).shuffle(test)
    # drop half the test rows as well: neither order nor presence may matter
    write_manifest(tmp_path / "m.csv", test[:4] + train)
    assert main(["features", str(tmp_path / "m.csv"), "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0
    for ch in ("H", "V"):
        assert (tmp_path / "f" / f"dict_{ch}.json").read_text() == (root / "feat" / f"dict_{ch}.json").read_text()


def test_theta_one_covers_all_train_patterns(workspace, tmp_path):
    root, cfg = workspace
    rows = [r for r in load_manifest(root / "syn" / "manifest.csv") if r.split == "train"][:4]
    write_manifest(tmp_path / "m.csv", rows)
    assert main(["features", str(tmp_path / "m.csv"), "--config", str(cfg), "--theta", "1.0", "--channels", "GRAY",
                 "--out", str(tmp_path / "f")]) == 0
    from tumormap.imaging import channel_image
    from tumormap.texture import LbpConfig, extract_histogram

    nonzero = set()
    for r in rows:
        nonzero |= set(np.flatnonzero(extract_histogram(channel_image(read_rgb(r.patch_path), "GRAY"), LbpConfig()).counts))
    d = DominantPatternDictionary.load(tmp_path / "f" / "dict_GRAY.json")
    assert set(d.selected) == {int(i) for i in nonzero}


def test_predict_deterministic(workspace, tmp_path):
    root, cfg = workspace
    outs = []
    for d in ("p1", "p2"):
        assert main(["predict", str(root / "syn" / "slide.png"), "--config", str(cfg),
                     "--model", str(root / "feat" / "model.json"), "--out", str(tmp_path / d)]) == 0
        outs.append((tmp_path / d / "tumormap.json").read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert doc["provenance"]["config"]["tile_size"] == TILE
    assert len(doc["provenance"]["slide_sha256"]) == 64
    assert (tmp_path / "p1" / "overlay.png").read_bytes() == (tmp_path / "p2" / "overlay.png").read_bytes()
    assert (tmp_path / "p1" / "overlay_thumb.png").exists()


def test_evaluate_with_and_without_truth(workspace, tmp_path):
    root, cfg = workspace
    base = ["evaluate", "--config", str(cfg), "--model", str(root / "feat" / "model.json"),
            "--features", str(root / "feat"), "--slide", str(root / "syn" / "slide.png")]
    assert main(base + ["--out", str(tmp_path / "e1")]) == 0
    r1 = json.loads((tmp_path / "e1" / "report.json").read_text())
    assert {"accuracy", "precision", "dice", "iou"} <= set(r1["patch_level"])
    assert "region" not in r1
    assert main(base + ["--truth", str(root / "syn" / "slide_truth.png"), "--out", str(tmp_path / "e2")]) == 0
    r2 = json.loads((tmp_path / "e2" / "report.json").read_text())
    assert set(r2["region"]) >= {"iou", "dice"}
    assert r2["region"]["iou"] == 100.0


def test_table_mode(workspace, tmp_path):
    root, cfg = workspace
    assert main(["evaluate", "--table", "--manifest", str(root / "syn" / "manifest.csv"), "--config", str(cfg),
                 "--n-trees", "15", "--classifier", "RF", "--out", str(tmp_path / "t")]) == 0
    table = json.loads((tmp_path / "t" / "report.json").read_text())["table"]
    assert len(table) == 12
    assert {r["descriptor"] for r in table} == {"RLBP H&V", "LBP H&V", "RLBP GRAY", "LBP GRAY"}


def test_tile_command(tmp_path):
    rng = np.random.default_rng(0)
    write_rgb(tmp_path / "s.png", rng.integers(0, 256, (1200, 1800, 3), dtype=np.uint8))
    assert main(["tile", str(tmp_path / "s.png"), "--out", str(tmp_path / "t1")]) == 0
    tiles = sorted(p.name for p in (tmp_path / "t1").glob("r*_c*.png"))
    assert tiles == [f"r{r}_c{c}.png" for r in range(2) for c in range(3)]
    assert main(["tile", str(tmp_path / "s.png"), "--out", str(tmp_path / "t2")]) == 0
    for name in tiles + ["manifest.csv"]:
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t2" / name).read_bytes()
    write_rgb(tmp_path / "small.png", rng.integers(0, 256, (599, 599, 3), dtype=np.uint8))
    assert main(["tile", str(tmp_path / "small.png"), "--out", str(tmp_path / "t3")]) == 2


def test_exit_codes(workspace, tmp_path, capsys):
    root, cfg = workspace
    with pytest.raises(SystemExit) as e:
        main(["nonsense"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["predict", "x.png", "--out", str(tmp_path)])      # --model missing
    assert e.value.code == 1
    assert main(["train", str(root / "feat"), "--config", str(tmp_path / "missing.json"), "--out", "m.json"]) == 1
    (tmp_path / "bad.json").write_text('{"tile_sise": 5}')
    assert main(["train", str(root / "feat"), "--config", str(tmp_path / "bad.json"), "--out", "m.json"]) == 1
    (tmp_path / "model.json").write_text("{trunc")
    assert main(["predict", str(root / "syn" / "slide.png"), "--model", str(tmp_path / "model.json"),
                 "--dicts", str(root / "feat"), "--out", str(tmp_path / "p")]) == 2
    assert main(["features", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f")]) == 2
    (tmp_path / "e.csv").write_text("patch_path,label,slide_id,split\n")
    assert main(["features", str(tmp_path / "e.csv"), "--out", str(tmp_path / "f")]) == 2
    assert "empty" in capsys.readouterr().err


def test_manifest_validation(tmp_path):
    p = tmp_path / "a.png"
    write_rgb(p, np.zeros((8, 8, 3), np.uint8))
    write_manifest(tmp_path / "ok.csv", [ManifestRow(p, "tumor", "s1", "train")])
    assert load_manifest(tmp_path / "ok.csv")[0].patch_path == p
    bad = {
        "label.csv": "a.png,cancer,s1,train\n",
        "split.csv": "a.png,tumor,s1,val\n",
        "missing.csv": "b.png,tumor,s1,train\n",
        "both.csv": "a.png,tumor,s1,train\na.png,tumor,s2,test\n",
        "straddle.csv": "a.png,tumor,s1,train\na.png,tumor,s1,train\nc.png,tumor,s1,test\n",
    }
    write_rgb(tmp_path / "c.png", np.zeros((8, 8, 3), np.uint8))
    for name, body in bad.items():
        (tmp_path / name).write_text("patch_path,label,slide_id,split\n" + body)
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / name)
    (tmp_path / "hdr.csv").write_text("path,label\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "hdr.csv")


def test_run_config_round_trip():
    cfg = RunConfig.from_dict({"seed": 4, "features": {"theta": 0.8, "lbp": {"P": 8, "R": 1}}})
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.features.lbp.P == 8 and cfg.features.channels == ("H", "V")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"nuclei": {"radius": 3}})


def test_bench_report_schema():
    rep = run_bench(iterations=20, threads=2, n_parallel=4, size=48)
    assert set(rep["stages_ms"]) == set(STAGES)
    assert rep["iterations"] >= 20 and rep["parallel"]["identical"]
    assert "numpy" in rep["histogram_backends_ms"]
    assert "total" in format_report(rep)


def test_bench_command(tmp_path, capsys):
    assert main(["bench", "--tile-size", "48", "--patches", "2", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "bench.json").read_text())
    assert set(rep["stages_ms"]) == set(STAGES) and "config" in rep
