import itertools

import numpy as np
import pytest

from lhs import cli, harness
from lhs.encoder import Descriptor
from lhs.gmm import GmmModel
from lhs.metric import MetricModel


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def records(out):
    return dict(line.split("=", 1) for line in out.splitlines() if "=" in line and " " not in line)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    harness.generate_synthetic_textures(d / "data", count=6, size=24, seed=3)
    return d


def test_full_classification_flow(capsys, workdir):
    d = workdir
    man = d / "data" / "manifest.tsv"
    code, out, _ = run(capsys, "train-gmm", "--manifest", man, "--k", 2, "--max-samples", 4000,
                       "--out", d / "g.gmm", "--stats", d / "g.wst")
    assert code == 0 and records(out)["components"] == "2"
    assert GmmModel.load(d / "g.gmm").mode.value == "circular"
    code, out, _ = run(capsys, "encode", "--manifest", man, "--model", d / "g.gmm", "--stats", d / "g.wst",
                       "--grid", "2x2", "--flip", "--out", d / "desc")
    assert code == 0 and records(out)["dim"] == str(4 * 32)
    code, out, _ = run(capsys, "train-svm", "--train", man, "--desc", d / "desc", "--folds", 2,
                       "--c-grid", "0.1,1", "--out", d / "s.npz")
    assert code == 0 and "cv_accuracy" in out
    code, out, _ = run(capsys, "classify", "--train", man, "--test", man, "--desc", d / "desc",
                       "--svm", d / "s.npz")
    assert code == 0
    rec = records(out)
    assert 0 <= float(rec["accuracy"]) <= 1 and rec["n"] == "24"


def test_encode_baseline_and_images(capsys, workdir, tmp_path):
    code, out, _ = run(capsys, "encode", "--kind", "ltp", "--sampling", "rectangular",
                       "--out", tmp_path / "d", workdir / "data")
    assert code == 0 and records(out)["dim"] == "118"
    index, _, meta = harness.load_descriptor_dir(tmp_path / "d")
    assert meta.kind == "ltp" and len(index) == 24


def test_metric_and_verify(capsys, workdir, tmp_path):
    entries = harness.read_manifest(workdir / "data" / "manifest.tsv")
    pairs = [(a.path, b.path, 1 if a.label == b.label else -1) for a, b in itertools.combinations(entries, 2)]
    same = [p for p in pairs if p[2] == 1]
    diff = [p for p in pairs if p[2] == -1]
    harness.write_pairs(tmp_path / "train.txt", same[:20] + diff[:20])
    harness.write_pairs(tmp_path / "test.txt", same[20:40] + diff[20:40])
    run(capsys, "encode", "--kind", "lbp", "--flip", "--out", tmp_path / "d",
        "--manifest", workdir / "data" / "manifest.tsv")
    code, out, _ = run(capsys, "train-metric", "--pairs", tmp_path / "train.txt", "--desc", tmp_path / "d",
                       "--dim", 8, "--iters", 3000, "--out", tmp_path / "m.met")
    assert code == 0 and MetricModel.load(tmp_path / "m.met").dim == 8
    rec = records(out)
    assert float(rec["loss_final"]) <= float(rec["loss_init"])
    for extra in (["--metric", tmp_path / "m.met"], ["--unsupervised"], ["--dim", 8, "--iters", 500]):
        code, out, _ = run(capsys, "verify", "--pairs", tmp_path / "train.txt", "--test-pairs",
                           tmp_path / "test.txt", "--desc", tmp_path / "d", *extra)
        assert code == 0
        rec = records(out)
        assert {"train_accuracy", "accuracy", "threshold", "eer"} <= set(rec)


def test_bench_and_config(capsys, workdir, tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[common]\nseed = 5\n[bench]\nkinds = lbp\nruns = 2\nc-grid = 1\n")
    code, out, _ = run(capsys, "bench", "--config", ini, "--manifest", workdir / "data" / "manifest.tsv")
    assert code == 0
    rec = records(out)
    assert rec["lbp.runs"] == "2" and "ltp.runs" not in rec
    # explicit flags override the file
    code, out, _ = run(capsys, "bench", "--config", ini, "--runs", 1,
                       "--manifest", workdir / "data" / "manifest.tsv")
    assert records(out)["lbp.runs"] == "1"
    ini.write_text("[bench]\nbogus = 1\n")
    code, _, err = run(capsys, "bench", "--config", ini, "--manifest", workdir / "data" / "manifest.tsv")
    assert code != 0 and "bogus" in err


def test_synth_and_errors(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("LHS_SEED", "9")
    code, out, _ = run(capsys, "synth", "--out", tmp_path / "s", "--count", 2, "--size", 12)
    assert code == 0 and records(out)["images"] == "8"
    code, _, err = run(capsys, "classify", "--train", tmp_path / "missing.tsv", "--test", tmp_path / "x.tsv")
    assert code == 1 and "error" in err
    code, _, err = run(capsys, "encode", "--out", tmp_path / "o", tmp_path / "s")
    assert code == 1 and "--model" in err
    with pytest.raises(SystemExit):
        cli.main(["train-gmm"])
