import csv
import hashlib
import json

import pytest

from dnsfp.cli import run
from dnsfp.evaluation import cross_validate, make_classifier
from dnsfp.traces import load_dataset


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.jsonl"
    assert run(["synth", "--classes", "12", "--samples", "10", "--seed", "7",
                "--noise", "0.2", "-o", str(path)]) == 0
    return path


def test_synth_is_reproducible(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert run(["synth", "--classes", "50", "--samples", "20", "--seed", "7",
                    "-o", str(p)]) == 0
    assert sha(a) == sha(b)
    manifest = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    assert manifest["subcommand"] == "synth"
    assert manifest["seeds"] == {"synth": 7}
    assert manifest["tool_version"]


def test_cv_report_matches_library(data, tmp_path):
    out = tmp_path / "cv.json"
    conf = tmp_path / "cm.dot"
    assert run(["cv", "--data", str(data), "--folds", "5", "--seed", "1", "--trees", "10",
                "-o", str(out), "--confusion", str(conf),
                "--per-class", str(tmp_path / "pc.csv")]) == 0
    report = json.loads(out.read_text())
    assert set(report["metrics"]) == {"mean", "std"}
    lib = cross_validate(load_dataset(data), make_classifier(n_trees=10, random_state=1),
                         folds=5, seed=1)
    assert report == json.loads(lib.to_json())
    assert conf.read_text().startswith("digraph")
    manifest = json.loads((tmp_path / "cv.json.manifest.json").read_text())
    assert manifest["input_digests"] == {str(data): sha(data)}


def test_thread_count_does_not_change_report(data, tmp_path):
    outs = []
    for n in ("1", "2"):
        out = tmp_path / f"cv{n}.json"
        assert run(["cv", "--data", str(data), "--folds", "3", "--trees", "6",
                    "--threads", n, "-o", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_entropy_csv_shape(tmp_path):
    d = tmp_path / "d.jsonl"
    assert run(["synth", "--classes", "100", "--samples", "2", "-o", str(d)]) == 0
    out = tmp_path / "h.csv"
    assert run(["entropy", "--data", str(d), "--worlds", "10,100", "--lmax", "20",
                "-o", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2 * 20
    assert {r["world_size"] for r in rows} == {"10", "100"}


def test_convert_and_inspect(data, tmp_path, capsys):
    csv_path = tmp_path / "d.csv"
    assert run(["convert", "--data", str(data), "-o", str(csv_path)]) == 0
    assert load_dataset(csv_path).traces == load_dataset(data).traces
    assert run(["inspect", "--data", str(csv_path)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["classes"] == 12 and stats["traces"] == 120


def test_defend_presets_and_file(data, tmp_path):
    out = tmp_path / "pad.jsonl"
    rep = tmp_path / "pad.json"
    assert run(["defend", "--data", str(data), "--policy", "edns0-468", "-o", str(out),
                "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["overhead"]["ratio"] > 1
    policy = tmp_path / "p.json"
    policy.write_text(json.dumps({"mode": "cell", "cell_size": 100}))
    assert run(["defend", "--data", str(data), "--policy", str(policy), "-o", str(out),
                "--report", str(rep)]) == 0
    assert "note" in json.loads(rep.read_text())
    assert all(abs(r) == 100 for t in load_dataset(out) for r in t.records)


def test_cross_and_importances(data, tmp_path):
    imp = tmp_path / "imp.csv"
    out = tmp_path / "x.json"
    assert run(["cross", "--train", str(data), "--test", str(data), "--trees", "5",
                "-o", str(out), "--importances", str(imp)]) == 0
    assert json.loads(out.read_text())["coverage"] == 1.0
    rows = list(csv.DictReader(open(imp)))
    assert rows[0]["feature"].split(":")[0] in ("size", "burst")


def test_openworld(data, tmp_path):
    roc = tmp_path / "roc.csv"
    assert run(["openworld", "--data", str(data), "--monitored-fraction", "0.2",
                "--training-fraction", "0.5", "--folds", "2", "--trees", "5",
                "-o", str(tmp_path / "ow.json"), "--roc", str(roc)]) == 0
    assert len(list(csv.DictReader(open(roc)))) == 11


def test_censor(tmp_path):
    (tmp_path / "r.csv").write_text("1,google.com\n2,ft.com\n3,bing.com\n")
    (tmp_path / "b.txt").write_text("ft.com\n")
    out = tmp_path / "c.json"
    assert run(["censor", "--ranking", str(tmp_path / "r.csv"), "--blacklist",
                str(tmp_path / "b.txt"), "-o", str(out), "--table",
                str(tmp_path / "t.csv")]) == 0
    rep = json.loads(out.read_text())
    assert rep["strategies"]["most_popular"] == 6
    assert rep["length_histogram"] == {"6": 1, "8": 1, "10": 1}


def test_usage_error(capsys):
    assert run(["bogus"]) == 1
    assert run(["cv"]) == 1
    assert "usage" in capsys.readouterr().err


def test_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"label":"a","sample_id":"s","records":[0]}\n')
    assert run(["inspect", "--data", str(bad)]) == 2
    assert "zero record size" in capsys.readouterr().err
    assert run(["inspect", "--data", str(tmp_path / "missing.jsonl")]) == 2


def test_openworld_zero_monitored_is_data_error(data):
    assert run(["openworld", "--data", str(data), "--trees", "2"]) == 2
