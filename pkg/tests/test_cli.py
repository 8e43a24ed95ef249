import csv
import subprocess
import sys

import pytest

from sscpic.cli import main, read_config
from sscpic.data import Recording, load_embeddings, load_rttm, load_segments
from sscpic.engine import SscConfig, run_baseline
from sscpic.scoring import partition_to_annotation


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--seed", "3"]) == 0
    return out


def inputs(d):
    return ["--embeddings", str(d / "embeddings.csv"), "--segments", str(d / "segments.txt")]


def test_synth_files(synth_dir, tmp_path):
    names = {"embeddings.csv", "segments.txt", "reference.rttm"}
    assert {p.name for p in synth_dir.iterdir()} == names
    X = load_embeddings(synth_dir / "embeddings.csv")
    assert X.shape == (300, 16)
    assert len(load_segments(synth_dir / "segments.txt")) == 300
    assert len(load_rttm(synth_dir / "reference.rttm").speakers) == 3
    other = tmp_path / "again"
    main(["synth", "--out", str(other), "--seed", "3"])
    for n in names:
        assert (other / n).read_bytes() == (synth_dir / n).read_bytes()


def test_synth_raw(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--format", "raw", "--windows", "40"]) == 0
    assert load_embeddings(tmp_path / "embeddings.bin", "raw").shape == (40, 16)


@pytest.mark.parametrize("system", ["ahc", "pic"])
def test_cluster_matches_module(synth_dir, tmp_path, system, capsys):
    out = tmp_path / "h.rttm"
    assert main(["cluster", "--system", system, *inputs(synth_dir), "--out", str(out),
                 "--num-speakers", "3", "--recording-id", "rec"]) == 0
    rec = Recording("rec", load_segments(synth_dir / "segments.txt"),
                    load_embeddings(synth_dir / "embeddings.csv"))
    part = run_baseline(rec, system, SscConfig(n_speakers=3))
    assert load_rttm(out) == partition_to_annotation(rec, part)
    assert "speakers=3 (known)" in capsys.readouterr().out


def test_cluster_unknown_prints_estimate(synth_dir, tmp_path, capsys):
    assert main(["cluster", *inputs(synth_dir), "--out", str(tmp_path / "h.rttm"),
                 "--reference", str(synth_dir / "reference.rttm")]) == 0
    out = capsys.readouterr().out
    assert "(estimated)" in out and "der=" in out


def test_ssc_writes_trace(synth_dir, tmp_path, capsys):
    out = tmp_path / "s.rttm"
    assert main(["ssc", *inputs(synth_dir), "--out", str(out), "--q-max", "2"]) == 0
    trace = tmp_path / "s.trace.jsonl"
    assert trace.exists() and len(trace.read_text().splitlines()) >= 2
    assert "counts=" in capsys.readouterr().out


def test_score_hand_case(tmp_path, capsys):
    ref, hyp = tmp_path / "ref.rttm", tmp_path / "hyp.rttm"
    ref.write_text("SPEAKER r 1 0.000 10.000 <NA> <NA> A <NA> <NA>\n")
    hyp.write_text("SPEAKER r 1 0.000 5.000 <NA> <NA> X <NA> <NA>\n"
                   "SPEAKER r 1 5.000 5.000 <NA> <NA> Y <NA> <NA>\n")
    assert main(["score", "--reference", str(ref), "--hypothesis", str(hyp), "--collar", "0"]) == 0
    assert "der=0.5000" in capsys.readouterr().out
    assert main(["score", "--reference", str(ref), "--hypothesis", str(ref)]) == 0
    assert "der=0.0000" in capsys.readouterr().out


def test_compare_table(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["compare", "--systems", "pic", "--seeds", "0", "--windows", "60",
                 "--num-speakers", "3", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["system", "seed0", "mean", "std"]
    assert len(rows) == 2 and rows[1][0] == "pic"
    assert float(rows[1][1]) == pytest.approx(float(rows[1][2]))
    assert "pic" in capsys.readouterr().out


def test_compare_marks_failures(tmp_path, capsys):
    # 50 windows cannot hold 51 speakers, so every cell fails
    code = main(["compare", "--systems", "pic", "--seeds", "0", "1", "--windows", "50",
                 "--speakers", "2", "--num-speakers", "51"])
    assert code == 1
    assert "ERR" in capsys.readouterr().out


def test_usage_errors(synth_dir, tmp_path, capsys):
    assert main(["cluster", "--system", "bogus", *inputs(synth_dir), "--out", "x"]) == 2
    assert main(["cluster", "--embeddings", str(tmp_path / "nope.csv"),
                 "--segments", "x", "--out", "y"]) == 2
    assert main(["cluster", *inputs(synth_dir), "--out", "y", "--sigma", "1.5"]) == 2
    assert main(["cluster", *inputs(synth_dir), "--out", "y", "--num-speakers", "2",
                 "--estimate-speakers"]) == 2
    assert main([]) == 2


def test_runtime_error_exit(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("1,2\n3\n")
    seg = tmp_path / "s.txt"
    seg.write_text("0 1.5\n0.75 1.5\n")
    assert main(["cluster", "--embeddings", str(bad), "--segments", str(seg),
                 "--out", str(tmp_path / "h.rttm")]) == 1


def test_config_file_and_override(synth_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# experiment\nnum_speakers = 2\nknn = 10\ntemporal = yes\n")
    assert read_config(cfg) == [("num-speakers", "2"), ("knn", "10"), ("temporal", "yes")]
    out = tmp_path / "h.rttm"
    assert main(["cluster", "--config", str(cfg), *inputs(synth_dir), "--out", str(out)]) == 0
    assert len(load_rttm(out).speakers) == 2
    assert main(["cluster", "--config", str(cfg), *inputs(synth_dir), "--out", str(out),
                 "--num-speakers", "3"]) == 0
    assert len(load_rttm(out).speakers) == 3
    cfg.write_text("colour = red\n")
    assert main(["cluster", "--config", str(cfg), *inputs(synth_dir), "--out", str(out)]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sscpic", "synth", "--out", str(tmp_path),
                        "--windows", "20"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "reference.rttm").exists()
