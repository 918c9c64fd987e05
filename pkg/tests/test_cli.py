import csv
import filecmp
import json
import logging
from pathlib import Path

import pytest

from diarconf import ingest
from diarconf.cli import EXIT_FATAL, EXIT_OK, EXIT_WARN, main
from diarconf.confidence import Method

SMALL = ["--conversations", "3", "--length", "40"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def synth(out, *extra, size=SMALL):
    assert main(["synth", "--out", str(out), *size, *extra]) == EXIT_OK
    return out / "manifest.json"


def per_segment_methods(conf_path):
    counts = {}
    for a in ingest.read_confidence(conf_path):
        key = (a.segment.conversation_id, a.segment.start)
        counts.setdefault(key, set()).add(a.method)
    return counts


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    # the standard battery, written to disk by the CLI
    return synth(tmp_path_factory.mktemp("corpus"), size=["--conversations", "20"])


def test_synth_writes_manifest_and_files(corpus):
    manifest = ingest.read_manifest(corpus)
    assert len(manifest) == 20
    for e in manifest:
        assert e.embeddings.exists() and e.hypothesis.exists() and e.reference.exists()
    assert (corpus.parent / "errors.csv").exists()


def test_synth_twice_gives_identical_directories(tmp_path):
    a, b = synth(tmp_path / "a", "--seed", "4").parent, synth(tmp_path / "b", "--seed", "4").parent
    cmp = filecmp.dircmp(a, b)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    assert not mismatch and not errors


def test_synth_bad_spec_is_fatal(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--error-rate", "1.5"]) == EXIT_FATAL


def test_score_external_rttm(corpus, tmp_path):
    out = tmp_path / "conf.csv"
    assert main(["score", "--manifest", str(corpus), "--out", str(out)]) == EXIT_OK
    counts = per_segment_methods(out)
    n_segments = sum(len(ingest.read_rttm(e.hypothesis)[e.conversation_id])
                     for e in ingest.read_manifest(corpus))
    assert len(counts) == n_segments
    assert all(m == {Method.COSINE, Method.LOCAL, Method.SILHOUETTE} for m in counts.values())


def test_spectral_on_external_rttm_warns_and_keeps_others(corpus, tmp_path, caplog):
    out = tmp_path / "conf.csv"
    with caplog.at_level(logging.WARNING, logger="diarconf"):
        code = main(["score", "--manifest", str(corpus), "--methods", "cosine,spectral",
                     "--out", str(out)])
    assert code == EXIT_WARN
    assert "spectral" in caplog.text
    assert {m for ms in per_segment_methods(out).values() for m in ms} == {Method.COSINE}


def test_diarize_then_score_all_four(tmp_path):
    manifest = synth(tmp_path / "c", "--speakers", "2", size=["--conversations", "3"])
    out = tmp_path / "d"
    assert main(["diarize", "--manifest", str(manifest), "--out", str(out)]) == EXIT_OK
    dm = ingest.read_manifest(out / "manifest.json")
    for e in dm:
        # two well separated speakers come back as two labels
        assert len(ingest.read_rttm(e.hypothesis)[e.conversation_id].speakers) == 2
        assert (out / f"{e.conversation_id}.basis.csv").exists()
    assert set(ingest.read_rttm(out / "hypothesis.rttm")) == {e.conversation_id for e in dm}
    conf = tmp_path / "conf.csv"
    assert main(["score", "--manifest", str(out / "manifest.json"),
                 "--methods", "cosine,local,silhouette,spectral", "--out", str(conf)]) == EXIT_OK
    assert all(len(m) == 4 for m in per_segment_methods(conf).values())


def test_single_speaker_silhouette_equals_cosine(tmp_path):
    manifest = synth(tmp_path / "c", "--speakers", "1", "--error-rate", "0")
    conf = tmp_path / "conf.csv"
    assert main(["score", "--manifest", str(manifest), "--methods", "cosine,silhouette",
                 "--out", str(conf)]) == EXIT_OK
    by = {}
    for a in ingest.read_confidence(conf):
        by.setdefault(a.method, []).append(a.score)
    assert by[Method.SILHOUETTE] == by[Method.COSINE]


def test_diarize_empty_manifest(tmp_path, caplog):
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"conversations": []}))
    with caplog.at_level(logging.WARNING, logger="diarconf"):
        code = main(["diarize", "--manifest", str(m), "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    assert "no conversations" in caplog.text
    assert (tmp_path / "o" / "hypothesis.rttm").read_text() == ""


def test_diarize_unreadable_embeddings(tmp_path, caplog):
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"conversations": [{"id": "lost", "embeddings": "nope.csv"}]}))
    with caplog.at_level(logging.ERROR, logger="diarconf"):
        code = main(["diarize", "--manifest", str(m), "--out", str(tmp_path / "o")])
    assert code == EXIT_FATAL
    assert "lost" in caplog.text


def test_missing_manifest_is_fatal(tmp_path):
    assert main(["evaluate", "--manifest", str(tmp_path / "none.json"),
                 "--confidence", "x", "--out", str(tmp_path / "o.csv")]) == EXIT_FATAL


@pytest.fixture(scope="module")
def scored(corpus, tmp_path_factory):
    conf = tmp_path_factory.mktemp("scored") / "conf.csv"
    assert main(["score", "--manifest", str(corpus), "--out", str(conf)]) == EXIT_OK
    return corpus, conf


def test_evaluate_and_sweep_agree_at_full_coverage(scored, tmp_path):
    manifest, conf = scored
    ev, sw = tmp_path / "ev.csv", tmp_path / "sw.csv"
    assert main(["evaluate", "--manifest", str(manifest), "--confidence", str(conf),
                 "--coverage", "0.7,0.9", "--out", str(ev)]) == EXIT_OK
    assert main(["sweep", "--manifest", str(manifest), "--confidence", str(conf),
                 "--out", str(sw)]) == EXIT_OK
    ev_rows, sw_rows = rows(ev), rows(sw)
    for m in ("cosine", "local", "silhouette"):
        mine = [r for r in ev_rows if r["method"] == m]
        assert [float(r["coverage_target"]) for r in mine] == [0.7, 0.9, 1.0]
        ders = [float(r["der"]) for r in mine]
        assert ders[0] < ders[1] < ders[2]
        curve = [r for r in sw_rows if r["method"] == m]
        assert float(curve[-1]["coverage_target"]) == 1.0
        assert float(curve[-1]["cder"]) == pytest.approx(ders[2], abs=1e-9)


def test_evaluate_oracle_confidence(corpus, tmp_path):
    # score 0 on corrupted segments, 1 elsewhere
    lines = ["conversation_id,start,end,speaker,method,score"]
    for r in rows(corpus.parent / "errors.csv"):
        score = "0.0" if r["corrupted"] == "1" else "1.0"
        lines.append(f"{r['conversation_id']},{r['start']},{r['end']},{r['speaker']},cosine,{score}")
    conf = tmp_path / "oracle.csv"
    conf.write_text("\n".join(lines) + "\n")
    ev = tmp_path / "ev.csv"
    assert main(["evaluate", "--manifest", str(corpus), "--confidence", str(conf),
                 "--coverage", "0.5,0.7", "--out", str(ev)]) == EXIT_OK
    got = {float(r["coverage_target"]): float(r["der"]) for r in rows(ev)}
    assert got[0.5] == got[0.7] == 0.0 and got[1.0] > 0


def test_evaluate_missing_reference_warns(scored, tmp_path):
    manifest, conf = scored
    data = json.loads(manifest.read_text())
    del data["conversations"][0]["reference"]
    for c in data["conversations"]:
        for k in ("embeddings", "hypothesis", "reference"):
            if k in c:
                c[k] = str(manifest.parent / c[k])
    m = tmp_path / "m.json"
    m.write_text(json.dumps(data))
    out = tmp_path / "ev.csv"
    code = main(["evaluate", "--manifest", str(m), "--confidence", str(conf), "--out", str(out)])
    assert code == EXIT_WARN
    assert out.exists()


def test_threshold_then_apply(tmp_path):
    val = synth(tmp_path / "val", "--seed", "0")
    test = synth(tmp_path / "test", "--seed", "100")
    vconf, tconf = tmp_path / "v.csv", tmp_path / "t.csv"
    for m, c in ((val, vconf), (test, tconf)):
        assert main(["score", "--manifest", str(m), "--out", str(c)]) == EXIT_OK
    js, metrics = tmp_path / "thr.json", tmp_path / "test.csv"
    assert main(["threshold", "--manifest", str(val), "--confidence", str(vconf),
                 "--method", "local", "--out", str(js), "--apply-manifest", str(test),
                 "--apply-confidence", str(tconf), "--apply-out", str(metrics)]) == EXIT_OK
    chosen = json.loads(js.read_text())
    assert chosen["method"] == "local"
    (row,) = rows(metrics)
    assert row["method"] == "local" and row["conversation_id"] == "ALL"
    assert 0.0 < float(row["achieved_coverage"]) <= 1.0


def test_threshold_apply_needs_all_paths(scored, tmp_path):
    manifest, conf = scored
    assert main(["threshold", "--manifest", str(manifest), "--confidence", str(conf),
                 "--method", "cosine", "--out", str(tmp_path / "t.json"),
                 "--apply-manifest", str(manifest)]) == EXIT_FATAL


def test_histogram(scored, tmp_path):
    _, conf = scored
    out = tmp_path / "h.csv"
    assert main(["histogram", "--confidence", str(conf), "--bins", "5", "--out", str(out)]) == 0
    got = rows(out)
    assert len(got) == 15
    total = sum(float(r["duration"]) for r in got if r["method"] == "cosine")
    anns = [a for a in ingest.read_confidence(conf) if a.method is Method.COSINE]
    assert total == pytest.approx(sum(a.segment.duration() for a in anns))


def test_parallel_jobs_match_serial(tmp_path):
    manifest = synth(tmp_path / "c", "--speakers", "2")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["diarize", "--manifest", str(manifest), "--out", str(a)]) == EXIT_OK
    assert main(["diarize", "--manifest", str(manifest), "--out", str(b), "--jobs", "2"]) == 0
    assert (a / "hypothesis.rttm").read_bytes() == (b / "hypothesis.rttm").read_bytes()


def test_bad_method_name_is_usage_error(corpus, tmp_path):
    with pytest.raises(SystemExit):
        main(["score", "--manifest", str(corpus), "--methods", "entropy",
              "--out", str(tmp_path / "x.csv")])


def test_grid_range_flag(scored, tmp_path):
    manifest, conf = scored
    out = tmp_path / "sw.csv"
    assert main(["sweep", "--manifest", str(manifest), "--confidence", str(conf),
                 "--methods", "cosine", "--grid", "0.5:1.0:0.25", "--out", str(out)]) == 0
    assert [float(r["coverage_target"]) for r in rows(out)] == [0.5, 0.75, 1.0]


def test_paths_in_manifest_are_relative(corpus):
    data = json.loads(Path(corpus).read_text())
    assert all(not Path(c["embeddings"]).is_absolute() for c in data["conversations"])
