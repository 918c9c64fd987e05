import io
import math

import numpy as np
import pytest

from diarconf.confidence import ConfidenceAnnotation, Method
from diarconf.core import Segment, TimeInterval
from diarconf.metrics import ScoringConfig, compute_der, corpus_aggregate
from diarconf.selection import (EvalConversation, GlobalThreshold, SweepCurve, SweepPoint,
                                apply_threshold, default_grid, evaluate_coverages,
                                evaluate_threshold, histogram, select_global_threshold, sweep,
                                threshold_curve, write_curve_csv, write_histogram_csv)

from instances import to_diarization

NO_COLLAR = ScoringConfig(collar=0.0)


def oracle_corpus(battery, method=Method.COSINE):
    out = []
    for conv in battery:
        anns = tuple(ConfidenceAnnotation(s, method, 0.0 if bad else 1.0)
                     for s, bad in zip(conv.hypothesis.segments, conv.error_mask))
        out.append(EvalConversation(conv.reference, conv.hypothesis, anns))
    return out


def corpus_der(corpus, config=ScoringConfig()):
    return corpus_aggregate(compute_der(c.reference, c.hypothesis, config) for c in corpus).der


def test_default_grid():
    g = default_grid()
    assert g[0] == 0.3 and g[-1] == 1.0 and len(g) == 15
    assert all(round(b - a, 10) == 0.05 for a, b in zip(g, g[1:]))


def test_sweep_single_point_is_corpus_der(battery_eval):
    curve = sweep(battery_eval, Method.LOCAL, [1.0])
    assert len(curve.points) == 1
    assert curve.points[0].cder == corpus_der(battery_eval)


def test_sweep_invariants(battery_eval):
    curve = sweep(battery_eval, Method.COSINE)
    targets = [p.coverage_target for p in curve.points]
    assert targets == default_grid()
    assert all(p.achieved_coverage <= p.coverage_target + 1e-9 for p in curve.points)
    assert curve.points[-1].cder == corpus_der(battery_eval)


def test_sweep_rejects_bad_grid(battery_eval):
    with pytest.raises(ValueError):
        sweep(battery_eval, Method.COSINE, [0.0, 0.5])
    with pytest.raises(ValueError):
        SweepCurve(Method.COSINE, (SweepPoint(0.5, 0.5, None), SweepPoint(0.5, 0.5, None)))


def test_oracle_sweep_non_increasing(battery):
    curve = sweep(oracle_corpus(battery), Method.COSINE)
    cders = [p.cder for p in curve.points]
    assert all(a <= b + 1e-12 for a, b in zip(cders, cders[1:]))
    assert cders[0] == 0.0


def test_pooled_mode_differs_but_agrees_at_one(battery_eval):
    per = sweep(battery_eval, Method.COSINE, [0.7, 1.0])
    pooled = sweep(battery_eval, Method.COSINE, [0.7, 1.0], pooled=True)
    assert pooled.points[-1].cder == per.points[-1].cder
    assert pooled.points[0].achieved_coverage <= 0.7 + 1e-9


def test_evaluate_rows(battery_eval):
    rows = evaluate_coverages(battery_eval, Method.SILHOUETTE, [0.7, 0.9, 1.0],
                              per_conversation=True)
    assert len(rows) == 3 * (len(battery_eval) + 1)
    corpus_rows = [r for r in rows if r.conversation_id == "ALL"]
    assert [r.coverage_target for r in corpus_rows] == [0.7, 0.9, 1.0]
    ders = [r.breakdown.der for r in corpus_rows]
    assert ders[0] < ders[1] < ders[2]


def test_curve_csv(battery_eval):
    buf = io.StringIO()
    write_curve_csv([sweep(battery_eval, Method.COSINE, [0.5, 1.0])], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "method,coverage_target,achieved_coverage,cder"
    assert lines[1].startswith("cosine,0.5,")


# -- global threshold ---------------------------------------------------------

def two_level_corpus():
    # 10 s of speech; the 1 s wrong-speaker segment scores 0, the rest 1
    ref = to_diarization("c", [(0, 5, "A"), (5, 10, "B")])
    hyp = to_diarization("c", [(0, 4, "x"), (4, 5, "y"), (5, 10, "y")])
    scores = [1.0, 0.0, 1.0]
    anns = tuple(ConfidenceAnnotation(s, Method.COSINE, sc) for s, sc in zip(hyp.segments, scores))
    return [EvalConversation(ref, hyp, anns)]


def test_threshold_oracle_example():
    t = select_global_threshold(two_level_corpus(), Method.COSINE, config=NO_COLLAR)
    assert 0.0 < t.threshold <= 1.0
    assert t.validation_coverage == pytest.approx(0.9)
    assert t.validation_cder == 0.0


def test_threshold_all_equal_scores():
    corpus = two_level_corpus()
    c = corpus[0]
    flat = tuple(ConfidenceAnnotation(a.segment, a.method, 0.42) for a in c.annotations)
    corpus = [EvalConversation(c.reference, c.hypothesis, flat)]
    t = select_global_threshold(corpus, Method.COSINE, config=NO_COLLAR)
    assert t.threshold == 0.42 and t.validation_coverage == 1.0
    assert t.validation_cder == corpus_der(corpus, NO_COLLAR)


def test_threshold_errors():
    with pytest.raises(ValueError):
        select_global_threshold([], Method.COSINE)
    with pytest.raises(ValueError):
        select_global_threshold(two_level_corpus(), Method.COSINE, criterion="f1")


def test_threshold_min_coverage_criterion(battery_eval):
    val = battery_eval[:10]
    t = select_global_threshold(val, Method.COSINE, criterion="cder_at_min_coverage",
                                min_coverage=0.8)
    assert t.validation_coverage >= 0.8
    curve = threshold_curve(val, Method.COSINE)
    feasible = [p.cder for p in curve if p.coverage >= 0.8]
    assert t.validation_cder == min(feasible)


def test_threshold_json_round_trip():
    t = GlobalThreshold(Method.SILHOUETTE, 0.123456789, 0.75, 0.0321)
    assert GlobalThreshold.from_json(t.to_json()) == t


def test_threshold_point_is_on_curve(battery_eval):
    val = battery_eval[:10]
    t = select_global_threshold(val, Method.LOCAL)
    curve = threshold_curve(val, Method.LOCAL)
    assert any(p.threshold == t.threshold and abs(p.coverage - t.validation_coverage) <= 1e-9
               and abs(p.cder - t.validation_cder) <= 1e-9 for p in curve)
    assert t.validation_cder / t.validation_coverage == \
        min(p.cder / p.coverage for p in curve if p.coverage > 0)


def test_evaluate_threshold_on_validation_reproduces_choice(battery_eval):
    val = battery_eval[:10]
    t = select_global_threshold(val, Method.COSINE)
    (row,) = evaluate_threshold(val, t)
    assert row.achieved_coverage == pytest.approx(t.validation_coverage, abs=1e-12)
    assert row.breakdown.der == pytest.approx(t.validation_cder, abs=1e-12)
    assert row.coverage_target == t.validation_coverage


# -- apply_threshold ------------------------------------------------------------

def seg_anns(scores, conv="c"):
    return [ConfidenceAnnotation(Segment(conv, TimeInterval(k, k + 1), "a"), Method.COSINE, s)
            for k, s in enumerate(scores)]


def test_apply_threshold_examples():
    anns = seg_anns([0.1, 0.9, 0.5, -0.2])
    everything = apply_threshold(anns, -math.inf)["c"]
    assert len(everything.high) == 4 and everything.achieved_coverage == 1.0
    nothing = apply_threshold(anns, 0.95)["c"]
    assert len(nothing.low) == 4 and nothing.achieved_coverage == 0.0
    mixed = apply_threshold(anns, 0.5)["c"]
    assert sorted(a.score for a in mixed.high) == [0.5, 0.9]
    assert all(a.score < 0.5 for a in mixed.low)


def test_apply_threshold_idempotent_and_order_free():
    rng = np.random.default_rng(0)
    anns = seg_anns(rng.uniform(-1, 1, 30).tolist()) + seg_anns([0.3, 0.4], conv="d")
    t = GlobalThreshold(Method.COSINE, 0.1, 0.5, 0.1)
    first = apply_threshold(anns, t)
    again = apply_threshold([a for p in first.values() for a in p.high + p.low], t)
    shuffled = apply_threshold([anns[i] for i in rng.permutation(len(anns))], t)
    assert first == again == shuffled
    assert sorted(first) == ["c", "d"]


# -- histogram ------------------------------------------------------------------

def test_histogram_examples():
    bins = histogram(seg_anns([0.3, 0.3, 0.3]), 5)
    assert sum(1 for b in bins if b.count) == 1
    bins = histogram(seg_anns([0.0, 1.0]), 2)
    assert [b.count for b in bins] == [1, 1]
    assert (bins[0].low, bins[-1].high) == (0.0, 1.0)
    assert histogram([], 3) == []
    with pytest.raises(ValueError):
        histogram(seg_anns([0.0]), 0)


def test_histogram_duration_weights():
    anns = [ConfidenceAnnotation(Segment("c", TimeInterval(0, 2.5), "a"), Method.LOCAL, 0.0),
            ConfidenceAnnotation(Segment("c", TimeInterval(3, 3.5), "a"), Method.LOCAL, 1.0)]
    bins = histogram(anns, 4)
    assert [b.duration for b in bins] == [2.5, 0.0, 0.0, 0.5]
    buf = io.StringIO()
    write_histogram_csv([(Method.LOCAL, b) for b in bins], buf)
    assert buf.getvalue().splitlines()[0] == "method,bin_low,bin_high,duration,count"
    assert buf.getvalue().splitlines()[1] == "local,0.0,0.25,2.5,1"
