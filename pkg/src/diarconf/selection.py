"""Coverage sweeps, global threshold selection and score histograms."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .confidence import ConfidenceAnnotation, Method
from .core import Diarization, Timeline
from .metrics import (COVERAGE_TOL, CoveragePartition, DerBreakdown, DerScorer, MetricsRow,
                      ScoringConfig, corpus_aggregate, partition_by_confidence)

CURVE_HEADER = ["method", "coverage_target", "achieved_coverage", "cder"]
HISTOGRAM_HEADER = ["method", "bin_low", "bin_high", "duration", "count"]
CRITERIA = ("ratio", "cder_at_min_coverage")


def default_grid() -> list[float]:
    """0.30, 0.35, ..., 1.00."""
    return [round(0.30 + 0.05 * k, 2) for k in range(15)]


@dataclass(frozen=True)
class EvalConversation:
    """Reference, hypothesis and the confidence annotations of its segments."""

    reference: Diarization
    hypothesis: Diarization
    annotations: tuple[ConfidenceAnnotation, ...]

    @property
    def conversation_id(self) -> str:
        return self.hypothesis.conversation_id

    def for_method(self, method) -> list[ConfidenceAnnotation]:
        m = Method(method)
        return [a for a in self.annotations if a.method is m]


class _PreparedConversation:
    def __init__(self, conv: EvalConversation, method: Method, config: ScoringConfig):
        self.conversation_id = conv.conversation_id
        self.annotations = conv.for_method(method)
        bounds = [t for a in self.annotations for t in (a.segment.start, a.segment.end)]
        self.scorer = DerScorer(conv.reference, conv.hypothesis, config, bounds)
        self.total = sum(a.segment.duration() for a in self.annotations)

    def evaluate(self, low: Sequence[ConfidenceAnnotation]) -> DerBreakdown:
        return self.scorer.evaluate(Timeline(a.segment.interval for a in low))


def _prepare(corpus: Iterable[EvalConversation], method, config) -> list[_PreparedConversation]:
    return [_PreparedConversation(c, Method(method), config) for c in corpus]


@dataclass(frozen=True)
class SweepPoint:
    coverage_target: float
    achieved_coverage: float
    breakdown: DerBreakdown

    @property
    def cder(self) -> float:
        return self.breakdown.der


@dataclass(frozen=True)
class SweepCurve:
    method: Method
    points: tuple[SweepPoint, ...]

    def __post_init__(self):
        targets = [p.coverage_target for p in self.points]
        if any(b <= a for a, b in zip(targets, targets[1:])):
            raise ValueError("coverage targets must be strictly increasing")


def _split_pooled(prepared, target):
    pooled = [a for p in prepared for a in p.annotations]
    part = partition_by_confidence(pooled, target)
    low = defaultdict(list)
    for a in part.low:
        low[a.segment.conversation_id].append(a)
    return [low[p.conversation_id] for p in prepared], part.achieved_coverage


def _coverage_rows(prepared, method: Method, target: float, pooled: bool):
    """Per-conversation (id, achieved coverage, breakdown) plus corpus coverage."""
    rows = []
    if pooled:
        lows, achieved = _split_pooled(prepared, target)
        for p, low in zip(prepared, lows):
            low_dur = sum(a.segment.duration() for a in low)
            cov = (p.total - low_dur) / p.total if p.total > 0 else 1.0
            rows.append((p.conversation_id, cov, p.evaluate(low)))
        return rows, achieved
    high_total = total = 0.0
    for p in prepared:
        part = partition_by_confidence(p.annotations, target)
        rows.append((p.conversation_id, part.achieved_coverage, p.evaluate(part.low)))
        high_total += part.high_duration()
        total += p.total
    return rows, (high_total / total if total > 0 else 1.0)


def evaluate_coverages(corpus: Sequence[EvalConversation], method, coverages: Iterable[float],
                       config: ScoringConfig = ScoringConfig(), per_conversation: bool = False,
                       pooled: bool = False, corpus_id: str = "ALL") -> list[MetricsRow]:
    """Metrics rows at fixed coverage targets: corpus rows, optionally per conversation."""
    method = Method(method)
    prepared = _prepare(corpus, method, config)
    out = []
    for target in coverages:
        rows, achieved = _coverage_rows(prepared, method, target, pooled)
        if per_conversation:
            out.extend(MetricsRow(cid, method.value, target, cov, b) for cid, cov, b in rows)
        out.append(MetricsRow(corpus_id, method.value, target, achieved,
                              corpus_aggregate(b for _, _, b in rows)))
    return out


def sweep(corpus: Sequence[EvalConversation], method, grid: Iterable[float] | None = None,
          config: ScoringConfig = ScoringConfig(), pooled: bool = False) -> SweepCurve:
    grid = sorted(set(default_grid() if grid is None else grid))
    for g in grid:
        if not 0.0 < g <= 1.0:
            raise ValueError(f"grid values must lie in (0, 1], got {g}")
    rows = evaluate_coverages(corpus, method, grid, config, pooled=pooled)
    return SweepCurve(Method(method), tuple(
        SweepPoint(r.coverage_target, r.achieved_coverage, r.breakdown) for r in rows))


def write_curve_csv(curves: Iterable[SweepCurve], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for curve in curves:
        for p in curve.points:
            writer.writerow([curve.method.value, repr(float(p.coverage_target)),
                             repr(float(p.achieved_coverage)), repr(float(p.cder))])


@dataclass(frozen=True)
class ThresholdPoint:
    threshold: float
    coverage: float
    breakdown: DerBreakdown

    @property
    def cder(self) -> float:
        return self.breakdown.der


@dataclass(frozen=True)
class GlobalThreshold:
    method: Method
    threshold: float
    validation_coverage: float
    validation_cder: float

    def to_json(self) -> str:
        return json.dumps({"method": self.method.value, "threshold": self.threshold,
                           "validation_coverage": self.validation_coverage,
                           "validation_cder": self.validation_cder}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GlobalThreshold":
        d = json.loads(text)
        return cls(Method(d["method"]), float(d["threshold"]), float(d["validation_coverage"]),
                   float(d["validation_cder"]))


def _threshold_split(annotations, threshold):
    high = [a for a in annotations if a.score >= threshold]
    low = [a for a in annotations if a.score < threshold]
    return high, low


def threshold_curve(corpus: Sequence[EvalConversation], method,
                    config: ScoringConfig = ScoringConfig()) -> list[ThresholdPoint]:
    """(coverage, cDER) for every distinct observed score used as a threshold."""
    prepared = _prepare(corpus, method, config)
    scores = sorted({a.score for p in prepared for a in p.annotations})
    total = sum(p.total for p in prepared)
    out = []
    for t in scores:
        high_dur = 0.0
        parts = []
        for p in prepared:
            high, low = _threshold_split(p.annotations, t)
            high_dur += sum(a.segment.duration() for a in high)
            parts.append(p.evaluate(low))
        out.append(ThresholdPoint(t, high_dur / total if total > 0 else 1.0,
                                  corpus_aggregate(parts)))
    return out


def select_global_threshold(corpus: Sequence[EvalConversation], method,
                            criterion: str = "ratio", min_coverage: float = 0.5,
                            config: ScoringConfig = ScoringConfig()) -> GlobalThreshold:
    """Pick the raw-score threshold on validation data.

    ``"ratio"`` minimises cDER / coverage; ``"cder_at_min_coverage"``
    minimises cDER among thresholds keeping at least ``min_coverage``.
    Ties go to the larger coverage.
    """
    if not corpus:
        raise ValueError("validation corpus is empty")
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    points = [p for p in threshold_curve(corpus, method, config)
              if p.coverage > 0 and not math.isnan(p.cder)]
    if criterion == "cder_at_min_coverage":
        points = [p for p in points if p.coverage >= min_coverage - COVERAGE_TOL]
        objective = [p.cder for p in points]
    else:
        objective = [p.cder / p.coverage for p in points]
    if not points:
        raise ValueError("no scorable threshold candidate on the validation corpus")
    best_val = min(objective)
    tied = [p for p, v in zip(points, objective) if v <= best_val + 1e-12]
    best = max(tied, key=lambda p: (p.coverage, -p.threshold))
    return GlobalThreshold(Method(method), float(best.threshold), float(best.coverage),
                           float(best.cder))


def apply_threshold(annotations: Iterable[ConfidenceAnnotation], threshold
                    ) -> dict[str, CoveragePartition]:
    """Raw-score partition per conversation: ``score >= threshold`` is high."""
    t = threshold.threshold if isinstance(threshold, GlobalThreshold) else float(threshold)
    by_conv = defaultdict(list)
    for a in annotations:
        by_conv[a.segment.conversation_id].append(a)
    out = {}
    for conv_id in sorted(by_conv):
        anns = sorted(by_conv[conv_id], key=lambda a: (a.segment.start, a.segment.end))
        high, low = _threshold_split(anns, t)
        total = sum(a.segment.duration() for a in anns)
        cov = sum(a.segment.duration() for a in high) / total if total > 0 else 1.0
        out[conv_id] = CoveragePartition(tuple(high), tuple(low), cov)
    return out


def evaluate_threshold(corpus: Sequence[EvalConversation], threshold: GlobalThreshold,
                       config: ScoringConfig = ScoringConfig(), per_conversation: bool = False,
                       corpus_id: str = "ALL") -> list[MetricsRow]:
    """Metrics of a fixed raw-score threshold on (unseen) data.

    The ``coverage_target`` column carries the validation coverage of the
    threshold, the operating point it was chosen for.
    """
    prepared = _prepare(corpus, threshold.method, config)
    rows, high_total, total = [], 0.0, 0.0
    for p in prepared:
        high, low = _threshold_split(p.annotations, threshold.threshold)
        hd = sum(a.segment.duration() for a in high)
        rows.append((p.conversation_id, hd / p.total if p.total > 0 else 1.0, p.evaluate(low)))
        high_total += hd
        total += p.total
    target = threshold.validation_coverage
    method = threshold.method.value
    out = []
    if per_conversation:
        out.extend(MetricsRow(cid, method, target, cov, b) for cid, cov, b in rows)
    out.append(MetricsRow(corpus_id, method, target, high_total / total if total > 0 else 1.0,
                          corpus_aggregate(b for _, _, b in rows)))
    return out


@dataclass(frozen=True)
class HistogramBin:
    low: float
    high: float
    duration: float
    count: int


def histogram(annotations: Sequence[ConfidenceAnnotation], bin_count: int = 20) -> list[HistogramBin]:
    """Equal-width bins over [min score, max score], weighted by duration and by count."""
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    if not annotations:
        return []
    scores = np.array([a.score for a in annotations])
    durations = np.array([a.segment.duration() for a in annotations])
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        hi = lo + 1.0
    counts, edges = np.histogram(scores, bins=bin_count, range=(lo, hi))
    weights, _ = np.histogram(scores, bins=edges, weights=durations)
    return [HistogramBin(float(edges[i]), float(edges[i + 1]), float(weights[i]), int(counts[i]))
            for i in range(bin_count)]


def write_histogram_csv(rows: Iterable[tuple[Method, HistogramBin]], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HISTOGRAM_HEADER)
    for method, b in rows:
        writer.writerow([Method(method).value, repr(b.low), repr(b.high), repr(b.duration), b.count])
