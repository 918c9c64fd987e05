"""DER, confidence-ranked coverage partitions and covered DER (cDER).

DER is computed exactly on elementary intervals ("atoms"): the timeline is
cut at every reference, hypothesis and no-score boundary, so that inside
each atom the set of active reference and hypothesis speakers is constant.
A prepared :class:`DerScorer` can then be re-evaluated cheaply under any
extra exclusion region, which is how cDER sweeps stay fast.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .confidence import ConfidenceAnnotation
from .core import TIME_EPS, Diarization, TimeInterval, Timeline

METRICS_HEADER = ["conversation_id", "method", "coverage_target", "achieved_coverage",
                  "miss", "false_alarm", "speaker_error", "scored_speech", "der"]
COVERAGE_TOL = 1e-9


@dataclass(frozen=True)
class ScoringConfig:
    collar: float = 0.25
    exclude_overlap: bool = True

    def __post_init__(self):
        if not (self.collar >= 0 and math.isfinite(self.collar)):
            raise ValueError(f"collar must be a non-negative number, got {self.collar}")


@dataclass(frozen=True)
class DerBreakdown:
    miss: float = 0.0
    false_alarm: float = 0.0
    speaker_error: float = 0.0
    scored_speech: float = 0.0

    @property
    def scorable(self) -> bool:
        return self.scored_speech > TIME_EPS

    @property
    def der(self) -> float:
        """Error rate; NaN when there is no scored reference speech."""
        if not self.scorable:
            return math.nan
        return (self.miss + self.false_alarm + self.speaker_error) / self.scored_speech

    def __add__(self, other: "DerBreakdown") -> "DerBreakdown":
        return DerBreakdown(self.miss + other.miss, self.false_alarm + other.false_alarm,
                            self.speaker_error + other.speaker_error,
                            self.scored_speech + other.scored_speech)


def corpus_aggregate(breakdowns: Iterable[DerBreakdown]) -> DerBreakdown:
    total = DerBreakdown()
    for b in breakdowns:
        total = total + b
    return total


def no_score_region(ref: Diarization, config: ScoringConfig = ScoringConfig()) -> Timeline:
    """Collar zones around reference boundaries, plus reference overlap if excluded.

    Boundaries come from each speaker's merged timeline, so splitting a
    reference turn into adjacent pieces adds no collar.
    """
    region = Timeline()
    per_speaker = [ref.speaker_timeline(spk) for spk in ref.speakers]
    if config.collar > 0:
        zones = []
        for tl in per_speaker:
            for iv in tl:
                for b in (iv.start, iv.end):
                    zones.append(TimeInterval(max(0.0, b - config.collar), b + config.collar))
        region = Timeline(zones)
    if config.exclude_overlap:
        overlap = []
        for i in range(len(per_speaker)):
            for j in range(i + 1, len(per_speaker)):
                overlap.extend(per_speaker[i].intersect(per_speaker[j]).intervals)
        region = region.union(Timeline(overlap))
    return region


def _timeline_bounds(tl: Timeline) -> list[float]:
    out = []
    for iv in tl:
        out.extend((iv.start, iv.end))
    return out


class DerScorer:
    """Atom decomposition of one (reference, hypothesis) pair.

    ``extra_boundaries`` should contain the edges of any region later passed
    to :meth:`evaluate`; other regions still work but force a rebuild.
    """

    def __init__(self, ref: Diarization, hyp: Diarization,
                 config: ScoringConfig = ScoringConfig(), extra_boundaries: Iterable[float] = ()):
        self.ref = ref
        self.hyp = hyp
        self.config = config
        self._extra = list(extra_boundaries)
        self.ref_speakers = ref.speakers
        self.hyp_speakers = hyp.speakers
        noscore = no_score_region(ref, config)
        pts = [t for s in ref.segments for t in (s.start, s.end)]
        pts += [t for s in hyp.segments for t in (s.start, s.end)]
        pts += _timeline_bounds(noscore)
        pts += self._extra
        self.bounds = np.unique(np.asarray(pts, dtype=float))
        if self.bounds.size < 2:
            self.bounds = np.zeros(0)
            mid = np.zeros(0)
            self.duration = np.zeros(0)
        else:
            mid = 0.5 * (self.bounds[:-1] + self.bounds[1:])
            self.duration = np.diff(self.bounds)
        self.midpoints = mid
        self.ref_active = np.column_stack(
            [ref.speaker_timeline(s).contains_many(mid) for s in self.ref_speakers]
        ) if self.ref_speakers else np.zeros((mid.size, 0), dtype=bool)
        self.hyp_active = np.column_stack(
            [hyp.speaker_timeline(s).contains_many(mid) for s in self.hyp_speakers]
        ) if self.hyp_speakers else np.zeros((mid.size, 0), dtype=bool)
        self.scored = ~noscore.contains_many(mid)

    def _weights(self, excluded: Timeline | None) -> np.ndarray:
        keep = self.scored
        if excluded is not None and excluded:
            keep = keep & ~excluded.contains_many(self.midpoints)
        return np.where(keep, self.duration, 0.0)

    def _aligned(self, excluded: Timeline | None) -> bool:
        if excluded is None or not excluded:
            return True
        return bool(np.all(np.isin(_timeline_bounds(excluded), self.bounds)))

    def overlap_matrix(self, excluded: Timeline | None = None) -> np.ndarray:
        """Scored co-activity duration, hyp speakers x ref speakers."""
        w = self._weights(excluded)
        return (self.hyp_active * w[:, None]).T @ self.ref_active.astype(float)

    def mapping(self, excluded: Timeline | None = None) -> dict[str, str]:
        return _optimal_mapping(self.overlap_matrix(excluded), self.hyp_speakers, self.ref_speakers)

    def evaluate(self, excluded: Timeline | None = None) -> DerBreakdown:
        """DER breakdown with ``excluded`` removed from the scoring region."""
        if not self._aligned(excluded):
            extra = self._extra + _timeline_bounds(excluded)
            return DerScorer(self.ref, self.hyp, self.config, extra).evaluate(excluded)
        w = self._weights(excluded)
        overlap = (self.hyp_active * w[:, None]).T @ self.ref_active.astype(float)
        rows, cols = max_overlap_assignment(overlap)
        n_ref = self.ref_active.sum(axis=1)
        n_hyp = self.hyp_active.sum(axis=1)
        correct = np.zeros(w.size)
        for h, r in zip(rows, cols):
            correct += self.hyp_active[:, h] & self.ref_active[:, r]
        miss = float(np.sum(w * np.maximum(n_ref - n_hyp, 0)))
        fa = float(np.sum(w * np.maximum(n_hyp - n_ref, 0)))
        conf = float(np.sum(w * (np.minimum(n_ref, n_hyp) - correct)))
        scored = float(np.sum(w * n_ref))
        return DerBreakdown(miss, fa, max(conf, 0.0), scored)


def max_overlap_assignment(overlap: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-weight one-to-one assignment (rows, cols); zero-overlap pairs dropped."""
    if overlap.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    keep = overlap[rows, cols] > 0
    return rows[keep], cols[keep]


def _optimal_mapping(overlap: np.ndarray, hyp_speakers: Sequence[str],
                     ref_speakers: Sequence[str]) -> dict[str, str]:
    rows, cols = max_overlap_assignment(overlap)
    return {hyp_speakers[h]: ref_speakers[r] for h, r in zip(rows, cols)}


def optimal_speaker_mapping(ref: Diarization, hyp: Diarization,
                            config: ScoringConfig = ScoringConfig()) -> dict[str, str]:
    """One-to-one hyp -> ref speaker map maximising correctly attributed time.

    Solved as a maximum-weight assignment (Hungarian method) on the
    overlap-duration matrix, measured inside the scoring region. Pairs with
    no overlap are left unmapped.
    """
    return DerScorer(ref, hyp, config).mapping()


def compute_der(ref: Diarization, hyp: Diarization,
                config: ScoringConfig = ScoringConfig()) -> DerBreakdown:
    return DerScorer(ref, hyp, config).evaluate()


@dataclass(frozen=True)
class CoveragePartition:
    high: tuple[ConfidenceAnnotation, ...] = ()
    low: tuple[ConfidenceAnnotation, ...] = ()
    achieved_coverage: float = 1.0

    def low_timeline(self) -> Timeline:
        return Timeline(a.segment.interval for a in self.low)

    def high_duration(self) -> float:
        return sum(a.segment.duration() for a in self.high)

    def total_duration(self) -> float:
        return self.high_duration() + sum(a.segment.duration() for a in self.low)


def _rank_key(a: ConfidenceAnnotation):
    return (-a.score, a.segment.start, a.segment.end)


def partition_by_confidence(annotations: Sequence[ConfidenceAnnotation],
                            target_coverage: float) -> CoveragePartition:
    """Split segments into high/low confidence by rank.

    Segments are taken in descending score order (earlier start first on
    ties) while the accepted share of total duration stays within
    ``target_coverage``; the first segment that does not fit ends the high
    set. Coverage never overshoots the target.
    """
    if not 0.0 <= target_coverage <= 1.0:
        raise ValueError(f"target coverage must lie in [0, 1], got {target_coverage}")
    if not annotations:
        return CoveragePartition((), (), 1.0)
    ranked = sorted(annotations, key=_rank_key)
    total = sum(a.segment.duration() for a in ranked)
    accepted = 0.0
    cut = 0
    for a in ranked:
        if (accepted + a.segment.duration()) / total <= target_coverage + COVERAGE_TOL:
            accepted += a.segment.duration()
            cut += 1
        else:
            break
    return CoveragePartition(tuple(ranked[:cut]), tuple(ranked[cut:]), min(accepted / total, 1.0))


def compute_cder(ref: Diarization, hyp: Diarization, partition: CoveragePartition,
                 config: ScoringConfig = ScoringConfig()) -> DerBreakdown:
    """DER with low-confidence hypothesis segments removed from the scoring region.

    Reference speech under a low-confidence segment is neither a miss nor
    part of the scored speech; with an empty low set this is plain DER.
    """
    low = partition.low_timeline()
    return DerScorer(ref, hyp, config, _timeline_bounds(low)).evaluate(low)


@dataclass(frozen=True)
class MetricsRow:
    conversation_id: str
    method: str
    coverage_target: float
    achieved_coverage: float
    breakdown: DerBreakdown = field(default_factory=DerBreakdown)


def _num(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(rows: Iterable[MetricsRow], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in rows:
        b = r.breakdown
        writer.writerow([r.conversation_id, r.method, _num(r.coverage_target),
                         _num(r.achieved_coverage), _num(b.miss), _num(b.false_alarm),
                         _num(b.speaker_error), _num(b.scored_speech), _num(b.der)])


def read_metrics_csv(stream: IO[str]) -> list[MetricsRow]:
    reader = csv.DictReader(stream)
    out = []
    for rec in reader:
        b = DerBreakdown(float(rec["miss"]), float(rec["false_alarm"]),
                         float(rec["speaker_error"]), float(rec["scored_speech"]))
        out.append(MetricsRow(rec["conversation_id"], rec["method"],
                              float(rec["coverage_target"]), float(rec["achieved_coverage"]), b))
    return out
