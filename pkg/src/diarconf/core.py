"""Domain types and interval arithmetic shared across the package.

All times are float seconds. Intervals are closed-open, ``[start, end)``.
Every type here is immutable once constructed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Absolute tolerance used for duration comparisons.
TIME_EPS = 1e-6


@dataclass(frozen=True, order=True)
class TimeInterval:
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"non-finite interval bounds ({self.start}, {self.end})")
        if self.start < 0:
            raise ValueError(f"interval start must be non-negative, got {self.start}")
        if not self.end > self.start:
            raise ValueError(f"interval end must exceed start: [{self.start}, {self.end})")

    def duration(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)

    def contains(self, t: float) -> bool:
        return self.start <= t < self.end

    def shifted(self, offset: float) -> "TimeInterval":
        return TimeInterval(self.start + offset, self.end + offset)


@dataclass(frozen=True)
class Segment:
    conversation_id: str
    interval: TimeInterval
    speaker: str

    def __post_init__(self):
        if not self.speaker:
            raise ValueError("speaker label must be non-empty")

    @property
    def start(self) -> float:
        return self.interval.start

    @property
    def end(self) -> float:
        return self.interval.end

    def duration(self) -> float:
        return self.interval.duration()


def _segment_key(seg: Segment):
    return (seg.interval.start, seg.interval.end)


@dataclass(frozen=True)
class Diarization:
    """Speaker-labelled segments of one conversation, sorted by time.

    Segments are sorted on construction. Segments of the same speaker must
    not overlap; different speakers may (reference annotations often do).
    """

    conversation_id: str
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=_segment_key))
        for seg in segs:
            if seg.conversation_id != self.conversation_id:
                raise ValueError(
                    f"segment of {seg.conversation_id!r} in diarization of {self.conversation_id!r}"
                )
        last_end: dict[str, float] = {}
        for seg in segs:
            prev = last_end.get(seg.speaker)
            if prev is not None and seg.start < prev - TIME_EPS:
                raise ValueError(
                    f"overlapping segments for speaker {seg.speaker!r} in "
                    f"{self.conversation_id!r} near t={seg.start:.3f}"
                )
            last_end[seg.speaker] = max(prev or 0.0, seg.end)
        object.__setattr__(self, "segments", segs)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def speakers(self) -> list[str]:
        """Speaker labels in order of first appearance."""
        return list(dict.fromkeys(s.speaker for s in self.segments))

    def speaker_timeline(self, speaker: str) -> "Timeline":
        return Timeline(s.interval for s in self.segments if s.speaker == speaker)

    def timeline(self) -> "Timeline":
        return Timeline(s.interval for s in self.segments)

    def total_duration(self) -> float:
        return sum(s.duration() for s in self.segments)

    def relabeled(self, mapping: dict[str, str]) -> "Diarization":
        return Diarization(
            self.conversation_id,
            tuple(Segment(s.conversation_id, s.interval, mapping.get(s.speaker, s.speaker))
                  for s in self.segments),
        )


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray
    interval: TimeInterval

    def __post_init__(self):
        vec = _frozen_array(self.vector)
        if vec.ndim != 1 or vec.size < 2:
            raise ValueError(f"embedding must be a vector of dimension >= 2, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding contains non-finite values")
        if not np.linalg.norm(vec) > 0:
            raise ValueError("embedding has zero norm")
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.size


@dataclass(frozen=True, eq=False)
class EmbeddingTrack:
    """Time-ordered embeddings of one conversation, all of dimension ``dim``."""

    conversation_id: str
    dim: int
    embeddings: tuple[Embedding, ...] = ()

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"embedding dimension must be >= 2, got {self.dim}")
        embs = tuple(sorted(self.embeddings, key=lambda e: (e.interval.start, e.interval.end)))
        for i, e in enumerate(embs):
            if e.dim != self.dim:
                raise ValueError(f"embedding {i} has dimension {e.dim}, expected {self.dim}")
        object.__setattr__(self, "embeddings", embs)

    def __len__(self):
        return len(self.embeddings)

    @classmethod
    def from_arrays(cls, conversation_id: str, starts: Sequence[float], ends: Sequence[float],
                    vectors) -> "EmbeddingTrack":
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        embs = [Embedding(v, TimeInterval(float(s), float(e)))
                for s, e, v in zip(starts, ends, vectors)]
        return cls(conversation_id, vectors.shape[1], tuple(embs))

    def matrix(self) -> np.ndarray:
        """The N x D embedding matrix (a fresh copy)."""
        if not self.embeddings:
            return np.zeros((0, self.dim))
        return np.vstack([e.vector for e in self.embeddings])

    def midpoints(self) -> np.ndarray:
        return np.array([e.interval.midpoint for e in self.embeddings], dtype=float)


@dataclass(frozen=True)
class Timeline:
    """A set of disjoint, sorted, non-touching intervals.

    Overlapping or adjacent input intervals are merged on construction.
    """

    intervals: tuple[TimeInterval, ...] = field(default=())

    def __init__(self, intervals: Iterable[TimeInterval | tuple[float, float]] = ()):
        items = sorted(iv if isinstance(iv, TimeInterval) else TimeInterval(*iv)
                       for iv in intervals)
        merged: list[list[float]] = []
        for iv in items:
            if merged and iv.start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], iv.end)
            else:
                merged.append([iv.start, iv.end])
        object.__setattr__(self, "intervals", tuple(TimeInterval(s, e) for s, e in merged))

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __bool__(self):
        return bool(self.intervals)

    def total_duration(self) -> float:
        return sum(iv.duration() for iv in self.intervals)

    def contains(self, t: float) -> bool:
        return any(iv.contains(t) for iv in self.intervals)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end arrays, handy for vectorised membership tests."""
        starts = np.array([iv.start for iv in self.intervals], dtype=float)
        ends = np.array([iv.end for iv in self.intervals], dtype=float)
        return starts, ends

    def contains_many(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if not self.intervals:
            return np.zeros(times.shape, dtype=bool)
        starts, ends = self.bounds()
        idx = np.searchsorted(starts, times, side="right") - 1
        ok = idx >= 0
        out = np.zeros(times.shape, dtype=bool)
        out[ok] = times[ok] < ends[idx[ok]]
        return out

    def union(self, other: "Timeline") -> "Timeline":
        return timeline_union(self, other)

    def intersect(self, other: "Timeline") -> "Timeline":
        return timeline_intersect(self, other)

    def subtract(self, other: "Timeline") -> "Timeline":
        return timeline_subtract(self, other)

    __or__ = union
    __and__ = intersect
    __sub__ = subtract


def timeline_union(a: Timeline, b: Timeline) -> Timeline:
    return Timeline(a.intervals + b.intervals)


def timeline_intersect(a: Timeline, b: Timeline) -> Timeline:
    out = []
    i = j = 0
    xs, ys = a.intervals, b.intervals
    while i < len(xs) and j < len(ys):
        lo = max(xs[i].start, ys[j].start)
        hi = min(xs[i].end, ys[j].end)
        if hi > lo:
            out.append(TimeInterval(lo, hi))
        if xs[i].end < ys[j].end:
            i += 1
        else:
            j += 1
    return Timeline(out)


def timeline_subtract(a: Timeline, b: Timeline) -> Timeline:
    out = []
    ys = b.intervals
    j = 0
    for iv in a.intervals:
        cursor = iv.start
        while j < len(ys) and ys[j].end <= cursor:
            j += 1
        k = j
        while k < len(ys) and ys[k].start < iv.end:
            if ys[k].start > cursor:
                out.append(TimeInterval(cursor, ys[k].start))
            cursor = max(cursor, ys[k].end)
            k += 1
        if cursor < iv.end:
            out.append(TimeInterval(cursor, iv.end))
    return Timeline(out)
