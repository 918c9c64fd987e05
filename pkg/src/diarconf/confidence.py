"""Segment-level confidence scores for a diarization hypothesis.

Every method maps each hypothesis segment to a score in [-1, 1]. Embeddings
are attached to segments by window midpoint, scores are computed per
embedding and averaged per segment. Segments without any embedding get the
floor score and ``covered=False``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import Diarization, EmbeddingTrack, Segment

FLOOR_SCORE = -1.0
LOCAL_EPS = 1e-4
LOCAL_MAX_ITERS = 20


class Method(str, enum.Enum):
    COSINE = "cosine"
    LOCAL = "local"
    SILHOUETTE = "silhouette"
    SPECTRAL = "spectral"

    def __str__(self):
        return self.value


class BasisUnavailableError(ValueError):
    """The spectral score was requested for a hypothesis without a spectral basis."""


@dataclass(frozen=True)
class ConfidenceAnnotation:
    segment: Segment
    method: Method
    score: float
    covered: bool = True

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not math.isfinite(self.score):
            raise ValueError(f"confidence score must be finite, got {self.score}")


@dataclass(frozen=True, eq=False)
class SpeakerCentroid:
    speaker: str
    vector: np.ndarray | None

    @property
    def defined(self) -> bool:
        return self.vector is not None


@dataclass(frozen=True)
class SegmentEmbeddingMap:
    """Embedding indices per hypothesis segment (same order as the segments)."""

    members: tuple[tuple[int, ...], ...]
    unassigned: tuple[int, ...]

    def covered(self, i: int) -> bool:
        return bool(self.members[i])


def map_embeddings_to_segments(d: Diarization, track: EmbeddingTrack) -> SegmentEmbeddingMap:
    """Attach each embedding to the segment containing its window midpoint.

    When hypothesis segments overlap, the segment with the latest start
    wins, so every embedding lands in at most one segment.
    """
    if d.segments and track.conversation_id != d.conversation_id:
        raise ValueError(
            f"track {track.conversation_id!r} does not match diarization {d.conversation_id!r}")
    members: list[list[int]] = [[] for _ in d.segments]
    unassigned = []
    starts = np.array([s.start for s in d.segments])
    ends = np.array([s.end for s in d.segments])
    for j, mid in enumerate(track.midpoints()):
        hit = np.nonzero((starts <= mid) & (mid < ends))[0]
        if hit.size:
            members[int(hit[-1])].append(j)
        else:
            unassigned.append(j)
    return SegmentEmbeddingMap(tuple(tuple(m) for m in members), tuple(unassigned))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def _cos(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row of ``x`` with vector ``c``."""
    cn = np.linalg.norm(c)
    xn = np.linalg.norm(x, axis=-1)
    denom = xn * cn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, (x @ c) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(out, -1.0, 1.0)


def _speaker_members(d: Diarization, mapping: SegmentEmbeddingMap) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {spk: [] for spk in d.speakers}
    for seg, idx in zip(d.segments, mapping.members):
        out[seg.speaker].extend(idx)
    return out


def _centroids_from(vectors: np.ndarray, groups: dict[str, list[int]]) -> list[SpeakerCentroid]:
    out = []
    for spk, idx in groups.items():
        if idx:
            mean = vectors[idx].mean(axis=0)
            out.append(SpeakerCentroid(spk, mean if np.linalg.norm(mean) > 0 else None))
        else:
            out.append(SpeakerCentroid(spk, None))
    return out


def compute_centroids(d: Diarization, mapping: SegmentEmbeddingMap,
                      track: EmbeddingTrack) -> list[SpeakerCentroid]:
    """Per-speaker mean of the (unit-normalised) embeddings in its segments.

    A speaker with no embeddings, or whose unit vectors cancel exactly, has
    an undefined centroid (``vector is None``).
    """
    return _centroids_from(_unit_rows(track.matrix()), _speaker_members(d, mapping))


def _aggregate(d: Diarization, mapping: SegmentEmbeddingMap, method: Method,
               per_embedding: np.ndarray, usable: dict[str, bool],
               floor: float) -> list[ConfidenceAnnotation]:
    out = []
    for seg, idx in zip(d.segments, mapping.members):
        if idx and usable.get(seg.speaker, False):
            score = float(np.clip(np.mean(per_embedding[list(idx)]), -1.0, 1.0))
            out.append(ConfidenceAnnotation(seg, method, score, True))
        else:
            out.append(ConfidenceAnnotation(seg, method, floor, False))
    return out


def _cosine_to_centroids(x: np.ndarray, d: Diarization, mapping: SegmentEmbeddingMap,
                         centroids: dict[str, np.ndarray | None]) -> np.ndarray:
    scores = np.full(x.shape[0], np.nan)
    for seg, idx in zip(d.segments, mapping.members):
        c = centroids.get(seg.speaker)
        if idx and c is not None:
            scores[list(idx)] = _cos(x[list(idx)], c)
    return scores


def cosine_similarity_score(d: Diarization, mapping: SegmentEmbeddingMap, track: EmbeddingTrack,
                            floor: float = FLOOR_SCORE,
                            method: Method = Method.COSINE) -> list[ConfidenceAnnotation]:
    x = _unit_rows(track.matrix())
    centroids = {c.speaker: c.vector for c in compute_centroids(d, mapping, track)}
    scores = _cosine_to_centroids(x, d, mapping, centroids)
    usable = {spk: c is not None for spk, c in centroids.items()}
    return _aggregate(d, mapping, method, scores, usable, floor)


def _local_centroid(x: np.ndarray, eps: float, max_iters: int) -> np.ndarray:
    """Trimmed centroid of one cluster.

    Each pass measures cosine distance of every member to the current
    centroid and re-estimates the centroid from the members within
    mean + 2 std of that distance. Stops once a pass would move the
    centroid by less than ``eps`` (cosine distance).
    """
    centroid = x.mean(axis=0)
    for _ in range(max_iters):
        dist = 1.0 - _cos(x, centroid)
        keep = dist <= dist.mean() + 2.0 * dist.std()
        if keep.all() or not keep.any():
            break
        candidate = x[keep].mean(axis=0)
        if np.linalg.norm(candidate) == 0:
            break
        moved = 1.0 - float(_cos(candidate[None, :], centroid)[0])
        if moved < eps:
            break
        centroid = candidate
    return centroid


def local_confidence_score(d: Diarization, mapping: SegmentEmbeddingMap, track: EmbeddingTrack,
                           eps: float = LOCAL_EPS, max_iters: int = LOCAL_MAX_ITERS,
                           floor: float = FLOOR_SCORE) -> list[ConfidenceAnnotation]:
    x = _unit_rows(track.matrix())
    centroids: dict[str, np.ndarray | None] = {}
    for spk, idx in _speaker_members(d, mapping).items():
        if not idx or np.linalg.norm(x[idx].mean(axis=0)) == 0:
            centroids[spk] = None
        else:
            centroids[spk] = _local_centroid(x[idx], eps, max_iters)
    scores = _cosine_to_centroids(x, d, mapping, centroids)
    usable = {spk: c is not None for spk, c in centroids.items()}
    return _aggregate(d, mapping, Method.LOCAL, scores, usable, floor)


def silhouette_value(a, b):
    """``(b - a) / max(a, b)``, defined as 0 where both distances are 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(m > 0, (b - a) / np.where(m > 0, m, 1.0), 0.0)
    return s if s.ndim else float(s)


def silhouette_score(d: Diarization, mapping: SegmentEmbeddingMap, track: EmbeddingTrack,
                     floor: float = FLOOR_SCORE) -> list[ConfidenceAnnotation]:
    """Centroid silhouette per embedding, averaged per segment.

    ``a`` is the cosine distance to the own-speaker centroid and ``b`` the
    distance to the nearest other centroid. With fewer than two defined
    centroids there is nothing to contrast against, and the cosine score
    is returned under the silhouette tag.
    """
    x = _unit_rows(track.matrix())
    cents = [c for c in compute_centroids(d, mapping, track)]
    defined = {c.speaker: c.vector for c in cents if c.defined}
    if len(defined) < 2:
        return cosine_similarity_score(d, mapping, track, floor, method=Method.SILHOUETTE)
    speakers = list(defined)
    dist = np.column_stack([1.0 - _cos(x, defined[spk]) for spk in speakers])
    col = {spk: k for k, spk in enumerate(speakers)}
    scores = np.full(x.shape[0], np.nan)
    for seg, idx in zip(d.segments, mapping.members):
        if not idx or seg.speaker not in col:
            continue
        rows = dist[list(idx)]
        own = col[seg.speaker]
        a = rows[:, own]
        b = np.delete(rows, own, axis=1).min(axis=1)
        scores[list(idx)] = silhouette_value(a, b)
    usable = {spk: spk in defined for spk in d.speakers}
    return _aggregate(d, mapping, Method.SILHOUETTE, scores, usable, floor)


def spectral_clustering_score(assignment, d: Diarization, mapping: SegmentEmbeddingMap,
                              floor: float = FLOOR_SCORE) -> list[ConfidenceAnnotation]:
    """Cosine score computed inside the spectral basis.

    ``assignment`` is the ClusterAssignment from spectral clustering of the
    same track (its rows align with the track's embeddings).
    """
    if assignment is None or getattr(assignment, "basis", None) is None:
        raise BasisUnavailableError(
            f"no spectral basis for {d.conversation_id!r}: the spectral score needs the "
            "hypothesis produced by spectral clustering")
    basis = np.asarray(assignment.basis, dtype=float)
    n_needed = 1 + max((j for idx in mapping.members for j in idx), default=-1)
    if basis.shape[0] < n_needed:
        raise BasisUnavailableError(
            f"spectral basis has {basis.shape[0]} rows, embedding map needs {n_needed}")
    centroids = {c.speaker: c.vector for c in _centroids_from(basis, _speaker_members(d, mapping))}
    scores = _cosine_to_centroids(basis, d, mapping, centroids)
    usable = {spk: c is not None for spk, c in centroids.items()}
    return _aggregate(d, mapping, Method.SPECTRAL, scores, usable, floor)


def score_conversation(d: Diarization, track: EmbeddingTrack, methods, assignment=None,
                       local_eps: float = LOCAL_EPS, local_max_iters: int = LOCAL_MAX_ITERS
                       ) -> dict[Method, list[ConfidenceAnnotation]]:
    """Run several methods on one conversation, sharing the embedding map."""
    mapping = map_embeddings_to_segments(d, track)
    out = {}
    for m in map(Method, methods):
        if m is Method.COSINE:
            out[m] = cosine_similarity_score(d, mapping, track)
        elif m is Method.LOCAL:
            out[m] = local_confidence_score(d, mapping, track, local_eps, local_max_iters)
        elif m is Method.SILHOUETTE:
            out[m] = silhouette_score(d, mapping, track)
        else:
            out[m] = spectral_clustering_score(assignment, d, mapping)
    return out
