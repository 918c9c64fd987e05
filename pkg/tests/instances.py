"""Random test instances shared by several test modules."""
from __future__ import annotations

import numpy as np

from diarconf.confidence import ConfidenceAnnotation, Method
from diarconf.core import Diarization, EmbeddingTrack, Segment, TimeInterval


def random_turns(rng, n_speakers, length, grid=0.01, max_turns=30, overlap=True):
    """(start, end, speaker) tuples on ``grid``; same-speaker turns never overlap."""
    out = []
    units = int(round(length / grid))
    for _ in range(int(rng.integers(1, max_turns + 1))):
        spk = f"s{int(rng.integers(n_speakers))}"
        a = int(rng.integers(0, units - 1))
        b = min(units, a + int(rng.integers(1, units // 4 + 2)))
        if not overlap:
            if any(not (b <= x or a >= y) for x, y, _ in out):
                continue
        if any(not (b <= x or a >= y) for x, y, s in out if s == spk):
            continue
        out.append((a, b, spk))
    return [(a * grid, b * grid, s) for a, b, s in out]


def to_diarization(conv, turns):
    return Diarization(conv, tuple(Segment(conv, TimeInterval(a, b), s) for a, b, s in turns))


def random_pair(seed, max_speakers=6, max_length=60.0):
    """A (ref turns, hyp turns) pair on the 10 ms grid."""
    rng = np.random.default_rng(seed)
    length = float(rng.integers(5, int(max_length) + 1))
    ref = random_turns(rng, int(rng.integers(1, max_speakers + 1)), length)
    hyp = random_turns(rng, int(rng.integers(1, max_speakers + 1)), length)
    return ref, hyp


def random_corpus(seed, n_conv=3):
    """Diarizations, embedding tracks and confidence annotations with awkward values."""
    rng = np.random.default_rng(seed)
    diars, tracks, anns = {}, [], []
    for k in range(n_conv):
        conv = f"c{seed}_{k}"
        turns = random_turns(rng, int(rng.integers(1, 5)), float(rng.integers(5, 60)), grid=0.001)
        d = to_diarization(conv, turns)
        diars[conv] = d
        n = int(rng.integers(1, 12))
        dim = int(rng.integers(2, 9))
        starts = np.round(rng.uniform(0, 50, n), 3)
        ends = np.round(starts + rng.uniform(0.01, 3, n), 3)
        vecs = rng.normal(size=(n, dim)) * 10.0 ** rng.integers(-6, 6, size=(n, 1))
        tracks.append(EmbeddingTrack.from_arrays(conv, starts, ends, vecs))
        for seg in d.segments:
            for m in Method:
                if rng.random() < 0.7:
                    anns.append(ConfidenceAnnotation(seg, m, float(rng.uniform(-1, 1))))
    return diars, tracks, anns


def same_diarizations(a, b, tol=1e-3):
    """Structural equality with segment times compared at ``tol`` seconds."""
    if sorted(a) != sorted(b):
        return False
    for conv in a:
        sa, sb = a[conv].segments, b[conv].segments
        if len(sa) != len(sb):
            return False
        for x, y in zip(sa, sb):
            if (x.speaker != y.speaker or abs(x.start - y.start) > tol
                    or abs(x.end - y.end) > tol):
                return False
    return True


def same_annotations(a, b, time_tol=1e-3, score_tol=1e-9):
    return len(a) == len(b) and all(
        x.method is y.method and x.segment.speaker == y.segment.speaker
        and x.segment.conversation_id == y.segment.conversation_id
        and abs(x.segment.start - y.segment.start) <= time_tol
        and abs(x.segment.end - y.segment.end) <= time_tol
        and abs(x.score - y.score) <= score_tol
        for x, y in zip(a, b))
