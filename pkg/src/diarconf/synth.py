"""Seeded synthetic conversations with known diarization errors.

Random source
-------------
All randomness comes from ``numpy.random.Generator(PCG64(seed))`` and is
consumed only as uniform doubles (``Generator.random``: the top 53 bits of
each 64-bit PCG64 output, scaled by 2**-53). Gaussian deviates are derived
from those uniforms with the Box-Muller transform (``_normals``), so a
corpus can be regenerated outside numpy from PCG64 alone. The order in
which draws happen is part of the format; see ``generate``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Diarization, EmbeddingTrack, Segment, TimeInterval

ERROR_BIASES = ("random", "distance_correlated")
MAX_DIRECTION_ATTEMPTS = 20000


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    num_speakers: int = 4
    dim: int = 64
    conversation_length: float = 120.0
    turn_length: tuple[float, float] = (1.0, 6.0)
    concentration: float = 10.0
    inter_speaker_min_angle: float = 60.0
    error_rate: float = 0.15
    error_bias: str = "distance_correlated"
    segment_drift: float = 1.5
    window: float = 1.5
    shift: float = 0.25

    def __post_init__(self):
        if self.num_speakers < 1:
            raise SynthError("num_speakers must be >= 1")
        if self.dim < 2:
            raise SynthError("dim must be >= 2")
        if not 0 <= self.error_rate < 1:
            raise SynthError("error_rate must lie in [0, 1)")
        if self.error_rate > 0 and self.num_speakers < 2:
            raise SynthError("mislabelling needs at least two speakers; set error_rate=0")
        if self.error_bias not in ERROR_BIASES:
            raise SynthError(f"error_bias must be one of {ERROR_BIASES}")
        lo, hi = self.turn_length
        if not 0 < lo <= hi:
            raise SynthError("turn_length must satisfy 0 < min <= max")
        if self.concentration <= 0:
            raise SynthError("concentration must be positive")
        if not 0 <= self.inter_speaker_min_angle <= 180:
            raise SynthError("inter_speaker_min_angle must lie in [0, 180] degrees")
        if self.inter_speaker_min_angle > 90 and self.num_speakers > self.dim + 1:
            raise SynthError("more than dim+1 directions cannot be pairwise obtuse")
        if self.segment_drift < 0:
            raise SynthError("segment_drift must be non-negative")
        if self.conversation_length < self.window:
            raise SynthError("conversation shorter than one embedding window")


@dataclass(frozen=True, eq=False)
class SynthConversation:
    track: EmbeddingTrack
    reference: Diarization
    hypothesis: Diarization
    error_mask: tuple[bool, ...]
    directions: np.ndarray = field(repr=False)

    @property
    def conversation_id(self) -> str:
        return self.reference.conversation_id

    def corrupted_duration(self) -> float:
        return sum(s.duration() for s, bad in zip(self.hypothesis.segments, self.error_mask) if bad)


#: The battery used by the acceptance suite: seeds 0..19 of the defaults.
STANDARD_BATTERY = (SynthSpec(), 20)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals by Box-Muller from uniform pairs (cosine branch)."""
    n = int(np.prod(shape))
    u1 = rng.random(n)
    u2 = rng.random(n)
    z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)
    return z.reshape(shape)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def speaker_directions(rng, num: int, dim: int, min_angle_deg: float,
                       max_angle_deg: float = 180.0) -> np.ndarray:
    """Unit vectors with pairwise angle in [min_angle_deg, max_angle_deg], by rejection."""
    max_cos = math.cos(math.radians(min_angle_deg))
    min_cos = math.cos(math.radians(max_angle_deg))
    accepted: list[np.ndarray] = []
    attempts = 0
    while len(accepted) < num:
        attempts += 1
        if attempts > MAX_DIRECTION_ATTEMPTS:
            raise SynthError(
                f"could not place {num} directions {min_angle_deg} degrees apart in {dim} dims")
        cand = _unit(_normals(rng, (dim,)))
        if all(min_cos - 1e-12 <= float(cand @ a) <= max_cos + 1e-12 for a in accepted):
            accepted.append(cand)
    return np.vstack(accepted)


def _perturb(rng, directions: np.ndarray, concentration: float) -> np.ndarray:
    # isotropic Gaussian jitter of std 1/sqrt(kappa) then renormalise; for
    # large kappa this matches von Mises-Fisher angular spread
    noise = _normals(rng, directions.shape) / math.sqrt(concentration)
    return _unit(directions + noise)


def _turns(rng, spec: SynthSpec) -> list[tuple[float, float, int]]:
    lo, hi = spec.turn_length
    turns = []
    t = 0.0
    prev = None
    while t < spec.conversation_length:
        length = lo + (hi - lo) * rng.random()
        end = min(t + length, spec.conversation_length)
        if spec.conversation_length - end < lo:
            end = spec.conversation_length
        u = rng.random()
        if spec.num_speakers == 1:
            spk = 0
        elif prev is None:
            spk = int(u * spec.num_speakers)
        else:
            spk = int(u * (spec.num_speakers - 1))
            spk += spk >= prev
        turns.append((round(t, 3), round(end, 3), spk))
        prev = spk
        t = end
    return turns


def _window_grid(length: float, window: float, shift: float) -> np.ndarray:
    n = int(math.floor((length - window) / shift + 1e-9)) + 1
    return np.round(np.arange(n) * shift, 6)


def _turn_directions(rng, turns, directions, drift: float) -> np.ndarray:
    """Speaker direction of each turn, pushed off by a per-turn offset.

    The offset has norm ``drift * r`` with ``r ~ Exp(1)``, so most turns sit
    near their speaker and a few stray far from it.
    """
    dim = directions.shape[1]
    offsets = _unit(_normals(rng, (len(turns), dim)))
    radius = -np.log1p(-rng.random(len(turns)))
    base = directions[[spk for _, _, spk in turns]]
    return _unit(base + drift * radius[:, None] * offsets)


def _window_directions(starts, window, turns, turn_dirs) -> np.ndarray:
    # each window takes the direction of the turn under its midpoint, the
    # same rule that attaches windows to segments when scoring
    mids = starts + 0.5 * window
    ends = np.array([b for _, b, _ in turns])
    idx = np.minimum(np.searchsorted(ends, mids, side="right"), len(turns) - 1)
    return turn_dirs[idx]


def _choose_errors(rng, spec: SynthSpec, segments, track: EmbeddingTrack,
                   directions: np.ndarray, speaker_index) -> list[int]:
    n = len(segments)
    n_err = int(round(spec.error_rate * n))
    keys = rng.random(n)
    if n_err == 0:
        return []
    if spec.error_bias == "random":
        return sorted(np.argsort(-keys, kind="stable")[:n_err].tolist())
    # Efraimidis-Spirakis weighted sampling: weight grows with the segment's
    # angular distance from its speaker direction
    x = _unit(track.matrix())
    mids = track.midpoints()
    weights = np.empty(n)
    for i, seg in enumerate(segments):
        inside = (mids >= seg.start) & (mids < seg.end)
        if inside.any():
            mean_cos = float(np.mean(x[inside] @ directions[speaker_index[seg.speaker]]))
        else:
            mean_cos = 1.0
        weights[i] = max(1.0 - mean_cos, 0.0) ** 2 + 1e-12
    sample_keys = np.log(keys) / weights
    return sorted(np.argsort(-sample_keys, kind="stable")[:n_err].tolist())


def generate(spec: SynthSpec, conversation_id: str | None = None) -> SynthConversation:
    """Generate one conversation.

    Draw order: speaker directions; turns (length, then speaker, per turn);
    per-turn drift directions, then drift radii; per-window jitter;
    per-window norm scale; error-selection keys; one replacement speaker
    draw per corrupted segment.
    """
    conv = conversation_id or f"synth{spec.seed:05d}"
    rng = make_rng(spec.seed)
    directions = speaker_directions(rng, spec.num_speakers, spec.dim, spec.inter_speaker_min_angle)
    turns = _turns(rng, spec)
    starts = _window_grid(spec.conversation_length, spec.window, spec.shift)
    turn_dirs = _turn_directions(rng, turns, directions, spec.segment_drift)
    base = _window_directions(starts, spec.window, turns, turn_dirs)
    vectors = _perturb(rng, base, spec.concentration)
    vectors = vectors * (0.5 + 1.5 * rng.random(starts.size))[:, None]
    track = EmbeddingTrack.from_arrays(conv, starts, np.round(starts + spec.window, 6), vectors)

    names = [f"S{k}" for k in range(spec.num_speakers)]
    segments = [Segment(conv, TimeInterval(a, b), names[k]) for a, b, k in turns]
    reference = Diarization(conv, tuple(segments))
    speaker_index = {name: k for k, name in enumerate(names)}
    bad = _choose_errors(rng, spec, reference.segments, track, directions, speaker_index)
    hyp_segments = list(reference.segments)
    mask = [False] * len(hyp_segments)
    for i in bad:
        seg = hyp_segments[i]
        k = speaker_index[seg.speaker]
        new = int(rng.random() * (spec.num_speakers - 1))
        new += new >= k
        hyp_segments[i] = Segment(conv, seg.interval, names[new])
        mask[i] = True
    hypothesis = Diarization(conv, tuple(hyp_segments))
    return SynthConversation(track, reference, hypothesis, tuple(mask), directions)


def generate_corpus(spec: SynthSpec, count: int, prefix: str = "conv") -> list[SynthConversation]:
    """``count`` conversations using seeds ``spec.seed, spec.seed + 1, ...``."""
    return [generate(replace(spec, seed=spec.seed + i), f"{prefix}{spec.seed + i:05d}")
            for i in range(count)]


def planted_track(seed: int, sizes, dim: int = 32, concentration: float = 1000.0,
                  max_inter_cos: float = 0.2, min_intra_cos: float = 0.9,
                  run_length: tuple[int, int] = (4, 12), window: float = 1.5,
                  shift: float = 0.25, conversation_id: str = "planted",
                  max_attempts: int = 100) -> tuple[EmbeddingTrack, np.ndarray]:
    """Pure clusters on the window grid, for clustering recovery checks.

    Cluster ``k`` contributes ``sizes[k]`` windows, emitted in runs of
    random length placed in random order; no window mixes clusters.
    The realised clusters satisfy ``|cos| <= max_inter_cos`` between
    centroids and ``cos >= min_intra_cos`` between any two members; draws
    that miss are rejected. Strongly anti-correlated clusters defeat the
    absolute eigen-gap (see tests), hence the two-sided bound.
    Returns the track and the true cluster index of every window.
    """
    rng = make_rng(seed)
    min_angle = math.degrees(math.acos(max_inter_cos))
    lo, hi = run_length
    for _ in range(max_attempts):
        directions = speaker_directions(rng, len(sizes), dim, min_angle, 180.0 - min_angle)
        runs = []
        for k, size in enumerate(sizes):
            left = int(size)
            while left > 0:
                r = min(left, lo + int(rng.random() * (hi - lo + 1)))
                runs.append((k, r))
                left -= r
        order = np.argsort(rng.random(len(runs)), kind="stable")
        labels = np.concatenate([np.full(runs[i][1], runs[i][0]) for i in order]).astype(int)
        vectors = _perturb(rng, directions[labels], concentration)
        if _planted_ok(vectors, labels, len(sizes), max_inter_cos, min_intra_cos):
            break
    else:
        raise SynthError(f"no planted draw met the cosine bounds in {max_attempts} attempts")
    starts = np.round(np.arange(labels.size) * shift, 6)
    track = EmbeddingTrack.from_arrays(conversation_id, starts, np.round(starts + window, 6),
                                       vectors)
    return track, labels


def _planted_ok(vectors, labels, k, max_inter_cos, min_intra_cos) -> bool:
    x = _unit(vectors)
    centroids = _unit(np.stack([x[labels == j].mean(axis=0) for j in range(k)]))
    cross = np.abs(centroids @ centroids.T)[~np.eye(k, dtype=bool)]
    if cross.size and cross.max() > max_inter_cos:
        return False
    return all((x[labels == j] @ x[labels == j].T).min() >= min_intra_cos for j in range(k))
