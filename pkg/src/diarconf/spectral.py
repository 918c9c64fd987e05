"""Spectral clustering of embedding tracks.

Pipeline: cosine affinity of the unit-normalised embeddings, symmetric
eigendecomposition, eigen-gap speaker count, then each embedding is
represented by its coordinates over the retained eigenvectors and assigned
to the coordinate of largest magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import Diarization, EmbeddingTrack, Segment, TimeInterval

DEFAULT_MAX_SPEAKERS = 10
RESIDUAL_TOL = 1e-6


class EigenDecompositionError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3g})")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    values: np.ndarray

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError(f"affinity must be square, got shape {vals.shape}")
        if not np.allclose(vals, vals.T, atol=1e-9, rtol=0):
            raise ValueError("affinity matrix is not symmetric")
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs (descending) plus the S-dimensional per-embedding basis.

    ``basis`` equals ``eigenvectors[:, :num_speakers] @ rotation``; the
    rotation is orthogonal, so cosine geometry inside the basis is the same
    as over the raw eigenvector coordinates.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    num_speakers: int
    rotation: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        for name in ("eigenvalues", "eigenvectors", "rotation", "basis"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=int)
        labels.flags.writeable = False
        basis = _readonly(self.basis)
        if basis.ndim != 2 or basis.shape[0] != labels.size:
            raise ValueError("basis must have one row per label")
        if labels.size and (labels.min() < 0 or labels.max() >= basis.shape[1]):
            raise ValueError("label out of range of the basis dimension")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "basis", basis)

    @property
    def num_speakers(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class SpectralParams:
    max_speakers: int = DEFAULT_MAX_SPEAKERS
    num_speakers: int | None = None


def build_affinity(track: EmbeddingTrack) -> AffinityMatrix:
    if len(track) < 1:
        raise ValueError("cannot build an affinity for an empty track")
    x = track.matrix()
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms <= 0):
        raise ValueError("zero-norm embedding in track")
    x = x / norms[:, None]
    a = x @ x.T
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    np.clip(a, -1.0, 1.0, out=a)
    return AffinityMatrix(a)


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive (first on ties)
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(a: AffinityMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvector columns.

    Uses the LAPACK symmetric driver ``?syev`` (Householder reduction to
    tridiagonal form followed by implicit QL/QR). Raises
    EigenDecompositionError if the driver fails or any residual
    ``||A v - lambda v||`` exceeds ``1e-6 * ||A||_2``.
    """
    values = a.values if isinstance(a, AffinityMatrix) else np.asarray(a, dtype=float)
    if values.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    try:
        w, v = scipy.linalg.eigh(values, driver="ev", check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenDecompositionError(f"symmetric eigensolver failed: {exc}") from exc
    order = np.argsort(-w, kind="stable")
    w, v = w[order], _canonical_signs(v[:, order])
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    residual = float(np.max(np.linalg.norm(values @ v - v * w, axis=0)))
    if not residual <= RESIDUAL_TOL * scale:
        raise EigenDecompositionError("eigenpairs failed the residual check", residual)
    return w, v


def estimate_num_speakers(eigenvalues, max_speakers_cap: int = DEFAULT_MAX_SPEAKERS,
                          fixed_s: int | None = None) -> int:
    """Speaker count from the largest absolute eigen-gap.

    ``S = argmax_k (lambda_k - lambda_{k+1})`` over ``k = 1..min(cap, N-1)``,
    earliest k on ties.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    n = ev.size
    if fixed_s is not None:
        if fixed_s < 1 or fixed_s > n:
            raise ValueError(f"fixed speaker count {fixed_s} outside [1, {n}]")
        return int(fixed_s)
    if max_speakers_cap < 1:
        raise ValueError("max_speakers_cap must be >= 1")
    if n <= 1:
        return 1
    kmax = min(max_speakers_cap, n - 1)
    gaps = ev[:kmax] - ev[1:kmax + 1]
    return int(np.argmax(gaps)) + 1


def _discretizing_rotation(v: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """Orthogonal S x S rotation turning the rows of ``v`` towards one-hot.

    Degenerate or near-degenerate eigenvalues leave the retained
    eigenvectors as arbitrary mixtures of the cluster indicators, which
    defeats a per-row argmax. This is the multiclass discretisation of
    Yu & Shi (2003), seeded deterministically with mutually most-orthogonal
    rows.
    """
    n, s = v.shape
    if s == 1:
        return np.ones((1, 1))
    norms = np.linalg.norm(v, axis=1)
    y = v / np.where(norms > 0, norms, 1.0)[:, None]
    r = np.zeros((s, s))
    first = int(np.argmax(norms))
    r[:, 0] = y[first]
    proximity = np.abs(y @ r[:, 0])
    for k in range(1, s):
        pick = int(np.argmin(proximity))
        r[:, k] = y[pick]
        proximity = np.maximum(proximity, np.abs(y @ r[:, k]))
    # an orthogonal start: nearest rotation to the picked rows
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    last = None
    for _ in range(max_iter):
        labels = np.argmax(y @ r, axis=1)
        if last is not None and np.array_equal(labels, last):
            break
        last = labels
        onehot = np.zeros((n, s))
        onehot[np.arange(n), labels] = 1.0
        u, _, vt = np.linalg.svd(onehot.T @ y)
        r = (u @ vt).T
    return r


def spectral_decomposition(track: EmbeddingTrack, params: SpectralParams = SpectralParams()
                           ) -> SpectralDecomposition:
    affinity = build_affinity(track)
    w, v = eigendecompose(affinity)
    s = estimate_num_speakers(w, params.max_speakers, params.num_speakers)
    retained = v[:, :s]
    rotation = _discretizing_rotation(retained)
    basis = retained @ rotation
    # order basis columns by first appearance of their label, flip signs so
    # each column's mass is positive
    labels = _argmax_abs(basis)
    order = list(dict.fromkeys(labels.tolist()))
    order += [k for k in range(s) if k not in order]
    rotation = rotation[:, order]
    basis = basis[:, order]
    signs = np.sign(basis.sum(axis=0))
    signs[signs == 0] = 1.0
    return SpectralDecomposition(w, v, s, rotation * signs, basis * signs)


def _argmax_abs(basis: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the smaller index
    return np.argmax(np.abs(basis), axis=1)


def assign_speakers(decomp: SpectralDecomposition) -> ClusterAssignment:
    return ClusterAssignment(_argmax_abs(decomp.basis), decomp.basis)


def speaker_name(label: int) -> str:
    return f"spk{label}"


def labels_to_diarization(track: EmbeddingTrack, labels) -> Diarization:
    """Turn per-window labels into speaker segments.

    Runs of equal labels over overlapping or touching windows merge. At a
    label change the boundary sits halfway between the two window centres;
    a gap between windows always ends the current segment.
    """
    embs = track.embeddings
    labels = [int(x) for x in labels]
    if len(labels) != len(embs):
        raise ValueError("one label per embedding required")
    segments = []
    if not embs:
        return Diarization(track.conversation_id, ())
    run_start = embs[0].interval.start
    for i in range(len(embs) - 1):
        cur, nxt = embs[i].interval, embs[i + 1].interval
        if nxt.start > cur.end:
            segments.append((run_start, cur.end, labels[i]))
            run_start = nxt.start
        elif labels[i + 1] != labels[i]:
            boundary = 0.5 * (cur.midpoint + nxt.midpoint)
            segments.append((run_start, boundary, labels[i]))
            run_start = boundary
    segments.append((run_start, embs[-1].interval.end, labels[-1]))
    conv = track.conversation_id
    return Diarization(conv, tuple(Segment(conv, TimeInterval(a, b), speaker_name(lab))
                                   for a, b, lab in segments if b > a))


def spectral_diarize(track: EmbeddingTrack, params: SpectralParams = SpectralParams()
                     ) -> tuple[Diarization, ClusterAssignment, SpectralDecomposition]:
    decomp = spectral_decomposition(track, params)
    assignment = assign_speakers(decomp)
    return labels_to_diarization(track, assignment.labels), assignment, decomp
