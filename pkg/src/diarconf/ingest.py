"""Readers and writers for RTTM, embedding CSV, confidence CSV and manifests."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

from .core import Diarization, EmbeddingTrack, Segment, TimeInterval
from .confidence import ConfidenceAnnotation, Method

logger = logging.getLogger(__name__)

NA = "<NA>"
EMBEDDING_HEADER_PREFIX = ["conversation_id", "start", "end"]
CONFIDENCE_HEADER = ["conversation_id", "start", "end", "speaker", "method", "score"]


class ParseError(ValueError):
    """Malformed input; ``line`` is 1-based (``None`` when not line-specific)."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass(frozen=True)
class RttmRecord:
    file_id: str
    channel: str
    onset: float
    duration: float
    speaker: str

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"RTTM duration must be positive, got {self.duration}")
        if self.onset < 0:
            raise ValueError(f"RTTM onset must be non-negative, got {self.onset}")


def _float_field(text: str, name: str, lineno: int, source) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric {name} {text!r}", lineno, source) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {name} {text!r}", lineno, source)
    return value


def iter_rttm_records(stream: IO[str], source: str | None = None) -> Iterator[tuple[int, RttmRecord]]:
    """Yield ``(line_number, record)`` for every usable SPEAKER line.

    Non-SPEAKER lines and blank lines are skipped. Lines with a non-positive
    duration are skipped with a warning; any other defect raises ParseError.
    """
    for lineno, raw in enumerate(stream, start=1):
        fields = raw.split()
        if not fields or fields[0] != "SPEAKER":
            continue
        if len(fields) < 9:
            raise ParseError(f"expected at least 9 fields, got {len(fields)}", lineno, source)
        onset = _float_field(fields[3], "onset", lineno, source)
        duration = _float_field(fields[4], "duration", lineno, source)
        if onset < 0:
            raise ParseError(f"negative onset {onset}", lineno, source)
        if duration <= 0:
            logger.warning("%s line %d: dropping SPEAKER record with duration %s",
                           source or "<rttm>", lineno, fields[4])
            continue
        yield lineno, RttmRecord(fields[1], fields[2], onset, duration, fields[7])


def parse_rttm(stream: IO[str], source: str | None = None) -> dict[str, Diarization]:
    by_file: dict[str, list[Segment]] = defaultdict(list)
    first_line: dict[str, int] = {}
    for lineno, rec in iter_rttm_records(stream, source):
        first_line.setdefault(rec.file_id, lineno)
        interval = TimeInterval(rec.onset, rec.onset + rec.duration)
        by_file[rec.file_id].append(Segment(rec.file_id, interval, rec.speaker))
    out = {}
    for file_id, segs in by_file.items():
        try:
            out[file_id] = Diarization(file_id, tuple(segs))
        except ValueError as exc:
            raise ParseError(str(exc), first_line[file_id], source) from None
    return out


def _fmt_time(t: float) -> str:
    return f"{t:.3f}"


def write_rttm(diarizations: Mapping[str, Diarization], stream: IO[str], channel: str = "1") -> None:
    """Write SPEAKER lines, conversations in sorted id order.

    Segment ends are rounded to the millisecond before the duration is
    taken, so boundaries shared by two segments stay shared after rounding.
    """
    for conv_id in sorted(diarizations):
        for seg in diarizations[conv_id].segments:
            onset = round(seg.start, 3)
            duration = round(seg.end, 3) - onset
            stream.write(
                f"SPEAKER {conv_id} {channel} {_fmt_time(onset)} {_fmt_time(duration)} "
                f"{NA} {NA} {seg.speaker} {NA} {NA}\n"
            )


def read_rttm(path: str | os.PathLike) -> dict[str, Diarization]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_rttm(fh, source=str(path))


def _csv_rows(stream: IO[str]):
    # csv handles both LF and CRLF line endings
    reader = csv.reader(stream)
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        yield lineno, [cell.strip() for cell in row]


def parse_embeddings_csv(stream: IO[str], source: str | None = None) -> EmbeddingTrack:
    rows = _csv_rows(stream)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError("empty embedding file", None, source) from None
    if header[:3] != EMBEDDING_HEADER_PREFIX or len(header) < 5:
        raise ParseError("header must be conversation_id,start,end,e0,e1,...", 1, source)
    dim = len(header) - 3
    conv_id = None
    starts, ends, vectors = [], [], []
    for lineno, row in rows:
        if len(row) != dim + 3:
            raise ParseError(f"expected {dim + 3} fields, got {len(row)}", lineno, source)
        if conv_id is None:
            conv_id = row[0]
        elif row[0] != conv_id:
            raise ParseError(f"mixed conversation ids {conv_id!r} and {row[0]!r}", lineno, source)
        start = _float_field(row[1], "start", lineno, source)
        end = _float_field(row[2], "end", lineno, source)
        if start < 0 or end <= start:
            raise ParseError(f"invalid window [{row[1]}, {row[2]})", lineno, source)
        try:
            vec = np.array([float(x) for x in row[3:]], dtype=float)
        except ValueError:
            raise ParseError("non-numeric vector entry", lineno, source) from None
        if not np.all(np.isfinite(vec)):
            raise ParseError("non-finite vector entry", lineno, source)
        if not np.linalg.norm(vec) > 0:
            raise ParseError("zero-norm embedding vector", lineno, source)
        starts.append(start)
        ends.append(end)
        vectors.append(vec)
    if conv_id is None:
        raise ParseError("embedding file has no rows", None, source)
    return EmbeddingTrack.from_arrays(conv_id, starts, ends, np.vstack(vectors))


def write_embeddings_csv(track: EmbeddingTrack, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EMBEDDING_HEADER_PREFIX + [f"e{i}" for i in range(track.dim)])
    for emb in track.embeddings:
        writer.writerow([track.conversation_id, _fmt_time(emb.interval.start),
                         _fmt_time(emb.interval.end)] + [repr(float(x)) for x in emb.vector])


def read_embeddings(path: str | os.PathLike) -> EmbeddingTrack:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_embeddings_csv(fh, source=str(path))


def parse_confidence_csv(stream: IO[str], source: str | None = None) -> list[ConfidenceAnnotation]:
    rows = _csv_rows(stream)
    try:
        _, header = next(rows)
    except StopIteration:
        return []
    if header != CONFIDENCE_HEADER:
        raise ParseError("header must be " + ",".join(CONFIDENCE_HEADER), 1, source)
    seen: dict[tuple, int] = {}
    out = []
    for lineno, row in rows:
        if len(row) != len(CONFIDENCE_HEADER):
            raise ParseError(f"expected {len(CONFIDENCE_HEADER)} fields, got {len(row)}",
                             lineno, source)
        conv_id, start_s, end_s, speaker, method_s, score_s = row
        start = _float_field(start_s, "start", lineno, source)
        end = _float_field(end_s, "end", lineno, source)
        score = _float_field(score_s, "score", lineno, source)
        try:
            method = Method(method_s)
        except ValueError:
            raise ParseError(f"unknown method {method_s!r}", lineno, source) from None
        try:
            seg = Segment(conv_id, TimeInterval(start, end), speaker)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
        key = (conv_id, round(start, 3), round(end, 3), speaker, method)
        if key in seen:
            raise ParseError(f"duplicate annotation (first seen on line {seen[key]})", lineno, source)
        seen[key] = lineno
        out.append(ConfidenceAnnotation(seg, method, score))
    return out


def write_confidence_csv(annotations: Iterable[ConfidenceAnnotation], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CONFIDENCE_HEADER)
    for ann in annotations:
        seg = ann.segment
        writer.writerow([seg.conversation_id, _fmt_time(seg.start), _fmt_time(seg.end),
                         seg.speaker, ann.method.value, repr(float(ann.score))])


def read_confidence(path: str | os.PathLike) -> list[ConfidenceAnnotation]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_confidence_csv(fh, source=str(path))


@dataclass(frozen=True)
class ConversationEntry:
    conversation_id: str
    embeddings: Path | None = None
    hypothesis: Path | None = None
    reference: Path | None = None


@dataclass(frozen=True)
class CorpusManifest:
    conversations: tuple[ConversationEntry, ...] = ()

    def __post_init__(self):
        ids = [c.conversation_id for c in self.conversations]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValueError(f"duplicate conversation ids in manifest: {dupes}")

    def __iter__(self):
        return iter(self.conversations)

    def __len__(self):
        return len(self.conversations)


def parse_manifest(stream: IO[str], base_dir: str | os.PathLike = ".") -> CorpusManifest:
    """Parse a JSON manifest; relative paths resolve against ``base_dir``."""
    try:
        data = json.load(stream)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(data, dict) or not isinstance(data.get("conversations"), list):
        raise ParseError('manifest must be an object with a "conversations" list')
    base = Path(base_dir)
    entries = []
    for i, item in enumerate(data["conversations"]):
        if not isinstance(item, dict) or not item.get("id"):
            raise ParseError(f"conversation entry {i} lacks an id")

        def resolve(key):
            value = item.get(key)
            if value in (None, ""):
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        entries.append(ConversationEntry(str(item["id"]), resolve("embeddings"),
                                         resolve("hypothesis"), resolve("reference")))
    try:
        return CorpusManifest(tuple(entries))
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def read_manifest(path: str | os.PathLike) -> CorpusManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh, base_dir=path.parent)


def manifest_to_json(manifest: CorpusManifest, relative_to: str | os.PathLike | None = None) -> str:
    def rel(p):
        if p is None:
            return None
        if relative_to is not None:
            try:
                return os.path.relpath(p, relative_to)
            except ValueError:
                pass
        return str(p)

    payload = {"conversations": []}
    for c in manifest.conversations:
        entry = {"id": c.conversation_id}
        for key in ("embeddings", "hypothesis", "reference"):
            value = rel(getattr(c, key))
            if value is not None:
                entry[key] = value
        payload["conversations"].append(entry)
    return json.dumps(payload, indent=2) + "\n"


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def render(writer, *args) -> str:
    """Run a ``write_*`` function into a string."""
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()
