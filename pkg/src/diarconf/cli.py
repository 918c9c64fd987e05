"""Command-line entry point: ``diarconf <subcommand> ...``.

Exit codes: 0 success, 1 finished with warnings (skipped conversations or
methods), 2 fatal input error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ingest
from .confidence import BasisUnavailableError, Method, score_conversation
from .core import Diarization
from .ingest import ConversationEntry, CorpusManifest, ParseError, atomic_write_text, render
from .metrics import ScoringConfig, write_metrics_csv
from .selection import (CRITERIA, EvalConversation, GlobalThreshold, default_grid,
                        evaluate_coverages, evaluate_threshold, histogram, select_global_threshold,
                        sweep, write_curve_csv, write_histogram_csv)
from .spectral import ClusterAssignment, SpectralParams, spectral_diarize
from .synth import ERROR_BIASES, SynthSpec, SynthError, generate_corpus

log = logging.getLogger("diarconf")

EXIT_OK, EXIT_WARN, EXIT_FATAL = 0, 1, 2
BLACK_BOX_METHODS = "cosine,local,silhouette"


class CliError(Exception):
    """Fatal input problem; reported on stderr with exit code 2."""


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _grid(text: str) -> list[float]:
    """``a:b:step`` range (inclusive) or a comma list."""
    if ":" in text:
        try:
            lo, hi, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid range {text!r}")
        n = int(round((hi - lo) / step))
        return [round(lo + k * step, 10) for k in range(n + 1)]
    return _float_list(text)


def _methods(text: str) -> list[Method]:
    try:
        return list(dict.fromkeys(Method(x.strip()) for x in text.split(",") if x.strip()))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"methods must be drawn from {[m.value for m in Method]}, got {text!r}")


def basis_sidecar_path(rttm_path: Path) -> Path:
    name = rttm_path.name
    stem = name[:-5] if name.endswith(".rttm") else name
    return rttm_path.with_name(stem + ".basis.csv")


def write_basis_csv(track, assignment: ClusterAssignment, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    s = assignment.basis.shape[1]
    writer.writerow(["conversation_id", "start", "end", "label"] + [f"b{k}" for k in range(s)])
    for emb, label, row in zip(track.embeddings, assignment.labels, assignment.basis):
        writer.writerow([track.conversation_id, f"{emb.interval.start:.3f}",
                         f"{emb.interval.end:.3f}", int(label)] + [repr(float(x)) for x in row])


def read_basis_csv(path: Path) -> ClusterAssignment:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][:4] != ["conversation_id", "start", "end", "label"]:
        raise ParseError("bad spectral basis header", 1, str(path))
    labels, basis = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        try:
            labels.append(int(r[3]))
            basis.append([float(x) for x in r[4:]])
        except (ValueError, IndexError):
            raise ParseError("malformed basis row", lineno, str(path)) from None
    return ClusterAssignment(np.array(labels, dtype=int),
                             np.array(basis, dtype=float).reshape(len(labels), -1))


def _load_manifest(path) -> CorpusManifest:
    try:
        return ingest.read_manifest(path)
    except OSError as exc:
        raise CliError(f"cannot read manifest {path}: {exc.strerror}") from None
    except ParseError as exc:
        raise CliError(f"manifest {path}: {exc}") from None


def _scoring_config(args) -> ScoringConfig:
    try:
        return ScoringConfig(collar=args.collar, exclude_overlap=not args.include_overlap)
    except ValueError as exc:
        raise CliError(str(exc)) from None


# -- diarize -----------------------------------------------------------------

def _diarize_one(entry: ConversationEntry, params: SpectralParams, out_dir: str):
    track = ingest.read_embeddings(entry.embeddings)
    if track.conversation_id != entry.conversation_id:
        raise ParseError(f"embedding file holds conversation {track.conversation_id!r}",
                         None, str(entry.embeddings))
    hyp, assignment, decomp = spectral_diarize(track, params)
    rttm_path = Path(out_dir) / f"{entry.conversation_id}.rttm"
    atomic_write_text(rttm_path, render(ingest.write_rttm, {entry.conversation_id: hyp}))
    atomic_write_text(basis_sidecar_path(rttm_path), render(write_basis_csv, track, assignment))
    return hyp, decomp.num_speakers


def _run_parallel(fn, items, jobs: int):
    """Apply ``fn`` to each item; results (or exceptions) in input order."""
    def safe(future_or_call):
        try:
            return future_or_call(), None
        except Exception as exc:  # reported per conversation by the caller
            return None, exc

    if jobs <= 1 or len(items) <= 1:
        return [safe(lambda it=it: fn(*it)) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [safe(f.result) for f in futures]


def cmd_diarize(args) -> int:
    manifest = _load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = SpectralParams(max_speakers=args.max_speakers, num_speakers=args.num_speakers)
    if not len(manifest):
        log.warning("manifest %s lists no conversations", args.manifest)
    missing = [e.conversation_id for e in manifest if e.embeddings is None]
    if missing:
        raise CliError(f"no embeddings path for conversations: {', '.join(missing)}")
    results = _run_parallel(_diarize_one, [(e, params, str(out)) for e in manifest], args.jobs)
    combined, entries, failed = {}, [], []
    for entry, (res, exc) in zip(manifest, results):
        if exc is not None:
            failed.append(entry.conversation_id)
            log.error("conversation %s: %s", entry.conversation_id, _describe(exc))
            continue
        hyp, s = res
        log.info("conversation %s: %d speakers, %d segments", entry.conversation_id, s, len(hyp))
        combined[entry.conversation_id] = hyp
        entries.append(replace(entry, hypothesis=out / f"{entry.conversation_id}.rttm"))
    atomic_write_text(out / "hypothesis.rttm", render(ingest.write_rttm, combined))
    atomic_write_text(out / "manifest.json",
                      ingest.manifest_to_json(CorpusManifest(tuple(entries)), relative_to=out))
    return EXIT_FATAL if failed else EXIT_OK


def _describe(exc: Exception) -> str:
    if isinstance(exc, OSError):
        return f"cannot read {exc.filename}: {exc.strerror}"
    return str(exc)


# -- score -------------------------------------------------------------------

def _read_hypothesis(entry: ConversationEntry) -> Diarization:
    hyps = ingest.read_rttm(entry.hypothesis)
    return hyps.get(entry.conversation_id, Diarization(entry.conversation_id, ()))


def _score_one(entry: ConversationEntry, methods: list[Method], local_eps: float,
               local_iters: int):
    track = ingest.read_embeddings(entry.embeddings)
    hyp = _read_hypothesis(entry)
    sidecar = basis_sidecar_path(Path(entry.hypothesis))
    assignment = read_basis_csv(sidecar) if sidecar.exists() else None
    out, errors = {}, {}
    for m in methods:
        try:
            out.update(score_conversation(hyp, track, [m], assignment, local_eps, local_iters))
        except BasisUnavailableError as exc:
            errors[m] = str(exc)
    return out, errors


def cmd_score(args) -> int:
    manifest = _load_manifest(args.manifest)
    methods = args.methods
    bad = [e.conversation_id for e in manifest if e.embeddings is None or e.hypothesis is None]
    if bad:
        raise CliError(f"conversations lacking embeddings or hypothesis: {', '.join(bad)}")
    items = [(e, methods, args.local_eps, args.local_max_iters) for e in manifest]
    results = _run_parallel(_score_one, items, args.jobs)
    status = EXIT_OK
    annotations = []
    for entry, (res, exc) in zip(manifest, results):
        if exc is not None:
            log.error("conversation %s: %s", entry.conversation_id, _describe(exc))
            return EXIT_FATAL
        scores, errors = res
        for m, msg in errors.items():
            log.warning("conversation %s, method %s skipped: %s", entry.conversation_id, m, msg)
            status = EXIT_WARN
        for m in methods:
            annotations.extend(scores.get(m, []))
    atomic_write_text(args.out, render(ingest.write_confidence_csv, annotations))
    return status


# -- evaluation helpers --------------------------------------------------------

def _load_eval_corpus(manifest: CorpusManifest, confidence_path) -> tuple[list[EvalConversation], int]:
    try:
        annotations = ingest.read_confidence(confidence_path)
    except OSError as exc:
        raise CliError(f"cannot read {confidence_path}: {exc.strerror}") from None
    by_conv = defaultdict(list)
    for a in annotations:
        by_conv[a.segment.conversation_id].append(a)
    corpus, status = [], EXIT_OK
    for entry in manifest:
        cid = entry.conversation_id
        if entry.reference is None or entry.hypothesis is None:
            log.warning("conversation %s skipped: no %s", cid,
                        "reference" if entry.reference is None else "hypothesis")
            status = EXIT_WARN
            continue
        try:
            ref = ingest.read_rttm(entry.reference).get(cid, Diarization(cid, ()))
            hyp = _read_hypothesis(entry)
        except OSError as exc:
            log.warning("conversation %s skipped: %s", cid, _describe(exc))
            status = EXIT_WARN
            continue
        if cid not in by_conv:
            log.warning("conversation %s has no confidence annotations", cid)
        corpus.append(EvalConversation(ref, hyp, tuple(by_conv.pop(cid, []))))
    for cid in sorted(by_conv):
        log.warning("confidence file lists conversation %s absent from the manifest", cid)
    return corpus, status


def _methods_present(corpus, requested):
    if requested:
        return requested
    seen = {a.method for c in corpus for a in c.annotations}
    return [m for m in Method if m in seen]


def cmd_evaluate(args) -> int:
    manifest = _load_manifest(args.manifest)
    corpus, status = _load_eval_corpus(manifest, args.confidence)
    config = _scoring_config(args)
    coverages = sorted(set(args.coverage) | {1.0})
    rows = []
    for m in _methods_present(corpus, args.methods):
        rows.extend(evaluate_coverages(corpus, m, coverages, config,
                                       per_conversation=args.per_conversation, pooled=args.pooled))
    atomic_write_text(args.out, render(write_metrics_csv, rows))
    return status


def cmd_sweep(args) -> int:
    manifest = _load_manifest(args.manifest)
    corpus, status = _load_eval_corpus(manifest, args.confidence)
    config = _scoring_config(args)
    curves = [sweep(corpus, m, args.grid, config, pooled=args.pooled)
              for m in _methods_present(corpus, args.methods)]
    atomic_write_text(args.out, render(write_curve_csv, curves))
    return status


def cmd_threshold(args) -> int:
    manifest = _load_manifest(args.manifest)
    corpus, status = _load_eval_corpus(manifest, args.confidence)
    config = _scoring_config(args)
    try:
        chosen = select_global_threshold(corpus, args.method, args.criterion,
                                         args.min_coverage, config)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    atomic_write_text(args.out, chosen.to_json())
    if args.apply_manifest:
        if not (args.apply_confidence and args.apply_out):
            raise CliError("--apply-manifest needs --apply-confidence and --apply-out")
        test_corpus, test_status = _load_eval_corpus(_load_manifest(args.apply_manifest),
                                                     args.apply_confidence)
        rows = evaluate_threshold(test_corpus, chosen, config,
                                  per_conversation=args.per_conversation)
        atomic_write_text(args.apply_out, render(write_metrics_csv, rows))
        status = max(status, test_status)
    return status


def cmd_histogram(args) -> int:
    try:
        annotations = ingest.read_confidence(args.confidence)
    except OSError as exc:
        raise CliError(f"cannot read {args.confidence}: {exc.strerror}") from None
    by_method = defaultdict(list)
    for a in annotations:
        by_method[a.method].append(a)
    methods = args.methods or [m for m in Method if m in by_method]
    rows = [(m, b) for m in methods for b in histogram(by_method.get(m, []), args.bins)]
    atomic_write_text(args.out, render(write_histogram_csv, rows))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(seed=args.seed, num_speakers=args.speakers, dim=args.dim,
                         conversation_length=args.length,
                         turn_length=(args.turn_min, args.turn_max),
                         concentration=args.concentration,
                         inter_speaker_min_angle=args.min_angle, error_rate=args.error_rate,
                         error_bias=args.error_bias, segment_drift=args.segment_drift)
        convs = generate_corpus(spec, args.conversations)
    except SynthError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    errors = io.StringIO()
    writer = csv.writer(errors, lineterminator="\n")
    writer.writerow(["conversation_id", "start", "end", "speaker", "corrupted"])
    for c in convs:
        cid = c.conversation_id
        emb, ref, hyp = out / f"{cid}.emb.csv", out / f"{cid}.ref.rttm", out / f"{cid}.hyp.rttm"
        atomic_write_text(emb, render(ingest.write_embeddings_csv, c.track))
        atomic_write_text(ref, render(ingest.write_rttm, {cid: c.reference}))
        atomic_write_text(hyp, render(ingest.write_rttm, {cid: c.hypothesis}))
        for seg, bad in zip(c.hypothesis.segments, c.error_mask):
            writer.writerow([cid, f"{seg.start:.3f}", f"{seg.end:.3f}", seg.speaker, int(bad)])
        entries.append(ConversationEntry(cid, emb, hyp, ref))
    atomic_write_text(out / "errors.csv", errors.getvalue())
    atomic_write_text(out / "manifest.json",
                      ingest.manifest_to_json(CorpusManifest(tuple(entries)), relative_to=out))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_scoring(p):
    p.add_argument("--collar", type=float, default=0.25, help="collar in seconds (default 0.25)")
    p.add_argument("--include-overlap", action="store_true",
                   help="score overlapping reference speech (excluded by default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diarconf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diarize", help="spectral clustering of embedding tracks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-speakers", type=int, default=10)
    p.add_argument("--num-speakers", type=int, default=None, help="fix the speaker count")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("score", help="segment confidence scores")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", type=_methods, default=_methods(BLACK_BOX_METHODS))
    p.add_argument("--local-eps", type=float, default=1e-4)
    p.add_argument("--local-max-iters", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="confidence CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="cDER at fixed coverages")
    p.add_argument("--manifest", required=True)
    p.add_argument("--confidence", required=True)
    p.add_argument("--methods", type=_methods, default=None)
    p.add_argument("--coverage", type=_float_list, default=[0.7, 0.9, 1.0])
    p.add_argument("--per-conversation", action="store_true")
    p.add_argument("--pooled", action="store_true", help="rank segments over the whole corpus")
    _add_scoring(p)
    p.add_argument("--out", required=True, help="metrics CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="cDER vs coverage curve")
    p.add_argument("--manifest", required=True)
    p.add_argument("--confidence", required=True)
    p.add_argument("--methods", type=_methods, default=None)
    p.add_argument("--grid", type=_grid, default=default_grid(),
                   help="lo:hi:step or comma list (default 0.30:1.00:0.05)")
    p.add_argument("--pooled", action="store_true")
    _add_scoring(p)
    p.add_argument("--out", required=True, help="curve CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("threshold", help="select a global score threshold on validation data")
    p.add_argument("--manifest", required=True, help="validation manifest")
    p.add_argument("--confidence", required=True, help="validation confidence CSV")
    p.add_argument("--method", type=Method, required=True)
    p.add_argument("--criterion", choices=CRITERIA, default="ratio")
    p.add_argument("--min-coverage", type=float, default=0.5)
    p.add_argument("--apply-manifest", help="test manifest to apply the threshold to")
    p.add_argument("--apply-confidence", help="test confidence CSV")
    p.add_argument("--apply-out", help="test metrics CSV")
    p.add_argument("--per-conversation", action="store_true")
    _add_scoring(p)
    p.add_argument("--out", required=True, help="threshold JSON")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("histogram", help="confidence score histograms")
    p.add_argument("--confidence", required=True)
    p.add_argument("--methods", type=_methods, default=None)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True, help="histogram CSV")
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--conversations", type=int, default=10)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--length", type=float, default=120.0, help="seconds per conversation")
    p.add_argument("--turn-min", type=float, default=1.0)
    p.add_argument("--turn-max", type=float, default=6.0)
    p.add_argument("--concentration", type=float, default=10.0)
    p.add_argument("--min-angle", type=float, default=60.0)
    p.add_argument("--error-rate", type=float, default=0.15)
    p.add_argument("--error-bias", choices=ERROR_BIASES, default="distance_correlated")
    p.add_argument("--segment-drift", type=float, default=1.5,
                   help="typical per-turn offset from the speaker direction")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return EXIT_FATAL
    except (ParseError, OSError) as exc:
        log.error("%s", _describe(exc))
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
