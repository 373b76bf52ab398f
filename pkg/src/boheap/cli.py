"""Command-line front end.

``boheap analyze FILE...`` runs propagation, symbolic shape analysis,
verification-condition generation and checking, then writes a report per
procedure.  Exit code 0 when every verification condition is valid, 1 when any
is not valid, 2 when any is unknown (and none invalid), 3 on input errors.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import AnalysisConfig
from .engine import Engine
from .parser import ParseError, parse_procedure, print_procedure
from .prover import QueryCache, export_smtlib
from .semantics import Scope

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNKNOWN = 2
EXIT_INPUT = 3


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boheap",
                                 description="symbolic shape analysis for "
                                             "heap-manipulating procedures")
    sub = ap.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="analyze benchmark files")
    an.add_argument("files", nargs="+")
    an.add_argument("--scope", type=int, default=3, metavar="N",
                    help="object-count bound for validity (default 3)")
    an.add_argument("--data-max", type=int, default=7, metavar="M",
                    help="data values range over [0, M] (default 7)")
    an.add_argument("--backend", action="append", default=None,
                    metavar="B", help="enum or smtlib:<solver path>; "
                    "repeatable, tried in order (default enum)")
    an.add_argument("--cache", default=None, metavar="FILE",
                    help="persistent query cache file")
    an.add_argument("--no-cache", action="store_true",
                    help="disable the query cache entirely")
    an.add_argument("--cube-max", type=int, default=3, metavar="K",
                    help="max literals per enumerated cube (default 3)")
    an.add_argument("--emit", choices=("text", "json-lines"), default="text")
    an.add_argument("--out", default=None, metavar="DIR",
                    help="write report files here instead of stdout")
    an.add_argument("--smtlib-dir", default=None, metavar="DIR",
                    help="export every verification condition as SMT-LIB")
    an.add_argument("--trace", action="store_true",
                    help="dump reachability heap sets in the report")
    an.add_argument("--no-frames", action="store_true",
                    help="disable the unaffected-predicate frame shortcut")
    an.add_argument("--no-fuse", action="store_true",
                    help="run splitting and cleaning as separate passes")
    an.add_argument("--no-relevance", action="store_true",
                    help="track all predicates at all locations")
    an.add_argument("--jobs", type=int, default=1,
                    help="parallelism cap for checker calls")
    an.add_argument("--stats", action="store_true",
                    help="print the stats table (with timings) to stderr")

    pp = sub.add_parser("print", help="parse and reprint a benchmark file")
    pp.add_argument("file")
    return ap


def _analyze(args) -> int:
    cfg = AnalysisConfig(
        scope=Scope(n_objects=args.scope, data_max=args.data_max),
        cube_max=args.cube_max,
        frame_unaffected=not args.no_frames,
        fuse_split_clean=not args.no_fuse,
        relevance_filter=not args.no_relevance,
        backends=tuple(args.backend) if args.backend else ("enum",),
        cache_path=None if args.no_cache else args.cache,
        use_cache=not args.no_cache,
        jobs=args.jobs,
        emit=args.emit,
        trace=args.trace,
    )
    cache = None
    if cfg.use_cache and cfg.cache_path:
        cache = QueryCache.load(cfg.cache_path)
    exit_code = EXIT_OK
    for fname in args.files:
        path = Path(fname)
        try:
            spec = parse_procedure(path.read_text())
        except OSError as e:
            print(f"boheap: cannot read {fname}: {e}", file=sys.stderr)
            return EXIT_INPUT
        except ParseError as e:
            print(f"boheap: {fname}: {e}", file=sys.stderr)
            return EXIT_INPUT
        engine = Engine(spec, cfg, cache=cache if cfg.use_cache else None)
        t0 = time.perf_counter()
        report = engine.run()
        elapsed = time.perf_counter() - t0
        text = (report.render_text() if cfg.emit == "text"
                else report.render_json_lines())
        if args.out:
            outdir = Path(args.out)
            outdir.mkdir(parents=True, exist_ok=True)
            ext = "txt" if cfg.emit == "text" else "jsonl"
            (outdir / f"{spec.name}.{ext}").write_text(text)
        else:
            sys.stdout.write(text)
        if args.stats:
            print(stats_table(report, elapsed), file=sys.stderr)
        if args.smtlib_dir:
            _export_vcs(engine, report, Path(args.smtlib_dir))
        if any(r.verdict == "not_valid" for r in report.vcs):
            exit_code = max(exit_code, EXIT_INVALID)
        elif any(r.verdict == "unknown" for r in report.vcs):
            exit_code = max(exit_code, EXIT_UNKNOWN)
    if cfg.use_cache and cfg.cache_path and cache is not None:
        cache.save(cfg.cache_path)
    return exit_code


def stats_table(report, elapsed: float) -> str:
    """Stats in the shape of the experiment table: predicate counts (total and
    user provided), checker calls (total and cache-hit percentage), and
    running time (total and share spent in the checker backends)."""
    s = report.stats
    queries = s["checker_queries"]
    hits = s["checker_cache_hits"]
    hit_pct = 100.0 * hits / queries if queries else 0.0
    t = report.timings
    phase = " ".join(f"{k}={v:.2f}s" for k, v in t.items())
    return (f"{report.procedure}: predicates {s['predicates_total']} "
            f"({s['predicates_user']} user) | checker calls {queries} "
            f"({hit_pct:.0f}% cache hits) | time {elapsed:.2f}s [{phase}]")


def _export_vcs(engine, report, outdir: Path):
    outdir.mkdir(parents=True, exist_ok=True)
    cmap = engine.propagate_phase()
    reach = engine.reach_phase(cmap)
    for i, vc in enumerate(engine.vcgen(reach)):
        script = export_smtlib(vc["query"], engine.proc.vocab,
                               engine.config.scope)
        (outdir / f"{report.procedure}_vc{i}.smt2").write_text(script)


def _print(args) -> int:
    try:
        spec = parse_procedure(Path(args.file).read_text())
    except OSError as e:
        print(f"boheap: cannot read {args.file}: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ParseError as e:
        print(f"boheap: {args.file}: {e}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(print_procedure(spec))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    if args.command == "analyze":
        return _analyze(args)
    if args.command == "print":
        return _print(args)
    return EXIT_INPUT  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
