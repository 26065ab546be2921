"""Command-line entry point: ``lag index``, ``lag ask`` and ``lag eval``.

Settings are layered: built-in defaults, then ``--config FILE``, then any
explicit command-line flags. Exit status is 0 on success, 1 for user errors
(bad input, missing files, invalid config) and 2 for provider transport
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

from .config import load_settings
from .core import ABLATION_ROWS, AblationFlags
from .errors import LagError, TransportError
from .evaluation import EvalReport, load_dataset, render_table, run_eval, write_table
from .index import VectorIndex, ingest, load_corpus
from .synthesize import answer

log = logging.getLogger("lag")

EXIT_OK, EXIT_USER, EXIT_TRANSPORT = 0, 1, 2


def _engine_overrides(args: argparse.Namespace) -> dict:
    engine = {k: getattr(args, k) for k in ("delta", "gamma", "t_max", "k") if getattr(args, k, None) is not None}
    out: dict = {"engine": engine} if engine else {}
    if getattr(args, "tau0", None) is not None:
        out["load"] = {"tau0": args.tau0}
    if getattr(args, "chunk_size", None) is not None:
        out.setdefault("index", {})["chunk_size"] = args.chunk_size
    if getattr(args, "overlap", None) is not None:
        out.setdefault("index", {})["overlap"] = args.overlap
    if getattr(args, "concurrency", None) is not None:
        out["eval"] = {"concurrency": args.concurrency}
    return out


def _flags(args: argparse.Namespace) -> AblationFlags:
    return AblationFlags(
        decompose=not args.no_decompose,
        reorder=not args.no_reorder,
        chain=not args.no_chain,
        terminator=not args.no_terminator,
    )


def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-") or "row"


def _load_index(path: str) -> VectorIndex:
    if not Path(path).is_file():
        raise FileNotFoundError(f"index file not found: {path}")
    return VectorIndex.load(path)


# --- commands ----------------------------------------------------------------


def cmd_index(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, _engine_overrides(args))
    docs = load_corpus(args.corpus)
    # the corpus mtime stands in for a wall-clock stamp so reruns are byte-identical
    stamp = datetime.fromtimestamp(int(os.stat(args.corpus).st_mtime), timezone.utc).isoformat(timespec="seconds")
    index = ingest(docs, settings.build_embedder(), settings.chunk_size, settings.overlap, timestamp=stamp)
    index.save(args.output)
    print(f"dimension={index.dimension} passages={len(index)} -> {args.output}")
    return EXIT_OK


def cmd_ask(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, _engine_overrides(args))
    index = _load_index(args.index)
    trace = answer(
        args.question,
        index,
        settings.build_llm(),
        settings.build_embedder(),
        settings.terminator,
        settings.load,
        _flags(args),
        settings.templates(),
        settings.echo(),
    )
    trace_path = Path(args.trace or f"trace-{trace.question.id}.json")
    trace_path.write_text(json.dumps(trace.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    if trace.termination:
        print(f"terminated: {trace.termination.reason.value} at step {trace.termination.step_index}", file=sys.stderr)
    print(f"trace: {trace_path}")
    print(trace.final_answer)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, _engine_overrides(args))
    dataset = load_dataset(args.dataset)
    index = _load_index(args.index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = list(ABLATION_ROWS) if args.ablation == "matrix" else [(None, _flags(args))]

    llm, embedder, templates = settings.build_llm(), settings.build_embedder(), settings.templates()
    reports: list[EvalReport] = []
    failed = 0
    for label, flags in rows:
        try:
            report = run_eval(
                dataset, index, llm, embedder, settings.terminator, settings.load, flags,
                concurrency=settings.concurrency, templates=templates, judge=not args.no_judge,
                label=label, config_echo=settings.echo(),
            )
        except (LagError, ValueError) as exc:
            failed += 1
            print(f"row {label or flags.to_dict()} failed: {exc}", file=sys.stderr)
            continue
        path = out / f"report-{_slug(report.label)}.json"
        report.save(path)
        if args.traces:
            tdir = out / f"traces-{_slug(report.label)}"
            tdir.mkdir(exist_ok=True)
            for ex_id, trace in report.traces.items():
                (tdir / f"{ex_id}.json").write_text(json.dumps(trace.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        reports.append(report)

    if not reports:
        return EXIT_USER
    table = render_table(reports)
    (out / "table.txt").write_text(table, encoding="utf-8")
    write_table(reports, out / "table.tsv")
    from .plotting import plot_ablation

    plot_ablation(reports, out / "ablation.png")
    print(table, end="")
    print(f"reports, table.txt, table.tsv and ablation.png written to {out}")
    return EXIT_USER if failed else EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_engine_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine overrides (take precedence over --config)")
    g.add_argument("--delta", type=float, help="confidence-drop threshold")
    g.add_argument("--gamma", type=float, help="saturation similarity threshold")
    g.add_argument("--t-max", dest="t_max", type=int, help="maximum resolved steps")
    g.add_argument("-k", type=int, help="passages retrieved per step")
    g.add_argument("--tau0", type=float, help="split threshold at depth 0")


def _add_flag_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ablation switches")
    for name in ("decompose", "reorder", "chain", "terminator"):
        g.add_argument(f"--no-{name}", action="store_true", help=f"disable the {name} stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lag", description="Logic-augmented retrieval QA.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="chunk, embed and index a JSONL corpus")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config")
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--overlap", type=int)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question and write its trace")
    p.add_argument("question")
    p.add_argument("--index", required=True)
    p.add_argument("--config")
    p.add_argument("--trace", help="trace output path (default trace-<question id>.json)")
    _add_engine_args(p)
    _add_flag_args(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="score a dataset, optionally across the ablation matrix")
    p.add_argument("dataset")
    p.add_argument("--index", required=True)
    p.add_argument("--config")
    p.add_argument("--out", default="eval-out")
    p.add_argument("--ablation", choices=("single", "matrix"), default="single",
                   help="'matrix' runs the five cumulative rows; 'single' uses the --no-* switches")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--no-judge", action="store_true", help="skip the LLM equivalence judge")
    p.add_argument("--traces", action="store_true", help="also write one trace per example")
    _add_engine_args(p)
    _add_flag_args(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"error: transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (LagError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
