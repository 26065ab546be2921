"""Benchmark harness: dataset loading, answer metrics, sweeps and reports."""

from __future__ import annotations

import csv
import json
import logging
import re
import time
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from .core import AblationFlags, AnswerTrace, StepStatus, TerminatorConfig
from .decompose import LoadConfig
from .errors import LagError, MalformedResponseError, TransportError
from .index import VectorIndex
from .prompts import Templates, ask, default_templates
from .providers import Role
from .synthesize import answer

log = logging.getLogger(__name__)

REPORT_FORMAT = "lag-report/1"
WALL_CLOCK_FIELDS = ("started_at", "elapsed_s")


@dataclass(frozen=True)
class QAExample:
    id: str
    question: str
    gold_answer: str
    gold_support_titles: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError(f"example {self.id}: empty question")
        if not self.gold_answer.strip():
            raise ValueError(f"example {self.id}: empty gold answer")


def _support_titles(row: dict) -> tuple[str, ...] | None:
    if "gold_support_titles" in row:
        return tuple(row["gold_support_titles"])
    if "supporting_facts" in row:
        facts = row["supporting_facts"]
        if isinstance(facts, dict):  # HF-style {"title": [...], "sent_id": [...]}
            return tuple(dict.fromkeys(facts.get("title", [])))
        return tuple(dict.fromkeys(f[0] for f in facts))
    if "paragraphs" in row:  # MuSiQue
        return tuple(p["title"] for p in row["paragraphs"] if p.get("is_supporting"))
    return None


def example_from_row(row: dict, position: int) -> QAExample:
    ex_id = row.get("id") or row.get("_id") or row.get("qid") or f"ex{position:05d}"
    answer_ = row.get("answer", row.get("gold_answer"))
    if answer_ is None and row.get("answers"):
        answer_ = row["answers"][0]
    if not isinstance(answer_, str) or "question" not in row:
        raise ValueError(f"record {position}: needs 'question' and a string answer")
    return QAExample(str(ex_id), row["question"], answer_, _support_titles(row))


def load_dataset(path: str | Path) -> list[QAExample]:
    """Read a JSON array or JSON Lines file of multi-hop QA records.

    Accepts the HotpotQA (``_id``, ``supporting_facts``), MuSiQue
    (``paragraphs[].is_supporting``) and 2Wiki field layouts as well as the
    plain ``id/question/answer/gold_support_titles`` shape.
    """
    raw = Path(path).read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        rows = json.loads(raw)
    else:
        rows = []
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc.msg}") from exc
    return [example_from_row(r, i) for i, r in enumerate(rows)]


# --- metrics -----------------------------------------------------------------


def normalize(text: str) -> str:
    return " ".join(unicodedata.normalize("NFKC", text).casefold().split())


def _strip_punct(text: str) -> str:
    start, end = 0, len(text)
    while start < end and (unicodedata.category(text[start]).startswith("P") or text[start].isspace()):
        start += 1
    while end > start and (unicodedata.category(text[end - 1]).startswith("P") or text[end - 1].isspace()):
        end -= 1
    return text[start:end]


def contain_match(prediction: str, gold: str) -> bool:
    """True when the normalized gold answer is a substring of the prediction."""
    g = _strip_punct(normalize(gold))
    if not g:
        g = normalize(gold)
    return bool(g) and g in normalize(prediction)


@dataclass(frozen=True)
class JudgeVerdict:
    match: bool
    warning: str | None = None

    def __bool__(self) -> bool:
        return self.match


_YES_NO_RE = re.compile(r"^\W*(YES|NO)\b", re.IGNORECASE)


def parse_yes_no(reply: str) -> bool:
    m = _YES_NO_RE.match(reply)
    if m is None:
        raise MalformedResponseError(f"expected YES or NO, got {reply[:40]!r}")
    return m.group(1).upper() == "YES"


def judge_match(question: str, gold: str, prediction: str, llm, templates: Templates | None = None) -> JudgeVerdict:
    templates = templates or default_templates()
    spec = templates.spec(
        Role.JUDGE_EQUIVALENCE,
        key=f"{question} => {prediction}",
        question=question,
        gold=gold,
        prediction=prediction,
    )
    try:
        return JudgeVerdict(ask(llm, spec, parse_yes_no))
    except MalformedResponseError as exc:
        return JudgeVerdict(False, f"judge reply unusable, counted as no match: {exc}")


# --- records and reports -----------------------------------------------------


@dataclass
class EvalRecord:
    id: str
    question: str
    gold: str
    prediction: str | None = None
    contain_match: bool = False
    judge_match: bool | None = None
    judge_error: str | None = None
    error: str | None = None
    termination: str | None = None
    termination_step: int | None = None
    used_fallback: bool = False
    steps_answered: int = 0
    llm_calls: int = 0
    embed_calls: int = 0
    retrievals: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EvalRecord:
        return cls(**d)


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


def compute_aggregates(records: Sequence[EvalRecord]) -> dict[str, Any]:
    judged = [r.judge_match for r in records if r.judge_match is not None]
    return {
        "n": len(records),
        "errors": sum(r.error is not None for r in records),
        "contain_accuracy": _mean([float(r.contain_match) for r in records]),
        "judge_accuracy": _mean([float(j) for j in judged]),
        "fallback_rate": _mean([float(r.used_fallback) for r in records]),
        "mean_steps": _mean([float(r.steps_answered) for r in records]),
        "mean_retrievals": _mean([float(r.retrievals) for r in records]),
    }


@dataclass
class EvalReport:
    label: str
    flags: AblationFlags
    records: list[EvalRecord]
    aggregates: dict[str, Any]
    metadata: dict[str, Any] = field(default_factory=dict)
    traces: dict[str, AnswerTrace] = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "label": self.label,
            "flags": self.flags.to_dict(),
            "aggregates": self.aggregates,
            "records": [r.to_dict() for r in self.records],
            "metadata": self.metadata,
        }

    def to_json(self, wall_clock: bool = True) -> str:
        d = self.to_dict()
        if not wall_clock:
            d["metadata"] = {k: v for k, v in d["metadata"].items() if k not in WALL_CLOCK_FIELDS}
        return json.dumps(d, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EvalReport:
        if d.get("format") != REPORT_FORMAT:
            raise ValueError(f"unsupported report format {d.get('format')!r}")
        records = [EvalRecord.from_dict(r) for r in d["records"]]
        recomputed = compute_aggregates(records)
        for key, value in recomputed.items():
            stored = d["aggregates"].get(key)
            if (value is None) != (stored is None) or (value is not None and abs(value - stored) > 1e-12):
                raise ValueError(f"report aggregate {key}={stored!r} disagrees with its records ({value!r})")
        return cls(d["label"], AblationFlags.from_dict(d["flags"]), records, d["aggregates"], d.get("metadata", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> EvalReport:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _record_from_trace(ex: QAExample, trace: AnswerTrace) -> EvalRecord:
    calls = trace.provider_calls
    return EvalRecord(
        id=ex.id,
        question=ex.question,
        gold=ex.gold_answer,
        prediction=trace.final_answer,
        contain_match=contain_match(trace.final_answer, ex.gold_answer),
        termination=trace.termination.reason.value if trace.termination else None,
        termination_step=trace.termination.step_index if trace.termination else None,
        used_fallback=trace.used_fallback,
        steps_answered=sum(s.status is StepStatus.ANSWERED for s in trace.chain.steps),
        llm_calls=calls.llm_calls,
        embed_calls=calls.embed_calls,
        retrievals=calls.retrievals,
        warnings=list(trace.warnings),
    )


def evaluate_example(
    ex: QAExample,
    index: VectorIndex,
    llm,
    embedder,
    cfg: TerminatorConfig,
    load: LoadConfig,
    flags: AblationFlags,
    templates: Templates,
    judge: bool = True,
    config_echo: dict | None = None,
) -> tuple[EvalRecord, AnswerTrace | None]:
    try:
        trace = answer(ex.question, index, llm, embedder, cfg, load, flags, templates, config_echo)
    except LagError as exc:
        log.warning("example %s failed: %s", ex.id, exc)
        return EvalRecord(ex.id, ex.question, ex.gold_answer, error=f"{type(exc).__name__}: {exc}"), None
    record = _record_from_trace(ex, trace)
    if judge:
        try:
            verdict = judge_match(ex.question, ex.gold_answer, trace.final_answer, llm, templates)
        except (TransportError, LagError) as exc:
            record.judge_error = f"{type(exc).__name__}: {exc}"
        else:
            record.judge_match = verdict.match
            if verdict.warning:
                record.warnings.append(verdict.warning)
    return record, trace


def run_eval(
    dataset: Sequence[QAExample],
    index: VectorIndex,
    llm,
    embedder,
    cfg: TerminatorConfig = TerminatorConfig(),
    load: LoadConfig = LoadConfig(),
    flags: AblationFlags = AblationFlags(),
    concurrency: int = 4,
    templates: Templates | None = None,
    judge: bool = True,
    label: str | None = None,
    config_echo: dict | None = None,
) -> EvalReport:
    """Answer every example (at most ``concurrency`` at a time) and score it.

    Records come back sorted by example id whatever the completion order.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    templates = templates or default_templates()
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()

    def one(ex: QAExample):
        return evaluate_example(ex, index, llm, embedder, cfg, load, flags, templates, judge, config_echo)

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        results = list(pool.map(one, dataset))

    pairs = sorted(zip(dataset, results), key=lambda p: p[0].id)
    records = [rec for _, (rec, _) in pairs]
    traces = {ex.id: tr for ex, (_, tr) in pairs if tr is not None}
    metadata = {
        "engine": {"terminator": cfg.to_dict(), "load": load.to_dict(), "templates": templates.hashes()},
        "config": config_echo or {},
        "judge": judge,
        "started_at": started.isoformat(timespec="seconds"),
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }
    return EvalReport(label or flag_label(flags), flags, records, compute_aggregates(records), metadata, traces)


# --- tables ------------------------------------------------------------------


def flag_label(flags: AblationFlags) -> str:
    parts = [name for name in ("decompose", "reorder", "chain", "terminator") if getattr(flags, name)]
    return "retrieval only" if not parts else "+ " + " + ".join(parts)


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.1f}"


TABLE_COLUMNS = ("method", "Contain-Acc.", "GPT-Acc.")


def table_rows(reports: Sequence[EvalReport]) -> list[tuple[str, str, str]]:
    return [(r.label, _pct(r.aggregates["contain_accuracy"]), _pct(r.aggregates["judge_accuracy"])) for r in reports]


def render_table(reports: Sequence[EvalReport]) -> str:
    rows = [TABLE_COLUMNS, *table_rows(reports)]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    fmt = lambda row: "| " + " | ".join(  # noqa: E731
        cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))
    ) + " |"
    rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([fmt(rows[0]), rule, *(fmt(r) for r in rows[1:])]) + "\n"


def write_table(reports: Sequence[EvalReport], path: str | Path, delimiter: str = "\t") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        writer.writerows(table_rows(reports))
