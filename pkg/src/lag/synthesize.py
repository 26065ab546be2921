"""Final-answer synthesis, validation, the fallback path, and the full pipeline."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .core import (
    AblationFlags,
    AnswerTrace,
    ChainStep,
    LogicalChain,
    Question,
    RetrievalHit,
    StepStatus,
    SubQuestion,
    TerminationEvent,
    TerminationReason,
    TerminatorConfig,
)
from .decompose import LoadConfig, decompose
from .errors import DecompositionError, MalformedResponseError, StructuralError, SynthesisError
from .index import VectorIndex, retrieve
from .planner import emission_order, extract_dependencies, reorder
from .prompts import Templates, ask, default_templates
from .providers import CountingProviders, Role
from .reasoner import ReasoningState, format_passages, run_chain, substitute

log = logging.getLogger(__name__)

_FINAL_RE = re.compile(r"^[ \t]*FINAL[ \t]*:[ \t]*(\S.*?)[ \t]*$", re.IGNORECASE | re.MULTILINE)


def extract_final(text: str) -> str:
    matches = _FINAL_RE.findall(text)
    if not matches:
        raise MalformedResponseError("no FINAL: line")
    return matches[-1]


def _require_final(reply: str) -> str:
    extract_final(reply)
    return reply


def _answered(state: ReasoningState) -> list[ChainStep]:
    return [s for s in state.chain.steps if s.status is StepStatus.ANSWERED]


def format_steps(state: ReasoningState) -> str:
    lines = []
    for s in _answered(state):
        lines.append(f"{s.index}. {substitute(s.sub_question.text, state.answers)} -> {s.answer}")
    return "\n".join(lines) or "(none)"


def _titles(state: ReasoningState, delta: float) -> str:
    titles: dict[str, None] = {}
    for s in _answered(state):
        support = [h for h in s.hits if h.score >= delta] or s.hits[:1]
        for h in support:
            titles.setdefault(h.passage.source_doc)
    return ", ".join(f'"{t}"' for t in titles) or "(none)"


def draft_answer(
    question: Question,
    state: ReasoningState,
    llm,
    templates: Templates | None = None,
    delta: float = TerminatorConfig.delta,
) -> str:
    """Ask for a draft built from the answered steps; the draft must carry a FINAL line."""
    templates = templates or default_templates()
    spec = templates.spec(
        Role.DRAFT, key=question.text, question=question.text, steps=format_steps(state), titles=_titles(state, delta)
    )
    try:
        return ask(llm, spec, _require_final)
    except MalformedResponseError as exc:
        raise SynthesisError(f"draft has no FINAL line: {exc}") from exc


@dataclass(frozen=True)
class DraftVerdict:
    consistent: bool
    reason: str = ""


_VERDICT_RE = re.compile(r"^[ \t]*(INCONSISTENT|CONSISTENT)\b[ \t]*:?[ \t]*(.*?)[ \t]*$", re.IGNORECASE | re.MULTILINE)


def parse_verdict(reply: str) -> DraftVerdict:
    m = _VERDICT_RE.search(reply)
    if m is None:
        raise MalformedResponseError(f"no CONSISTENT/INCONSISTENT verdict in {reply[:60]!r}")
    if m.group(1).upper() == "CONSISTENT":
        return DraftVerdict(True)
    return DraftVerdict(False, m.group(2) or "inconsistent")


def validate_draft(
    question: Question, draft: str, state: ReasoningState, llm, templates: Templates | None = None
) -> DraftVerdict:
    templates = templates or default_templates()
    spec = templates.spec(
        Role.VALIDATE_DRAFT, key=question.text, question=question.text, steps=format_steps(state), draft=draft
    )
    try:
        return ask(llm, spec, parse_verdict)
    except MalformedResponseError:
        return DraftVerdict(False, "unparseable-verdict")


def alternative_solution(
    question: Question,
    subs: list[SubQuestion],
    state: ReasoningState,
    index: VectorIndex,
    providers,
    cfg: TerminatorConfig,
    templates: Templates | None = None,
) -> str:
    """Answer from the reliable prefix plus fresh retrieval for every unresolved sub-question."""
    templates = templates or default_templates()
    resolved = {s.index for s in _answered(state)}
    context: dict[str, RetrievalHit] = {}
    for s in state.chain.steps:
        if s.index in resolved:
            for h in s.hits:
                context.setdefault(h.passage.id, h)
    for sq in sorted(subs, key=lambda s: s.index):
        if sq.index in resolved:
            continue
        text = substitute(sq.text, state.answers)
        hits = retrieve(index, providers.embed(text), cfg.k)
        providers.count_retrieval()
        for h in hits:
            context.setdefault(h.passage.id, h)

    sub_lines = "\n".join(f"{s.index}. {substitute(s.text, state.answers)}" for s in sorted(subs, key=lambda s: s.index))
    spec = templates.spec(
        Role.FALLBACK,
        key=question.text,
        question=question.text,
        sub_questions=sub_lines,
        prefix=format_steps(state),
        passages=format_passages(list(context.values())),
    )
    reply = providers.complete(spec)
    try:
        return extract_final(reply)
    except MalformedResponseError:
        pass
    retry = templates.spec(
        Role.FALLBACK,
        key=question.text,
        question=question.text,
        sub_questions=sub_lines,
        prefix=format_steps(state),
        passages=format_passages(list(context.values())) + "\n\nEnd your reply with a line starting with FINAL:",
    )
    reply = providers.complete(retry)
    try:
        return extract_final(reply)
    except MalformedResponseError:
        state.warnings.append("fallback reply had no FINAL line; raw completion used")
        return reply.strip() or "unknown"


def _engine_echo(cfg: TerminatorConfig, load: LoadConfig, templates: Templates) -> dict:
    return {"terminator": cfg.to_dict(), "load": load.to_dict(), "templates": templates.hashes()}


def answer(
    question: Question | str,
    index: VectorIndex,
    llm,
    embedder,
    cfg: TerminatorConfig = TerminatorConfig(),
    load: LoadConfig = LoadConfig(),
    flags: AblationFlags = AblationFlags(),
    templates: Templates | None = None,
    config_echo: dict | None = None,
) -> AnswerTrace:
    """Run the whole pipeline for one question and return its trace.

    Only provider transport failures escape; decomposition, structure and
    synthesis failures are routed to the fallback answer and recorded.
    """
    templates = templates or default_templates()
    q = question if isinstance(question, Question) else Question.from_text(question)
    p = CountingProviders(llm, embedder)
    warnings: list[str] = []
    termination: TerminationEvent | None = None
    draft: str | None = None
    final: str | None = None

    try:
        subs = decompose(q, p, load, warnings, templates) if flags.decompose else [SubQuestion(1, q.text)]
        graph = extract_dependencies(subs)
        chain = reorder(graph, subs, q) if flags.reorder else emission_order(graph, subs, q)
    except (DecompositionError, StructuralError) as exc:
        warnings.append(f"decomposition failed, answering the whole question: {exc}")
        subs = [SubQuestion(1, q.text)]
        chain = LogicalChain(q, [ChainStep(subs[0], StepStatus.SKIPPED)], [])
        termination = TerminationEvent(TerminationReason.DECOMPOSITION_FAILURE, 1, str(exc))
        state = ReasoningState(chain, termination=termination)
    else:
        state = run_chain(chain, index, p, cfg, flags, templates)
        termination = state.termination

    if termination is None:
        answered = _answered(state)
        if not answered:
            first = next(s for s in chain.steps if s.status is not StepStatus.SKIPPED)
            termination = TerminationEvent(TerminationReason.DEPENDENCY_EXHAUSTION, first.index, "no step could be answered")
        else:
            last = answered[-1].index
            try:
                draft = draft_answer(q, state, p, templates, cfg.delta)
                verdict = validate_draft(q, draft, state, p, templates)
            except SynthesisError as exc:
                termination = TerminationEvent(TerminationReason.DRAFT_INCONSISTENCY, last, str(exc))
            else:
                if verdict.consistent:
                    final = extract_final(draft)
                else:
                    termination = TerminationEvent(TerminationReason.DRAFT_INCONSISTENCY, last, verdict.reason)

    used_fallback = final is None
    if used_fallback:
        final = alternative_solution(q, subs, state, index, p, cfg, templates)

    echo = _engine_echo(cfg, load, templates)
    echo.update(config_echo or {})
    return AnswerTrace(
        question=q,
        sub_questions=list(subs),
        chain=chain,
        final_answer=final or "unknown",
        termination=termination,
        used_fallback=used_fallback,
        draft=draft,
        provider_calls=p.snapshot(),
        warnings=warnings + state.warnings,
        flags=flags.to_dict(),
        config=echo,
    )
