"""Step-by-step resolution of a logical chain, with the logical terminator.

Each step builds its retrieval query from the answers it depends on,
retrieves, and is then checked before and after answering:

* confidence drop: every retrieved passage scores below ``delta``;
* semantic saturation: most new passages nearly duplicate what was already
  gathered (similarity above ``gamma``);
* dependency exhaustion: all prerequisites answered, yet the model reports
  the step unanswerable or contradictory;
* step limit: ``t_max`` steps resolved with work still pending.

The first check to fire ends the run; remaining steps are marked skipped.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PLACEHOLDER_RE,
    AblationFlags,
    ChainStep,
    LogicalChain,
    Passage,
    ProviderCalls,
    RetrievalHit,
    StepStatus,
    TerminationEvent,
    TerminationReason,
    TerminatorConfig,
)
from .errors import ChainContractError, LagError, MalformedResponseError
from .index import VectorIndex, retrieve
from .prompts import Templates, ask, default_templates
from .providers import Role

log = logging.getLogger(__name__)


@dataclass
class ReasoningState:
    chain: LogicalChain
    accumulated_context: dict[str, Passage] = field(default_factory=dict)
    answers: dict[int, str] = field(default_factory=dict)
    steps_resolved: int = 0
    termination: TerminationEvent | None = None
    warnings: list[str] = field(default_factory=list)
    calls_at_termination: ProviderCalls | None = None

    def pending_after(self, step: ChainStep) -> bool:
        pos = self.chain.steps.index(step)
        return any(s.status is StepStatus.PENDING for s in self.chain.steps[pos + 1:])


def substitute(text: str, answers: dict[int, str]) -> str:
    """Replace each ``#n`` whose answer is known; leave the rest untouched."""
    return PLACEHOLDER_RE.sub(lambda m: answers.get(int(m.group(1)), m.group(0)), text)


def build_step_query(state: ReasoningState, step: ChainStep, strict: bool = True) -> str:
    """``"A1: <answer> ... Q: <sub-question with answers filled in>"``."""
    deps = sorted(step.sub_question.deps)
    missing = [n for n in deps if n not in state.answers]
    if missing and strict:
        raise ChainContractError(f"step {step.index} resolved before its dependencies {missing}")
    prefix = "".join(f"A{n}: {state.answers[n]} " for n in deps if n in state.answers)
    return f"{prefix}Q: {substitute(step.sub_question.text, state.answers)}"


# --- terminator checks -------------------------------------------------------


def check_confidence_drop(hits: list[RetrievalHit], cfg: TerminatorConfig) -> bool:
    return all(h.score < cfg.delta for h in hits)


def redundancy(new_hits: list[RetrievalHit], context: list[Passage]) -> list[float]:
    """For each new hit, its highest cosine against any passage in ``context``."""
    prev = np.array([p.embedding for p in context], dtype=np.float64)
    prev /= np.linalg.norm(prev, axis=1, keepdims=True)
    out = []
    for h in new_hits:
        v = np.asarray(h.passage.embedding, dtype=np.float64)
        out.append(float(np.max(prev @ (v / np.linalg.norm(v)))))
    return out


def check_saturation(new_hits: list[RetrievalHit], state: ReasoningState, cfg: TerminatorConfig) -> bool:
    if not state.accumulated_context or not new_hits:
        return False
    sims = redundancy(new_hits, list(state.accumulated_context.values()))
    fraction = sum(s > cfg.gamma for s in sims) / len(sims)
    return fraction >= cfg.saturation_fraction


def check_step_limit(state: ReasoningState, cfg: TerminatorConfig) -> bool:
    return state.steps_resolved >= cfg.t_max


def check_dependency_exhaustion(state: ReasoningState, step: ChainStep, answerable_verdict: bool) -> bool:
    deps_done = all(state.chain.step(d).status is StepStatus.ANSWERED for d in step.sub_question.deps)
    return deps_done and not answerable_verdict


# --- answering ---------------------------------------------------------------


@dataclass(frozen=True)
class StepAnswer:
    answer: str | None
    answerable: bool
    consistent: bool


_LINE_RE = {
    "answer": re.compile(r"^[ \t]*ANSWER[ \t]*:[ \t]*(.*?)[ \t]*$", re.IGNORECASE | re.MULTILINE),
    "assessment": re.compile(r"^[ \t]*ASSESSMENT[ \t]*:[ \t]*(UNANSWERABLE|ANSWERABLE)\b", re.IGNORECASE | re.MULTILINE),
    "consistency": re.compile(r"^[ \t]*CONSISTENCY[ \t]*:[ \t]*(CONSISTENT|CONTRADICTS)\b", re.IGNORECASE | re.MULTILINE),
}


def parse_step_answer(reply: str) -> StepAnswer:
    found = {k: rx.search(reply) for k, rx in _LINE_RE.items()}
    missing = [k.upper() for k, m in found.items() if m is None]
    if missing:
        raise MalformedResponseError(f"answer reply lacks {', '.join(missing)} line(s)")
    answer = found["answer"].group(1).strip() or None
    return StepAnswer(
        answer=answer,
        answerable=found["assessment"].group(1).upper() == "ANSWERABLE",
        consistent=found["consistency"].group(1).upper() == "CONSISTENT",
    )


def format_passages(hits: list[RetrievalHit]) -> str:
    if not hits:
        return "(none)"
    return "\n".join(f"[{i}] {h.passage.source_doc}: {' '.join(h.passage.text.split())}" for i, h in enumerate(hits, 1))


def _dependency_block(state: ReasoningState, step: ChainStep) -> str:
    lines = []
    for n in sorted(step.sub_question.deps):
        if n in state.answers:
            lines.append(f"A{n}: {state.answers[n]} (answer to: {substitute(state.chain.step(n).sub_question.text, state.answers)})")
    return "\n".join(lines) or "(none)"


@dataclass(frozen=True)
class StepOutcome:
    answered: bool
    event: TerminationEvent | None = None


def _stop(state: ReasoningState, step: ChainStep, providers, reason: TerminationReason, detail: str) -> StepOutcome:
    event = TerminationEvent(reason, step.index, detail)
    state.termination = event
    if hasattr(providers, "snapshot"):
        state.calls_at_termination = providers.snapshot()
    log.info("terminated at step %d: %s (%s)", step.index, reason.value, detail)
    return StepOutcome(False, event)


def resolve_step(
    state: ReasoningState,
    step: ChainStep,
    index: VectorIndex,
    providers,
    cfg: TerminatorConfig,
    flags: AblationFlags = AblationFlags(),
    templates: Templates | None = None,
) -> StepOutcome:
    templates = templates or default_templates()
    sq = step.sub_question
    if flags.chain:
        query = build_step_query(state, step, strict=flags.reorder)
        asked = substitute(sq.text, state.answers)
    else:
        query = asked = sq.text
    step.query_text = query

    try:
        hits = retrieve(index, providers.embed(query), cfg.k)
        providers.count_retrieval()
        step.hits = hits

        if flags.terminator:
            if check_confidence_drop(hits, cfg):
                step.status = StepStatus.UNANSWERABLE
                best = max((h.score for h in hits), default=float("nan"))
                return _stop(state, step, providers, TerminationReason.CONFIDENCE_DROP,
                             f"all {len(hits)} hits below delta={cfg.delta} (best {best:.4f})")
            if check_saturation(hits, state, cfg):
                step.status = StepStatus.UNANSWERABLE
                return _stop(state, step, providers, TerminationReason.SEMANTIC_SATURATION,
                             f">= {cfg.saturation_fraction:.0%} of new hits above gamma={cfg.gamma}")

        spec = templates.spec(
            Role.ANSWER_STEP,
            key=asked,
            sub_question=asked,
            dependencies=_dependency_block(state, step) if flags.chain else "(none)",
            passages=format_passages(hits),
        )
        try:
            verdict = ask(providers, spec, parse_step_answer)
        except MalformedResponseError as exc:
            msg = f"step {sq.index}: unusable answer reply ({exc}); treated as unanswerable"
            log.warning(msg)
            state.warnings.append(msg)
            verdict = StepAnswer(None, False, True)
    except LagError as exc:
        exc.step_index = sq.index
        raise

    if not (verdict.answerable and verdict.consistent and verdict.answer):
        if flags.terminator:
            step.status = StepStatus.UNANSWERABLE
            step.answer = verdict.answer
            if check_dependency_exhaustion(state, step, answerable_verdict=False):
                why = "contradicts earlier answers" if not verdict.consistent else "not answerable from retrieved passages"
                return _stop(state, step, providers, TerminationReason.DEPENDENCY_EXHAUSTION, f"step {sq.index} {why}")
            return StepOutcome(False)
        state.warnings.append(f"step {sq.index}: answered best-effort without support")

    answer = verdict.answer or "unknown"
    step.status = StepStatus.ANSWERED
    step.answer = answer
    state.answers[sq.index] = answer
    for h in hits:
        if h.score >= cfg.delta:
            state.accumulated_context.setdefault(h.passage.id, h.passage)
    state.steps_resolved += 1

    if flags.terminator and check_step_limit(state, cfg) and state.pending_after(step):
        return _stop(state, step, providers, TerminationReason.STEP_LIMIT, f"{state.steps_resolved} steps resolved (t_max={cfg.t_max})")
    return StepOutcome(True)


def run_chain(
    chain: LogicalChain,
    index: VectorIndex,
    providers,
    cfg: TerminatorConfig,
    flags: AblationFlags = AblationFlags(),
    templates: Templates | None = None,
) -> ReasoningState:
    """Resolve the chain's steps in order until done or terminated."""
    state = ReasoningState(chain)
    for step in chain.steps:
        if state.termination is not None:
            step.status = StepStatus.SKIPPED
            continue
        if flags.chain:
            blocked = [
                d for d in step.sub_question.deps
                if chain.step(d).status in (StepStatus.UNANSWERABLE, StepStatus.SKIPPED)
            ]
            if blocked:
                step.status = StepStatus.SKIPPED
                continue
        resolve_step(state, step, index, providers, cfg, flags, templates)
    return state
