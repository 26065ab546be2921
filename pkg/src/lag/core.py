"""Domain types shared by every stage of the pipeline, plus chain validation.

Every type here serializes to plain JSON-compatible dicts via ``to_dict`` and
parses back with ``from_dict``; the trace file written per query is built
from these.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

PLACEHOLDER_RE = re.compile(r"#(\d+)")


def placeholders(text: str) -> set[int]:
    """Indices referenced by ``#n`` placeholders in ``text``."""
    return {int(m) for m in PLACEHOLDER_RE.findall(text)}


class Origin(str, Enum):
    USER = "user"
    DECOMPOSITION = "decomposition"


class StepStatus(str, Enum):
    PENDING = "pending"
    ANSWERED = "answered"
    UNANSWERABLE = "unanswerable"
    SKIPPED = "skipped"


class TerminationReason(str, Enum):
    CONFIDENCE_DROP = "confidence_drop"
    DEPENDENCY_EXHAUSTION = "dependency_exhaustion"
    SEMANTIC_SATURATION = "semantic_saturation"
    STEP_LIMIT = "step_limit"
    DRAFT_INCONSISTENCY = "draft_inconsistency"
    DECOMPOSITION_FAILURE = "decomposition_failure"


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    origin: Origin = Origin.USER

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("question text is empty")

    @classmethod
    def from_text(cls, text: str, origin: Origin = Origin.USER) -> Question:
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=6).hexdigest()
        return cls(id=f"q-{digest}", text=text, origin=origin)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "text": self.text, "origin": self.origin.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Question:
        return cls(id=d["id"], text=d["text"], origin=Origin(d["origin"]))


@dataclass(frozen=True)
class CognitiveLoadReport:
    semantic_scope: float
    reasoning_steps: float
    ambiguity: float
    total: float

    def __post_init__(self):
        for name in ("semantic_scope", "reasoning_steps", "ambiguity"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name}={value} outside [0, 1)")
        if self.total != self.semantic_scope + self.reasoning_steps + self.ambiguity:
            raise ValueError("total must equal the sum of its components")

    @classmethod
    def from_components(cls, scope: float, steps: float, ambiguity: float) -> CognitiveLoadReport:
        return cls(scope, steps, ambiguity, scope + steps + ambiguity)

    def to_dict(self) -> dict[str, Any]:
        return {
            "semantic_scope": self.semantic_scope,
            "reasoning_steps": self.reasoning_steps,
            "ambiguity": self.ambiguity,
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CognitiveLoadReport:
        return cls(d["semantic_scope"], d["reasoning_steps"], d["ambiguity"], d["total"])


@dataclass(frozen=True)
class SubQuestion:
    index: int
    text: str
    deps: frozenset[int] = frozenset()
    load: CognitiveLoadReport | None = None

    def __post_init__(self):
        object.__setattr__(self, "deps", frozenset(self.deps))
        if self.index < 1:
            raise ValueError(f"sub-question index {self.index} < 1")
        if not self.text.strip():
            raise ValueError(f"sub-question {self.index} has empty text")
        if self.index in self.deps:
            raise ValueError(f"sub-question {self.index} depends on itself")
        if any(d < 1 for d in self.deps):
            raise ValueError(f"sub-question {self.index} has a dependency index < 1")
        missing = placeholders(self.text) - self.deps
        if missing:
            raise ValueError(f"sub-question {self.index} placeholders {sorted(missing)} not in deps")

    @property
    def load_total(self) -> float:
        return self.load.total if self.load is not None else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "text": self.text,
            "deps": sorted(self.deps),
            "load": self.load.to_dict() if self.load is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SubQuestion:
        load = CognitiveLoadReport.from_dict(d["load"]) if d.get("load") is not None else None
        return cls(index=d["index"], text=d["text"], deps=frozenset(d["deps"]), load=load)


@dataclass(frozen=True)
class Passage:
    id: str
    source_doc: str
    text: str
    embedding: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"passage {self.id} has empty text")
        object.__setattr__(self, "embedding", tuple(float(x) for x in self.embedding))

    def to_dict(self, embeddings: bool = True) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "source_doc": self.source_doc, "text": self.text}
        if embeddings:
            d["embedding"] = list(self.embedding)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Passage:
        return cls(d["id"], d["source_doc"], d["text"], tuple(d.get("embedding", ())))


@dataclass(frozen=True)
class RetrievalHit:
    passage: Passage
    score: float

    def to_dict(self, embeddings: bool = True) -> dict[str, Any]:
        return {"passage": self.passage.to_dict(embeddings), "score": self.score}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RetrievalHit:
        return cls(Passage.from_dict(d["passage"]), d["score"])


def rank_key(hit: RetrievalHit) -> tuple[float, str]:
    """Sort key giving descending score, then ascending passage id."""
    return (-hit.score, hit.passage.id)


@dataclass
class ChainStep:
    sub_question: SubQuestion
    status: StepStatus = StepStatus.PENDING
    answer: str | None = None
    hits: list[RetrievalHit] = field(default_factory=list)
    query_text: str | None = None

    @property
    def index(self) -> int:
        return self.sub_question.index

    def to_dict(self, embeddings: bool = True) -> dict[str, Any]:
        return {
            "sub_question": self.sub_question.to_dict(),
            "status": self.status.value,
            "answer": self.answer,
            "hits": [h.to_dict(embeddings) for h in self.hits],
            "query_text": self.query_text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ChainStep:
        return cls(
            sub_question=SubQuestion.from_dict(d["sub_question"]),
            status=StepStatus(d["status"]),
            answer=d["answer"],
            hits=[RetrievalHit.from_dict(h) for h in d["hits"]],
            query_text=d["query_text"],
        )


@dataclass
class LogicalChain:
    question: Question
    steps: list[ChainStep]
    order_proof: list[tuple[int, int]] = field(default_factory=list)

    def step(self, index: int) -> ChainStep:
        for s in self.steps:
            if s.index == index:
                return s
        raise KeyError(index)

    @property
    def order(self) -> list[int]:
        return [s.index for s in self.steps]

    def to_dict(self, embeddings: bool = True) -> dict[str, Any]:
        return {
            "question": self.question.to_dict(),
            "steps": [s.to_dict(embeddings) for s in self.steps],
            "order_proof": [list(e) for e in self.order_proof],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LogicalChain:
        return cls(
            question=Question.from_dict(d["question"]),
            steps=[ChainStep.from_dict(s) for s in d["steps"]],
            order_proof=[(u, v) for u, v in d["order_proof"]],
        )


@dataclass(frozen=True)
class TerminatorConfig:
    delta: float = 0.3
    gamma: float = 0.9
    t_max: int = 5
    k: int = 5
    saturation_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.delta < self.gamma <= 1.0:
            raise ValueError("need 0 <= delta < gamma <= 1")
        if self.t_max < 1 or self.k < 1:
            raise ValueError("t_max and k must be >= 1")
        if not 0.0 < self.saturation_fraction <= 1.0:
            raise ValueError("saturation_fraction must lie in (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta": self.delta,
            "gamma": self.gamma,
            "t_max": self.t_max,
            "k": self.k,
            "saturation_fraction": self.saturation_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TerminatorConfig:
        return cls(**d)


@dataclass(frozen=True)
class TerminationEvent:
    reason: TerminationReason
    step_index: int
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"reason": self.reason.value, "step_index": self.step_index, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TerminationEvent:
        return cls(TerminationReason(d["reason"]), d["step_index"], d["detail"])


@dataclass
class ProviderCalls:
    llm_calls: int = 0
    embed_calls: int = 0
    retrievals: int = 0

    def to_dict(self) -> dict[str, int]:
        return {"llm_calls": self.llm_calls, "embed_calls": self.embed_calls, "retrievals": self.retrievals}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ProviderCalls:
        return cls(**d)


TRACE_FORMAT = "lag-trace/1"


@dataclass
class AnswerTrace:
    question: Question
    sub_questions: list[SubQuestion]
    chain: LogicalChain
    final_answer: str
    termination: TerminationEvent | None = None
    used_fallback: bool = False
    draft: str | None = None
    provider_calls: ProviderCalls = field(default_factory=ProviderCalls)
    warnings: list[str] = field(default_factory=list)
    flags: dict[str, bool] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.used_fallback and self.termination is None:
            raise ValueError("a fallback answer requires a termination event")

    def to_dict(self, embeddings: bool = False) -> dict[str, Any]:
        return {
            "format": TRACE_FORMAT,
            "question": self.question.to_dict(),
            "sub_questions": [s.to_dict() for s in self.sub_questions],
            "chain": self.chain.to_dict(embeddings),
            "termination": self.termination.to_dict() if self.termination else None,
            "used_fallback": self.used_fallback,
            "draft": self.draft,
            "final_answer": self.final_answer,
            "provider_calls": self.provider_calls.to_dict(),
            "warnings": list(self.warnings),
            "flags": dict(self.flags),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AnswerTrace:
        if d.get("format") != TRACE_FORMAT:
            raise ValueError(f"unsupported trace format {d.get('format')!r}")
        term = d.get("termination")
        return cls(
            question=Question.from_dict(d["question"]),
            sub_questions=[SubQuestion.from_dict(s) for s in d["sub_questions"]],
            chain=LogicalChain.from_dict(d["chain"]),
            final_answer=d["final_answer"],
            termination=TerminationEvent.from_dict(term) if term else None,
            used_fallback=d["used_fallback"],
            draft=d["draft"],
            provider_calls=ProviderCalls.from_dict(d["provider_calls"]),
            warnings=list(d["warnings"]),
            flags=dict(d["flags"]),
            config=d["config"],
        )


# --- chain validation -------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    edge: tuple[int, int] | None = None
    step: int | None = None


@dataclass(frozen=True)
class ChainVerdict:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def dependency_edges(subs) -> list[tuple[int, int]]:
    """All ``dep -> dependent`` edges declared by a collection of sub-questions."""
    return sorted((d, s.index) for s in subs for d in s.deps)


def find_cycle(nodes, edges) -> list[int] | None:
    """Return one cycle as a node sequence (first node repeated at the end), or None."""
    succ: dict[int, list[int]] = {n: [] for n in nodes}
    for u, v in edges:
        succ.setdefault(u, []).append(v)
        succ.setdefault(v, [])
    for n in succ:
        succ[n].sort()
    color = dict.fromkeys(succ, 0)
    for root in sorted(succ):
        if color[root]:
            continue
        path = [root]
        stack = [iter(succ[root])]
        color[root] = 1
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                color[path.pop()] = 2
                stack.pop()
            elif color[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == 0:
                color[nxt] = 1
                path.append(nxt)
                stack.append(iter(succ[nxt]))
    return None


def validate_chain(chain: LogicalChain) -> ChainVerdict:
    """Check every structural invariant of a logical chain.

    Never raises: each broken invariant becomes a :class:`Violation` in the
    returned verdict, which is truthy only when the list is empty.
    """
    out: list[Violation] = []
    indices = [s.index for s in chain.steps]
    position = {idx: pos for pos, idx in enumerate(indices)}

    if len(set(indices)) != len(indices):
        dupes = sorted({i for i in indices if indices.count(i) > 1})
        out.append(Violation("permutation", f"duplicate step indices {dupes}"))
    if set(indices) != set(range(1, len(indices) + 1)):
        out.append(Violation("permutation", f"step indices {sorted(set(indices))} are not 1..{len(indices)}"))

    edges = dependency_edges(s.sub_question for s in chain.steps)
    for u, v in edges:
        if u not in position:
            out.append(Violation("dangling", f"#{v} depends on missing #{u}", edge=(u, v)))
        elif position[u] >= position[v]:
            out.append(Violation("order", f"edge {u}->{v} points backward", edge=(u, v)))

    proof = set(chain.order_proof)
    for e in sorted(set(edges) - proof):
        out.append(Violation("proof", f"edge {e[0]}->{e[1]} missing from order proof", edge=e))
    for e in sorted(proof - set(edges)):
        out.append(Violation("proof", f"order proof lists non-edge {e[0]}->{e[1]}", edge=e))

    cycle = find_cycle(indices, [(u, v) for u, v in edges if u in position])
    if cycle is not None:
        out.append(Violation("cycle", "dependency cycle " + " -> ".join(map(str, cycle))))

    for s in chain.steps:
        if s.status is StepStatus.ANSWERED and not (s.answer and s.answer.strip()):
            out.append(Violation("status", f"step {s.index} answered without an answer", step=s.index))
        if s.status in (StepStatus.PENDING, StepStatus.SKIPPED) and s.answer is not None:
            out.append(Violation("status", f"step {s.index} is {s.status.value} but has an answer", step=s.index))

    return ChainVerdict(tuple(out))


@dataclass(frozen=True)
class AblationFlags:
    """Pipeline stages that can be switched off; all on is the full pipeline."""

    decompose: bool = True
    reorder: bool = True
    chain: bool = True
    terminator: bool = True

    def to_dict(self) -> dict[str, bool]:
        return {"decompose": self.decompose, "reorder": self.reorder, "chain": self.chain, "terminator": self.terminator}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AblationFlags:
        return cls(**{k: bool(v) for k, v in d.items()})

    @classmethod
    def all_off(cls) -> AblationFlags:
        return cls(False, False, False, False)


# cumulative ablation rows, retrieval-only first
ABLATION_ROWS: tuple[tuple[str, AblationFlags], ...] = (
    ("retrieval only", AblationFlags(False, False, False, False)),
    ("+ decompose", AblationFlags(True, False, False, False)),
    ("+ decompose + reorder", AblationFlags(True, True, False, False)),
    ("+ decompose + reorder + chain", AblationFlags(True, True, True, False)),
    ("+ decompose + reorder + chain + terminator", AblationFlags(True, True, True, True)),
)
