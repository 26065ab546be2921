"""Cognitive-load estimation, the split gate, and recursive decomposition.

A question's load is the sum of three normalized signals: embedding spread
(semantic scope), an LLM hop-count estimate (reasoning steps), and a count of
unresolved referents (ambiguity). A question is split when its load exceeds
a threshold that shrinks geometrically with recursion depth.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from importlib import resources
from itertools import count
from pathlib import Path

import numpy as np

from .core import CognitiveLoadReport, Question, SubQuestion, placeholders
from .errors import DecompositionError, MalformedResponseError
from .prompts import Templates, ask, default_templates
from .providers import Role

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadConfig:
    tau0: float = 1.5
    decay_rate: float = 0.9
    max_recursion: int = 3
    scope_scale: float = 1.0
    depth_scale: float = 2.0
    ambiguity_scale: float = 1.0
    ambiguity_words: str | None = None  # path to a replacement word-list JSON

    def __post_init__(self):
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if not 0.0 < self.decay_rate < 1.0:
            raise ValueError("decay_rate must lie in (0, 1)")
        if self.max_recursion < 1:
            raise ValueError("max_recursion must be >= 1")
        if min(self.scope_scale, self.depth_scale, self.ambiguity_scale) <= 0:
            raise ValueError("scales must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def sigma(x: float) -> float:
    """Map [0, inf) monotonically onto [0, 1)."""
    return x / (1.0 + x)


def tau(t: int, cfg: LoadConfig) -> float:
    return cfg.tau0 * cfg.decay_rate**t


def _text(q: Question | str) -> str:
    return q.text if isinstance(q, Question) else q


# --- semantic scope ----------------------------------------------------------


def semantic_scope(q: Question | str, embedder, cfg: LoadConfig = LoadConfig()) -> float:
    vec = np.asarray(embedder.embed(_text(q)), dtype=np.float64)
    return sigma(float(np.var(vec)) / cfg.scope_scale)


# --- reasoning depth ---------------------------------------------------------

_INT_RE = re.compile(r"-?\d+")


def parse_depth(reply: str) -> int:
    m = _INT_RE.search(reply)
    if m is None:
        raise MalformedResponseError(f"no integer in depth estimate {reply[:40]!r}")
    return min(10, max(1, int(m.group())))


def reasoning_depth(
    q: Question | str,
    llm,
    cfg: LoadConfig = LoadConfig(),
    warnings: list[str] | None = None,
    templates: Templates | None = None,
) -> float:
    templates = templates or default_templates()
    text = _text(q)
    spec = templates.spec(Role.ESTIMATE_DEPTH, key=text, question=text)
    try:
        hops = ask(llm, spec, parse_depth)
    except MalformedResponseError as exc:
        hops = 1
        msg = f"estimate_depth: unusable reply for {text!r} ({exc}); depth defaulted to 1"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
    return sigma(hops / cfg.depth_scale)


# --- ambiguity ---------------------------------------------------------------


@dataclass(frozen=True)
class AmbiguityWords:
    pronouns: frozenset[str]
    demonstratives: frozenset[str]
    referent_nouns: frozenset[str]

    @classmethod
    def load(cls, path: str | Path | None = None) -> AmbiguityWords:
        if path is None:
            raw = resources.files("lag.templates").joinpath("ambiguity_words.json").read_text(encoding="utf-8")
        else:
            raw = Path(path).read_text(encoding="utf-8")
        doc = json.loads(raw)
        return cls(*(frozenset(w.lower() for w in doc[k]) for k in ("pronouns", "demonstratives", "referent_nouns")))


_WORDS_CACHE: dict[str | None, AmbiguityWords] = {}
_REF_TOKEN_RE = re.compile(r"#\d*|[^\W\d_]+|[.?!]")
_QUESTION_WORDS = frozenset("who whom whose what which when where why how".split())


def _words(cfg: LoadConfig) -> AmbiguityWords:
    if cfg.ambiguity_words not in _WORDS_CACHE:
        _WORDS_CACHE[cfg.ambiguity_words] = AmbiguityWords.load(cfg.ambiguity_words)
    return _WORDS_CACHE[cfg.ambiguity_words]


def count_referents(text: str, words: AmbiguityWords) -> int:
    """Number of ambiguous referents in ``text``.

    Counts third-person pronouns, demonstratives, placeholder tokens, and
    definite descriptions "the <noun>" (noun from the referent list) that no
    proper noun precedes.
    """
    tokens = _REF_TOKEN_RE.findall(text)
    r = 0
    seen_proper = False
    sentence_start = True
    for i, tok in enumerate(tokens):
        if tok in ".?!":
            sentence_start = True
            continue
        low = tok.lower()
        if tok.startswith("#"):
            r += 1
        elif low in words.pronouns or low in words.demonstratives:
            r += 1
        elif low == "the" and i + 1 < len(tokens) and tokens[i + 1].lower() in words.referent_nouns:
            if not seen_proper:
                r += 1
        elif tok[0].isupper() and not sentence_start and tok != "I" and low not in _QUESTION_WORDS:
            seen_proper = True
        sentence_start = False
    return r


def ambiguity(q: Question | str, cfg: LoadConfig = LoadConfig()) -> float:
    r = count_referents(_text(q), _words(cfg))
    return sigma(math.log1p(r) / cfg.ambiguity_scale)


# --- combined load and gate --------------------------------------------------


def cognitive_load(
    q: Question | str,
    embedder,
    llm,
    cfg: LoadConfig = LoadConfig(),
    warnings: list[str] | None = None,
    templates: Templates | None = None,
) -> CognitiveLoadReport:
    return CognitiveLoadReport.from_components(
        semantic_scope(q, embedder, cfg),
        reasoning_depth(q, llm, cfg, warnings, templates),
        ambiguity(q, cfg),
    )


def should_split(load: float, depth_t: int, cfg: LoadConfig) -> bool:
    return load > tau(depth_t, cfg)


def split_condition(
    q: Question | str,
    depth_t: int,
    cfg: LoadConfig,
    providers,
    warnings: list[str] | None = None,
    templates: Templates | None = None,
) -> bool:
    if depth_t < 0:
        raise ValueError("depth must be >= 0")
    report = cognitive_load(q, providers, providers, cfg, warnings, templates)
    return should_split(report.total, depth_t, cfg)


# --- decomposition -----------------------------------------------------------

_ITEM_RE = re.compile(r"^\s*(\d+)\s*[.)]\s*(.+?)\s*$")
_BARE_HASH_RE = re.compile(r"#(?!\d)")
_REF_RE = re.compile(r"([#@])(\d+)")


def parse_decomposition(reply: str, n_external: int = 0) -> list[str]:
    """Parse a numbered list of sub-questions.

    Bare ``#`` is read as the previous item. ``#n`` must name another item of
    this list and ``@n`` one of the ``n_external`` known answers.
    """
    items: list[str] = []
    for line in reply.splitlines():
        m = _ITEM_RE.match(line)
        if not m:
            continue
        number, text = int(m.group(1)), m.group(2)
        if number != len(items) + 1:
            raise MalformedResponseError(f"item numbered {number} where {len(items) + 1} was expected")
        if _BARE_HASH_RE.search(text):
            if number == 1:
                raise MalformedResponseError("first sub-question refers to a previous one")
            text = _BARE_HASH_RE.sub(f"#{number - 1}", text)
        items.append(text)
    if not items:
        raise MalformedResponseError("no numbered sub-questions found")
    for j, text in enumerate(items, start=1):
        for kind, n in _REF_RE.findall(text):
            n = int(n)
            if kind == "#" and not (1 <= n <= len(items) and n != j):
                raise MalformedResponseError(f"sub-question {j} references nonexistent #{n}")
            if kind == "@" and not 1 <= n <= n_external:
                raise MalformedResponseError(f"sub-question {j} references unknown @{n}")
    return items


_NODE_RE = re.compile(r"\{node:(\d+)\}")


@dataclass
class _Node:
    nid: int
    template: str  # references rendered as {node:<nid>}
    load: CognitiveLoadReport | None = None

    def refs(self) -> list[int]:
        return list(dict.fromkeys(int(n) for n in _NODE_RE.findall(self.template)))


def _render(template: str, numbering: dict[int, int], marker: str = "#") -> str:
    return _NODE_RE.sub(lambda m: f"{marker}{numbering[int(m.group(1))]}", template)


class _Decomposer:
    def __init__(self, providers, cfg: LoadConfig, warnings: list[str] | None, templates: Templates):
        self.providers = providers
        self.cfg = cfg
        self.warnings = warnings
        self.templates = templates
        self._ids = count(1)

    def load(self, text: str) -> CognitiveLoadReport:
        return cognitive_load(text, self.providers, self.providers, self.cfg, self.warnings, self.templates)

    def split(self, text: str, t: int, external: dict[int, int]) -> list[_Node] | None:
        """Ask for sub-questions of ``text`` (whose ``@k`` tokens name ``external``
        nodes); recurse into children still above the depth-``t + 1`` threshold.
        Returns None when the model treats ``text`` as already atomic."""
        spec = self.templates.spec(Role.DECOMPOSE, key=text, question=text)
        try:
            raw = ask(self.providers, spec, lambda r: parse_decomposition(r, len(external)))
        except MalformedResponseError as exc:
            raise DecompositionError(f"could not decompose {text!r}: {exc}") from exc
        if len(raw) <= 1:
            return None

        nids = [next(self._ids) for _ in raw]

        def to_template(child: str) -> str:
            def sub(m: re.Match) -> str:
                n = int(m.group(2))
                target = nids[n - 1] if m.group(1) == "#" else external[n]
                return f"{{node:{target}}}"

            return _REF_RE.sub(sub, child)

        children = [_Node(nid, to_template(c)) for nid, c in zip(nids, raw)]
        # placeholder numbers shown to the load estimator; ambiguity counts them, the numbers are cosmetic
        shown_numbering = {**{nid: k for k, nid in external.items()}, **{nid: i for i, nid in enumerate(nids, 1)}}
        out: list[_Node] = []
        replaced: dict[int, int] = {}
        for node in children:
            shown = _render(node.template, shown_numbering)
            node.load = self.load(shown)
            if t + 1 < self.cfg.max_recursion and should_split(node.load.total, t + 1, self.cfg):
                local = {k: nid for k, nid in enumerate(node.refs(), start=1)}
                llm_text = _render(node.template, {nid: k for k, nid in local.items()}, marker="@")
                pieces = self.split(llm_text, t + 1, local)
                if pieces:
                    out.extend(pieces)
                    replaced[node.nid] = pieces[-1].nid
                    continue
            out.append(node)
        if replaced:
            for node in out:
                node.template = _NODE_RE.sub(
                    lambda m: f"{{node:{replaced.get(int(m.group(1)), int(m.group(1)))}}}", node.template
                )
        return out


def decompose(
    q: Question | str,
    providers,
    cfg: LoadConfig = LoadConfig(),
    warnings: list[str] | None = None,
    templates: Templates | None = None,
) -> list[SubQuestion]:
    """Split ``q`` into dependency-linked atomic sub-questions.

    ``providers`` must offer both ``complete`` and ``embed``. Raises
    :class:`DecompositionError` when the model's decomposition cannot be
    parsed even after a re-prompt.
    """
    text = _text(q)
    dec = _Decomposer(providers, cfg, warnings, templates or default_templates())
    report = dec.load(text)
    nodes = dec.split(text, 0, {}) if should_split(report.total, 0, cfg) else None
    if not nodes:
        return [SubQuestion(1, text, frozenset(), report)]
    numbering = {node.nid: i for i, node in enumerate(nodes, start=1)}
    subs = []
    for i, node in enumerate(nodes, start=1):
        final = _render(node.template, numbering)
        subs.append(SubQuestion(i, final, frozenset(placeholders(final)), node.load))
    return subs
