"""Text-generation and embedding backends.

Two live HTTP providers speak the common hosted-model wire format (a JSON POST
with a model name and a message list / an input string). Two deterministic
doubles, :class:`ScriptedLLM` and :class:`HashEmbedder`, make the full pipeline
runnable offline. Anything with a ``complete(spec) -> str`` method is an LLM;
anything with ``embed(text) -> ndarray`` and ``dimension`` is an embedder.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Protocol

import httpx
import numpy as np

from .core import ProviderCalls
from .errors import (
    DimensionMismatchError,
    DuplicateFixtureError,
    MalformedResponseError,
    TransportError,
    UnknownFixtureError,
)

log = logging.getLogger(__name__)


class Role(str, Enum):
    DECOMPOSE = "decompose"
    ESTIMATE_DEPTH = "estimate_depth"
    ANSWER_STEP = "answer_step"
    JUDGE_ANSWERABLE = "judge_answerable"
    DRAFT = "draft"
    VALIDATE_DRAFT = "validate_draft"
    FALLBACK = "fallback"
    JUDGE_EQUIVALENCE = "judge_equivalence"


@dataclass(frozen=True)
class PromptSpec:
    """One rendered prompt.

    ``key`` is the subject of the prompt (the question or sub-question it is
    about). Live providers ignore it; scripted providers look responses up by
    ``(role_tag, key)``.
    """

    role_tag: Role
    rendered_text: str
    key: str = ""
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "role_tag", Role(self.role_tag))
        if not self.rendered_text.strip():
            raise ValueError("rendered_text is empty")


@dataclass(frozen=True)
class ProviderConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-4o-mini"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)


class LLM(Protocol):
    def complete(self, spec: PromptSpec) -> str: ...


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


_RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class _HTTPProvider:
    def __init__(self, config: ProviderConfig, client: httpx.Client | None = None, backoff: float = 0.5):
        self.config = config
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=config.timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self.config.api_key
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, body: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.config.endpoint_url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last = exc
                log.warning("transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code in _RETRY_STATUS:
                last = TransportError(f"HTTP {resp.status_code} from {self.config.endpoint_url}")
                log.warning("retryable status %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponseError(f"response is not JSON: {exc}") from exc
        raise TransportError(f"gave up after {self.config.max_retries + 1} attempts: {last}")


class ChatCompletionProvider(_HTTPProvider):
    """Live LLM over an HTTP chat-completion endpoint."""

    def complete(self, spec: PromptSpec) -> str:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": spec.rendered_text}],
            "temperature": spec.temperature,
        }
        data = self._post(body)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected chat-completion payload: {exc!r}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError("chat-completion content is not a string")
        return content


class HTTPEmbeddingProvider(_HTTPProvider):
    """Live embedder over an HTTP embeddings endpoint. Results are memoized per text."""

    def __init__(self, config: ProviderConfig, client: httpx.Client | None = None, backoff: float = 0.5):
        super().__init__(config, client, backoff)
        self.dimension: int | None = None
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        with self._lock:
            if text in self._cache:
                return self._cache[text]
        data = self._post({"model": self.config.model_name, "input": text})
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"unexpected embeddings payload: {exc!r}") from exc
        with self._lock:
            if self.dimension is None:
                self.dimension = vec.shape[0]
            elif vec.shape != (self.dimension,):
                raise DimensionMismatchError(f"embedding has shape {vec.shape}, expected ({self.dimension},)")
            vec.setflags(write=False)
            return self._cache.setdefault(text, vec)


DEFAULT_STOPWORDS = frozenset(
    """a an the of in on at to for from by with and or is are was were be been
    what which who whom whose when where why how did do does that this it its
    as into than then there""".split()
)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class HashEmbedder:
    """Deterministic bag-of-words embedder for offline runs.

    Each lowercased word token is hashed (keyed by ``seed``) to a bucket and a
    sign; counts are summed into a ``dimension``-long vector which is then
    L2-normalized. Similarity is therefore lexical overlap.
    """

    def __init__(self, dimension: int = 256, seed: int = 0, stopwords: Iterable[str] = DEFAULT_STOPWORDS):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension
        self.seed = seed
        self.stopwords = frozenset(stopwords)
        self._key = seed.to_bytes(8, "little", signed=True)

    def tokens(self, text: str) -> list[str]:
        toks = _TOKEN_RE.findall(text.lower())
        content = [t for t in toks if t not in self.stopwords]
        return content or toks or [text.strip()]

    def _slot(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(token.encode("utf-8"), key=self._key, digest_size=8).digest()
        n = int.from_bytes(h, "little")
        return (n >> 1) % self.dimension, (1.0 if n & 1 else -1.0)

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dimension)
        for tok in self.tokens(text):
            slot, sign = self._slot(tok)
            vec[slot] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # opposite-signed collisions cancelled out
            vec[self._slot(text)[0]] = 1.0
            norm = 1.0
        return vec / norm


def _norm_key(key: str) -> str:
    return " ".join(key.split()).casefold()


WILDCARD = "*"


class ScriptedLLM:
    """LLM double answering from a fixed ``(role_tag, key) -> response`` table.

    Lookup tries the exact key (whitespace-collapsed, case-folded) and then the
    role's ``"*"`` entry. In ``strict`` mode a miss raises
    :class:`UnknownFixtureError`; in ``fallback_echo`` mode it returns an echo
    of the prompt prefixed with the role tag. The table is read-only; calls
    per role are counted in :attr:`calls`.
    """

    MODES = ("strict", "fallback_echo")

    def __init__(self, fixtures: Mapping | Iterable, mode: str = "strict"):
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}")
        items = fixtures.items() if isinstance(fixtures, Mapping) else fixtures
        table: dict[tuple[Role, str], str] = {}
        for (role, key), response in items:
            k = (Role(role), _norm_key(key))
            if k in table:
                raise DuplicateFixtureError(f"duplicate fixture for {k[0].value}: {key!r}")
            table[k] = response
        self._table = MappingProxyType(table)
        self.mode = mode
        self._calls: Counter = Counter()
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, mode: str | None = None) -> ScriptedLLM:
        """Load a JSON map ``{role_tag: {key: response}}``; an optional top-level
        ``"mode"`` string sets the default mode."""

        def no_dupes(pairs):
            seen = {}
            for k, v in pairs:
                if k in seen:
                    raise DuplicateFixtureError(f"duplicate key {k!r} in {path}")
                seen[k] = v
            return seen

        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh, object_pairs_hook=no_dupes)
        file_mode = doc.pop("mode", "strict")
        pairs = [((role, key), resp) for role, table in doc.items() for key, resp in table.items()]
        return cls(pairs, mode=mode or file_mode)

    @property
    def fixtures(self) -> Mapping[tuple[Role, str], str]:
        return self._table

    @property
    def calls(self) -> Counter:
        with self._lock:
            return Counter(self._calls)

    def complete(self, spec: PromptSpec) -> str:
        with self._lock:
            self._calls[spec.role_tag.value] += 1
        key = _norm_key(spec.key)
        for k in ((spec.role_tag, key), (spec.role_tag, WILDCARD)):
            if k in self._table:
                return self._table[k]
        if self.mode == "strict":
            raise UnknownFixtureError(f"no fixture for {spec.role_tag.value}: {spec.key!r}")
        return f"{spec.role_tag.value}: {spec.rendered_text}"


def scripted_provider(fixtures, mode: str = "strict") -> ScriptedLLM:
    return ScriptedLLM(fixtures, mode)


class CountingProviders:
    """Per-query view of a shared LLM and embedder that tallies calls."""

    def __init__(self, llm: LLM, embedder: Embedder):
        self.llm = llm
        self.embedder = embedder
        self.calls = ProviderCalls()
        self._lock = threading.Lock()

    def complete(self, spec: PromptSpec) -> str:
        with self._lock:
            self.calls.llm_calls += 1
        return self.llm.complete(spec)

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            self.calls.embed_calls += 1
        return self.embedder.embed(text)

    def count_retrieval(self) -> None:
        with self._lock:
            self.calls.retrievals += 1

    def snapshot(self) -> ProviderCalls:
        with self._lock:
            return ProviderCalls(**self.calls.to_dict())
