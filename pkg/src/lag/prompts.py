"""Prompt template loading, rendering, and the parse-or-reprompt loop."""

from __future__ import annotations

import hashlib
import logging
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, TypeVar

from .errors import MalformedResponseError
from .providers import PromptSpec, Role

log = logging.getLogger(__name__)

T = TypeVar("T")

TEMPLATE_ROLES = (
    Role.DECOMPOSE,
    Role.ESTIMATE_DEPTH,
    Role.ANSWER_STEP,
    Role.DRAFT,
    Role.VALIDATE_DRAFT,
    Role.FALLBACK,
    Role.JUDGE_EQUIVALENCE,
)

COMMENT_PREFIX = "%%"


def _strip_comments(raw: str) -> str:
    return "".join(line for line in raw.splitlines(keepends=True) if not line.startswith(COMMENT_PREFIX))


class Templates:
    """The prompt templates for every pipeline role.

    Packaged defaults live in ``lag/templates``; ``overrides`` maps a role
    name to a file path that replaces the default.
    """

    def __init__(self, overrides: Mapping[str, str | Path] | None = None):
        self._raw: dict[Role, str] = {}
        overrides = dict(overrides or {})
        for role in TEMPLATE_ROLES:
            path = overrides.pop(role.value, None)
            if path is not None:
                raw = Path(path).read_text(encoding="utf-8")
            else:
                raw = resources.files("lag.templates").joinpath(f"{role.value}.txt").read_text(encoding="utf-8")
            self._raw[role] = raw
        if overrides:
            raise ValueError(f"unknown template roles: {sorted(overrides)}")
        self._body = {role: _strip_comments(raw) for role, raw in self._raw.items()}

    def render(self, role: Role, **fields: str) -> str:
        return self._body[Role(role)].format(**fields)

    def spec(self, role: Role, key: str, **fields: str) -> PromptSpec:
        return PromptSpec(Role(role), self.render(role, **fields), key=key)

    def hashes(self) -> dict[str, str]:
        return {r.value: hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16] for r, raw in self._raw.items()}


_default: Templates | None = None


def default_templates() -> Templates:
    global _default
    if _default is None:
        _default = Templates()
    return _default


def ask(llm, spec: PromptSpec, parse: Callable[[str], T]) -> T:
    """Complete ``spec`` and parse the reply, re-prompting once on a parse failure.

    ``parse`` raises :class:`MalformedResponseError` for replies it cannot
    read; the second failure propagates.
    """
    reply = llm.complete(spec)
    try:
        return parse(reply)
    except MalformedResponseError as exc:
        log.info("re-prompting %s after malformed reply: %s", spec.role_tag.value, exc)
        retry = PromptSpec(
            spec.role_tag,
            f"{spec.rendered_text}\n\nYour previous reply could not be used ({exc}). "
            "Reply again following the required format exactly.",
            key=spec.key,
            temperature=spec.temperature,
        )
        return parse(llm.complete(retry))
