"""A small generated multi-hop world plus a rule-based reader LLM for it.

Each question chains two or three facts kept in separate documents:

* ``<person> was born in <city>.``               (person document)
* ``<city> lies within the borders of <country>.`` (city document)
* ``The head of state of <country> is <leader>.``  (country document)

Questions name only the person, so a retriever given the whole question
finds the person document (and two distractors about the same person) but
has no lexical route to the city or country documents. The bridging entity
only becomes searchable once the previous hop has been answered.

:class:`SyntheticReader` plays every prompt role. It answers strictly from
facts it can read in the prompt text, so its accuracy depends on what the
pipeline retrieved, not on hidden knowledge.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

import yaml

from .providers import PromptSpec

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "tr", "vl"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "ou"]
_CODAS = ["", "n", "r", "s", "l", "th", "nd", "rk"]


def _word(rng: random.Random, syllables: int) -> str:
    w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables)) + rng.choice(_CODAS)
    return w.capitalize()


@dataclass(frozen=True)
class SyntheticWorld:
    persons: dict[str, str]  # person -> city
    cities: dict[str, str]  # city -> country
    leaders: dict[str, str]  # country -> leader
    works: dict[str, str]  # person -> opera title (distractor content)


def make_world(n_persons: int = 20, n_countries: int = 8, seed: int = 7) -> SyntheticWorld:
    rng = random.Random(seed)
    used: set[str] = set()

    def fresh(syllables: int) -> str:
        while True:
            w = _word(rng, syllables)
            if w.lower() not in used:
                used.add(w.lower())
                return w

    countries = [fresh(3) for _ in range(n_countries)]
    leaders = {k: f"{fresh(2)} {fresh(2)}" for k in countries}
    persons: dict[str, str] = {}
    cities: dict[str, str] = {}
    works: dict[str, str] = {}
    for i in range(n_persons):
        person = f"{fresh(2)} {fresh(3)}"
        city = fresh(3)
        cities[city] = countries[i % n_countries]
        persons[person] = city
        works[person] = fresh(3)
    return SyntheticWorld(persons, cities, leaders, works)


def corpus_records(world: SyntheticWorld) -> list[dict]:
    docs = []
    for i, (person, city) in enumerate(world.persons.items()):
        opera = world.works[person]
        docs.append({"id": f"p{i:02d}", "title": person,
                     "text": f"{person} is a composer. {person} was born in {city} and studied music there."})
        docs.append({"id": f"p{i:02d}w", "title": f"{person} (works)",
                     "text": f"The composer {person} wrote five symphonies and the opera {opera}."})
        docs.append({"id": f"p{i:02d}r", "title": f"{person} (reception)",
                     "text": f"Critics praised the composer {person} for the opera {opera}, first staged in spring."})
    for j, (city, country) in enumerate(world.cities.items()):
        docs.append({"id": f"c{j:02d}", "title": city, "text": f"{city} lies within the borders of {country}."})
    for j, (country, leader) in enumerate(world.leaders.items()):
        docs.append({"id": f"k{j:02d}", "title": country, "text": f"The head of state of {country} is {leader}."})
    return docs


TWO_HOP = "In which country is the city where the composer {person} was born?"
THREE_HOP = "Who leads the country containing the city where the composer {person} was born?"


def dataset_records(world: SyntheticWorld) -> list[dict]:
    rows = []
    for i, (person, city) in enumerate(world.persons.items()):
        country = world.cities[city]
        if i % 2 == 0:
            q, gold, support = TWO_HOP.format(person=person), country, [person, city]
        else:
            q, gold, support = THREE_HOP.format(person=person), world.leaders[country], [person, city, country]
        rows.append({"id": f"syn{i:02d}", "question": q, "answer": gold, "gold_support_titles": support})
    return rows


SUITE_CONFIG = {
    "engine": {"delta": 0.3, "gamma": 0.9, "t_max": 5, "k": 5},
    "load": {"tau0": 1.0},
    "llm": {"type": "synthetic"},
    "embedder": {"type": "hash", "dimension": 256, "seed": 0},
    "eval": {"concurrency": 4},
}


def write_suite(outdir: str | Path, seed: int = 7) -> dict[str, Path]:
    """Write ``corpus.jsonl``, ``dataset.jsonl`` and ``config.yaml`` into ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    world = make_world(seed=seed)
    paths = {name: out / name for name in ("corpus.jsonl", "dataset.jsonl", "config.yaml")}
    paths["corpus.jsonl"].write_text("".join(json.dumps(d) + "\n" for d in corpus_records(world)), encoding="utf-8")
    paths["dataset.jsonl"].write_text("".join(json.dumps(r) + "\n" for r in dataset_records(world)), encoding="utf-8")
    paths["config.yaml"].write_text(yaml.safe_dump(SUITE_CONFIG, sort_keys=False), encoding="utf-8")
    return paths


# --- reader ------------------------------------------------------------------

_NAME = r"[A-Z][a-z]+(?: [A-Z][a-z]+)*"
_FACT_RES = {
    "born": re.compile(rf"({_NAME}) was born in ({_NAME})\b"),
    "in": re.compile(rf"({_NAME}) lies within the borders of ({_NAME})\b"),
    "leads": re.compile(rf"The head of state of ({_NAME}) is ({_NAME})\b"),
}
_FULL_RES = [
    (re.compile(r"^In which country is the city where the composer (.+) was born\?$"), 2),
    (re.compile(r"^Who leads the country containing the city where the composer (.+) was born\?$"), 3),
]
_STEP_LINE_RE = re.compile(r"^\s*\d+\.\s.*->\s*(.+?)\s*$", re.MULTILINE)


def relations(question: str) -> list[str]:
    """Fact hops the question asks for, in the order they must be applied."""
    q = question.lower()
    chain = []
    if "born" in q:
        chain.append("born")
    if "country" in q:
        chain.append("in")
    if "leads" in q:
        chain.append("leads")
    return chain


_PASSAGE_RE = re.compile(r"^\[\d+\] (.*?): (.*)$", re.MULTILINE)


def passage_bodies(text: str) -> list[str]:
    """Passage texts from a ``[i] title: title body`` listing, titles removed."""
    bodies = []
    for title, body in _PASSAGE_RE.findall(text):
        bodies.append(body[len(title):].lstrip() if body.startswith(title) else body)
    return bodies


def read_facts(text: str) -> dict[str, dict[str, str]]:
    facts: dict[str, dict[str, str]] = {rel: {} for rel in _FACT_RES}
    for body in passage_bodies(text):
        for rel, rx in _FACT_RES.items():
            facts[rel].update(rx.findall(body))
    return facts


def resolve(question: str, text: str) -> str | None:
    """Follow the question's hops through facts stated in ``text``."""
    chain = relations(question)
    if not chain:
        return None
    facts = read_facts(text)
    candidates = [s for s in facts[chain[0]] if s in question]
    if not candidates:
        return None
    value = max(candidates, key=len)
    for rel in chain:
        value = facts[rel].get(value)
        if value is None:
            return None
    return value


def _section(text: str, start: str, end: str | None = None) -> str:
    i = text.find(start)
    if i < 0:
        return ""
    body = text[i + len(start):]
    if end is not None and end in body:
        body = body[: body.find(end)]
    return body


class SyntheticReader:
    """Rule-based LLM double for the synthetic suite; thread-safe and stateless."""

    def complete(self, spec: PromptSpec) -> str:
        handler = getattr(self, f"_{spec.role_tag.value}", None)
        if handler is None:
            raise ValueError(f"synthetic reader has no behaviour for {spec.role_tag.value}")
        return handler(spec.key, spec.rendered_text)

    def _decompose(self, key: str, text: str) -> str:
        for rx, hops in _FULL_RES:
            m = rx.match(key.strip())
            if m:
                person = m.group(1)
                steps = [f"Where was the composer {person} born?", "In which country is #1 located?", "Who leads #2?"][:hops]
                if sum(map(ord, person)) % 2:
                    # emitted last-hop first; numbering follows emission order
                    n = len(steps)
                    steps = [re.sub(r"#(\d)", lambda m: f"#{n + 1 - int(m.group(1))}", s) for s in reversed(steps)]
                return "\n".join(f"{i}. {s}" for i, s in enumerate(steps, 1))
        return f"1. {key.strip()}"

    def _estimate_depth(self, key: str, text: str) -> str:
        return str(max(1, len(relations(key))))

    def _answer_step(self, key: str, text: str) -> str:
        found = resolve(key, _section(text, "Passages:", "\nQuestion:"))
        if found is None:
            return "ANSWER: unknown\nASSESSMENT: UNANSWERABLE\nCONSISTENCY: CONSISTENT"
        return f"ANSWER: {found}\nASSESSMENT: ANSWERABLE\nCONSISTENCY: CONSISTENT"

    def _draft(self, key: str, text: str) -> str:
        answers = _STEP_LINE_RE.findall(_section(text, "Solved steps:", "\nSupporting documents:"))
        final = answers[-1] if answers else "unknown"
        return f"Combining the solved steps gives the answer.\nFINAL: {final}"

    def _validate_draft(self, key: str, text: str) -> str:
        answers = _STEP_LINE_RE.findall(_section(text, "Solved steps:", "\nDraft:"))
        m = re.search(r"^FINAL:\s*(.+?)\s*$", _section(text, "\nDraft:"), re.MULTILINE)
        if answers and m and m.group(1) == answers[-1]:
            return "CONSISTENT"
        return "INCONSISTENT: the draft does not restate the last solved step"

    def _fallback(self, key: str, text: str) -> str:
        found = resolve(key, _section(text, "Retrieved passages:", "\nFinish"))
        return f"FINAL: {found or 'unknown'}"

    def _judge_equivalence(self, key: str, text: str) -> str:
        gold = _section(text, "Gold answer:", "\n").strip().casefold()
        pred = _section(text, "Prediction:", "\n").strip().casefold()
        return "YES" if gold and gold in pred else "NO"

    def _judge_answerable(self, key: str, text: str) -> str:
        return "ANSWERABLE" if resolve(key, text) else "UNANSWERABLE"


if __name__ == "__main__":
    import sys

    for p in write_suite(sys.argv[1] if len(sys.argv) > 1 else "synthetic-suite").values():
        print(p)
