from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lag.core import Question
from lag.decompose import (
    LoadConfig,
    ambiguity,
    cognitive_load,
    count_referents,
    decompose,
    parse_decomposition,
    reasoning_depth,
    semantic_scope,
    should_split,
    sigma,
    split_condition,
    tau,
    AmbiguityWords,
)
from lag.errors import DecompositionError, MalformedResponseError
from lag.providers import CountingProviders, HashEmbedder, Role, ScriptedLLM, scripted_provider

from .conftest import FixedEmbedder, bundle

SCANDERBEG = "What is the name of the famous bridge in the birth city of the composer of Scanderbeg?"


def providers(fixtures, embedder=None):
    return CountingProviders(scripted_provider(fixtures), embedder or HashEmbedder())


def test_sigma_and_tau():
    assert sigma(0.0) == 0.0 and sigma(1.0) == 0.5
    cfg = LoadConfig()
    assert tau(0, cfg) == 1.5 and abs(tau(1, cfg) - 1.35) < 1e-12
    assert all(tau(t + 1, cfg) < tau(t, cfg) for t in range(20))


def test_load_config_validation():
    for bad in ({"tau0": 0}, {"decay_rate": 1.0}, {"max_recursion": 0}, {"depth_scale": 0}):
        with pytest.raises(ValueError):
            LoadConfig(**bad)


def test_semantic_scope_examples():
    assert semantic_scope("q", FixedEmbedder(default=[0.5, 0.5, 0.5, 0.5])) == 0.0
    assert semantic_scope("q", FixedEmbedder(default=[1.0, -1.0], dimension=2)) == 0.5
    assert semantic_scope("anything at all", HashEmbedder()) < 1.0


def test_reasoning_depth_examples():
    llm = scripted_provider({(Role.ESTIMATE_DEPTH, "Who wrote Hamlet?"): "1", (Role.ESTIMATE_DEPTH, "big"): "4"})
    assert abs(reasoning_depth("Who wrote Hamlet?", llm) - 1 / 3) < 1e-12
    assert abs(reasoning_depth("big", llm) - 2 / 3) < 1e-12


def test_reasoning_depth_clamps():
    llm = scripted_provider({(Role.ESTIMATE_DEPTH, "a"): "about 40 steps", (Role.ESTIMATE_DEPTH, "b"): "0"})
    assert reasoning_depth("a", llm) == sigma(10 / 2)
    assert reasoning_depth("b", llm) == sigma(1 / 2)


def test_reasoning_depth_garbage_defaults_with_warning():
    llm = scripted_provider({(Role.ESTIMATE_DEPTH, "*"): "weasel"})
    warnings: list[str] = []
    assert abs(reasoning_depth("q", llm, warnings=warnings) - 1 / 3) < 1e-12
    assert llm.calls["estimate_depth"] == 2
    assert len(warnings) == 1 and "defaulted to 1" in warnings[0]


def test_ambiguity_examples():
    assert ambiguity("Who is Barack Obama?") == 0.0
    assert abs(ambiguity("What is the birth city of #1?") - sigma(math.log(2))) < 1e-12
    assert abs(ambiguity("Is it true that it rained?") - sigma(math.log(4))) < 1e-12


def test_count_referents_definite_descriptions():
    words = AmbiguityWords.load()
    assert count_referents("When did the explorer reach the city?", words) == 2
    # a proper noun earlier in the question anchors later descriptions
    assert count_referents("Where did Mozart meet the composer?", words) == 0
    assert count_referents("What did THE Composer write?", words) == 1


def test_custom_word_list(tmp_path):
    path = tmp_path / "w.json"
    path.write_text('{"pronouns": ["zed"], "demonstratives": [], "referent_nouns": []}')
    cfg = LoadConfig(ambiguity_words=str(path))
    assert ambiguity("zed and it", cfg) == sigma(math.log(2))


def test_cognitive_load_is_exact_sum():
    p = providers({(Role.ESTIMATE_DEPTH, "*"): "1"})
    for q in ("Who wrote Hamlet?", SCANDERBEG, "What is the birth city of #1?"):
        r = cognitive_load(q, p, p)
        assert r.total == r.semantic_scope + r.reasoning_steps + r.ambiguity
        assert 0.0 <= r.total < 3.0
    r = cognitive_load("q", FixedEmbedder(default=[0.5] * 4), scripted_provider({(Role.ESTIMATE_DEPTH, "*"): "1"}))
    assert r.total == 1 / 3


def test_split_gate_boundaries():
    cfg = LoadConfig()
    assert should_split(1.5, 0, cfg) is False
    assert should_split(1.6, 0, cfg) is True
    assert should_split(1.4, 1, cfg) is True
    with pytest.raises(ValueError):
        split_condition("q", -1, cfg, providers({}))


def test_split_condition_uses_load():
    p = providers({(Role.ESTIMATE_DEPTH, "*"): "10"})
    assert split_condition("Did it happen?", 0, LoadConfig(tau0=1.0), p)
    assert not split_condition("Who wrote Hamlet?", 0, LoadConfig(), providers({(Role.ESTIMATE_DEPTH, "*"): "1"}))


def test_parse_decomposition_bare_hash_and_errors():
    assert parse_decomposition("1. a?\n2. b of #?\n3) c of # and #1?") == ["a?", "b of #1?", "c of #2 and #1?"]
    for bad in ("no list here", "1. a\n3. b", "1. a #2", "1. a of #", "1. a\n2. b #1 @1"):
        with pytest.raises(MalformedResponseError):
            parse_decomposition(bad)
    assert parse_decomposition("1. x of @1", n_external=1) == ["x of @1"]


def test_decompose_scanderbeg():
    p = providers({
        (Role.ESTIMATE_DEPTH, SCANDERBEG): "3",
        (Role.ESTIMATE_DEPTH, "*"): "1",
        (Role.DECOMPOSE, SCANDERBEG): "1. who is the composer of the Scanderbeg?\n"
                                      "2. what is the birth city of #?\n"
                                      "3. what is the name of the famous bridge in #?",
    })
    subs = decompose(Question.from_text(SCANDERBEG), p, LoadConfig(tau0=1.0))
    assert [s.text for s in subs] == [
        "who is the composer of the Scanderbeg?",
        "what is the birth city of #1?",
        "what is the name of the famous bridge in #2?",
    ]
    assert [sorted(s.deps) for s in subs] == [[], [1], [2]]
    assert all(s.load is not None for s in subs)


def test_decompose_atomic_question_untouched():
    p = providers({(Role.ESTIMATE_DEPTH, "*"): "1"})
    subs = decompose("Who wrote Hamlet?", p)
    assert len(subs) == 1 and subs[0].text == "Who wrote Hamlet?" and not subs[0].deps
    assert p.snapshot().llm_calls == 1


def test_decompose_label_chain_chain(label_chain_question):
    llm = ScriptedLLM.from_file(bundle("label_chain") / "fixtures.json")
    subs = decompose(label_chain_question, CountingProviders(llm, HashEmbedder()), LoadConfig(tau0=1.0))
    assert {s.index: set(s.deps) for s in subs} == {1: set(), 2: {1}, 3: {2}, 4: {3}}


def test_decompose_recurses_and_renumbers():
    q = "Big question about it?"
    p = providers({
        (Role.ESTIMATE_DEPTH, q): "10",
        (Role.ESTIMATE_DEPTH, "B about #1?"): "10",
        (Role.ESTIMATE_DEPTH, "*"): "1",
        (Role.DECOMPOSE, q): "1. A?\n2. B about #1?\n3. C with #2?",
        (Role.DECOMPOSE, "B about @1?"): "1. B1 about @1?\n2. B2 about #1?",
    })
    subs = decompose(q, p, LoadConfig(tau0=1.0, max_recursion=2))
    assert [s.text for s in subs] == ["A?", "B1 about #1?", "B2 about #2?", "C with #3?"]


def test_decompose_single_item_reply_is_atomic():
    q = "Did it happen there?"
    p = providers({(Role.ESTIMATE_DEPTH, "*"): "10", (Role.DECOMPOSE, q): "1. Did it happen there?"})
    subs = decompose(q, p, LoadConfig(tau0=1.0))
    assert [s.text for s in subs] == [q]


def test_decompose_unparseable_raises():
    q = "Did it happen there?"
    p = providers({(Role.ESTIMATE_DEPTH, "*"): "10", (Role.DECOMPOSE, q): "I refuse."})
    with pytest.raises(DecompositionError):
        decompose(q, p, LoadConfig(tau0=1.0))
    assert p.llm.calls["decompose"] == 2


@given(st.lists(st.sets(st.integers(1, 8), max_size=3), min_size=2, max_size=8))
def test_flat_decomposition_preserves_references(raw_refs):
    # item j may only refer to earlier items
    refs = [sorted(r for r in rs if r < j) for j, rs in enumerate(raw_refs, start=1)]
    lines = [f"{j}. part {j} " + " ".join(f"#{r}" for r in rs) for j, rs in enumerate(refs, start=1)]
    q = "Does it compose?"
    p = providers({
        (Role.ESTIMATE_DEPTH, q): "10",
        (Role.ESTIMATE_DEPTH, "*"): "1",
        (Role.DECOMPOSE, q): "\n".join(lines),
    })
    subs = decompose(q, p, LoadConfig(tau0=1.0, max_recursion=1))
    assert [sorted(s.deps) for s in subs] == refs
