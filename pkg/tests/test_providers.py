from __future__ import annotations

import json

import httpx
import numpy as np
import pytest

from lag.errors import DimensionMismatchError, DuplicateFixtureError, TransportError, UnknownFixtureError
from lag.index import cosine
from lag.providers import (
    ChatCompletionProvider,
    CountingProviders,
    HashEmbedder,
    HTTPEmbeddingProvider,
    PromptSpec,
    ProviderConfig,
    Role,
    ScriptedLLM,
    scripted_provider,
)

from .conftest import bundle

SCANDERBEG = "What is the name of the famous bridge in the birth city of the composer of Scanderbeg?"
SCANDERBEG_SUBS = (
    "1. who is the composer of the Scanderbeg?\n2. what is the birth city of #?\n3. what is the name of the famous bridge in #?"
)


def spec(role=Role.DECOMPOSE, key=SCANDERBEG, text="prompt body"):
    return PromptSpec(role, text, key=key)


def test_prompt_spec_rejects_empty_text():
    with pytest.raises(ValueError):
        PromptSpec(Role.DRAFT, "  ")


def test_provider_config_invariants():
    with pytest.raises(ValueError):
        ProviderConfig(timeout=0)
    with pytest.raises(ValueError):
        ProviderConfig(max_retries=-1)
    assert ProviderConfig().model_name == "gpt-4o-mini"


def test_scripted_lookup_normalizes_key():
    llm = scripted_provider({(Role.DECOMPOSE, SCANDERBEG): SCANDERBEG_SUBS})
    assert llm.complete(spec(key="  " + SCANDERBEG.upper().replace(" ", "   "))) == SCANDERBEG_SUBS


def test_scripted_is_deterministic_and_counts():
    llm = scripted_provider({(Role.DECOMPOSE, SCANDERBEG): SCANDERBEG_SUBS})
    assert llm.complete(spec()) == llm.complete(spec())
    assert llm.calls["decompose"] == 2


def test_scripted_empty_table_strict_errors():
    with pytest.raises(UnknownFixtureError):
        scripted_provider({}).complete(spec())


def test_scripted_wildcard_then_echo():
    llm = scripted_provider({(Role.ESTIMATE_DEPTH, "*"): "1"}, mode="fallback_echo")
    assert llm.complete(spec(Role.ESTIMATE_DEPTH, key="anything")) == "1"
    assert llm.complete(spec(Role.DRAFT, key="other")).startswith("draft")


def test_scripted_duplicate_keys_rejected(tmp_path):
    with pytest.raises(DuplicateFixtureError):
        scripted_provider([((Role.DRAFT, "Q"), "a"), ((Role.DRAFT, " q "), "b")])
    path = tmp_path / "f.json"
    path.write_text('{"draft": {"q": "a", "q": "b"}}')
    with pytest.raises(DuplicateFixtureError):
        ScriptedLLM.from_file(path)


def test_scripted_fixtures_are_read_only():
    llm = scripted_provider({(Role.DRAFT, "q"): "a"})
    with pytest.raises(TypeError):
        llm.fixtures[(Role.DRAFT, "x")] = "b"


def test_label_chain_fixture_file_has_the_four_step_answers():
    llm = ScriptedLLM.from_file(bundle("label_chain") / "fixtures.json")
    answers = [v.splitlines()[0].removeprefix("ANSWER: ") for (r, _), v in llm.fixtures.items() if r is Role.ANSWER_STEP]
    assert answers == ["Sony Music", "Universal Music Group", "Santa Monica", "August 3, 1769"]


def test_hash_embedder_properties():
    emb = HashEmbedder()
    a = emb.embed("a")
    assert np.array_equal(a, emb.embed("a"))
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12
    text = "Sony Music is a record label"
    assert abs(cosine(emb.embed(text), emb.embed(text)) - 1.0) < 1e-6
    near = cosine(emb.embed("sony music"), emb.embed("sony music entertainment"))
    far = cosine(emb.embed("sony music"), emb.embed("spanish explorer"))
    assert near > far


def test_hash_embedder_seed_changes_vectors():
    assert not np.array_equal(HashEmbedder(seed=0).embed("bridge"), HashEmbedder(seed=1).embed("bridge"))


def test_hash_embedder_rejects_empty():
    with pytest.raises(ValueError):
        HashEmbedder().embed("   ")


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_chat_provider_retries_then_succeeds(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "secret")
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    cfg = ProviderConfig(endpoint_url="http://llm.test/v1/chat", api_key_env="TEST_KEY", max_retries=2)
    out = ChatCompletionProvider(cfg, _client(handler), backoff=0).complete(spec(Role.DRAFT))
    assert out == "hello"
    body = json.loads(seen[-1].content)
    assert body["model"] == "gpt-4o-mini" and body["temperature"] == 0.0
    assert seen[-1].headers["authorization"] == "Bearer secret"


def test_chat_provider_gives_up():
    def handler(request):
        raise httpx.ConnectError("down", request=request)

    cfg = ProviderConfig(endpoint_url="http://llm.test/v1/chat", max_retries=1)
    with pytest.raises(TransportError):
        ChatCompletionProvider(cfg, _client(handler), backoff=0).complete(spec(Role.DRAFT))


def test_chat_provider_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad")

    with pytest.raises(TransportError):
        ChatCompletionProvider(ProviderConfig(max_retries=3), _client(handler), backoff=0).complete(spec(Role.DRAFT))
    assert len(calls) == 1


def test_http_embedder_memoizes_and_checks_dimension():
    dims = iter([3, 4])
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(200, json={"data": [{"embedding": [0.5] * next(dims)}]})

    emb = HTTPEmbeddingProvider(ProviderConfig(endpoint_url="http://e.test"), _client(handler), backoff=0)
    v = emb.embed("one")
    assert emb.embed("one") is v and len(calls) == 1 and emb.dimension == 3
    with pytest.raises(DimensionMismatchError):
        emb.embed("two")


def test_counting_providers_tally():
    p = CountingProviders(scripted_provider({(Role.DRAFT, "*"): "x"}), HashEmbedder())
    p.complete(spec(Role.DRAFT))
    p.embed("text")
    p.embed("text")
    p.count_retrieval()
    assert p.snapshot().to_dict() == {"llm_calls": 1, "embed_calls": 2, "retrievals": 1}
