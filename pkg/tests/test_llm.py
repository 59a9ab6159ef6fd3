import json

import httpx
import pytest

from kgfit import llm
from kgfit.llm import (CacheMissError, ChatClient, ClientError, LiveBackend, MockBackend,
                       ReplayBackend, ReplayCache, SchemaError, prompt_key)
from kgfit.refine import describe_entity


def test_echo_description():
    client = ChatClient(MockBackend("echo"))
    assert describe_entity("Paris", client) == "Paris is a [mock description of Paris]"


def test_replay_hit_is_bit_identical(tmp_path):
    prompt = llm.describe_prompt("Paris")
    cache = ReplayCache(tmp_path / "c.jsonl")
    cache.put(prompt, "Paris is a city.é")
    client = ChatClient.from_spec(f"replay:{tmp_path / 'c.jsonl'}")
    assert describe_entity("Paris", client) == "Paris is a city.é"


def test_replay_miss(tmp_path):
    client = ChatClient(ReplayBackend(tmp_path / "none.jsonl"))
    with pytest.raises(CacheMissError):
        describe_entity("Paris", client)


def test_cache_record_layout(tmp_path):
    cache = ReplayCache(tmp_path / "c.jsonl")
    cache.put("p", "r")
    cache.put("p", "other")
    recs = [json.loads(l) for l in (tmp_path / "c.jsonl").read_text().splitlines()]
    assert recs == [{"key": prompt_key("p"), "prompt": "p", "response": "r"}]
    assert ReplayCache(tmp_path / "c.jsonl").get("p") == "r"


def test_schema_retry_appends_rejection():
    seen = []

    def backend(prompt):
        seen.append(prompt)
        return "garbage" if len(seen) == 1 else "Name: fixed"

    client = ChatClient(backend, schema_retries=2)
    from kgfit.refine import parse_name
    assert client.ask("### TASK: NAME\n", parse_name) == "fixed"
    assert "PREVIOUS ANSWER REJECTED" in seen[1]


def test_schema_retries_exhausted():
    client = ChatClient(lambda p: "nope", schema_retries=1)
    from kgfit.refine import parse_name
    with pytest.raises(SchemaError):
        client.ask("x", parse_name)


def test_unknown_policy_and_backend():
    with pytest.raises(ValueError):
        MockBackend("nonexistent")
    with pytest.raises(ValueError):
        ChatClient.from_spec("carrier-pigeon")
    with pytest.raises(ValueError):
        ChatClient.from_spec("live")


def test_map_preserves_order():
    client = ChatClient(lambda p: p.upper(), max_in_flight=8)
    items = [f"x{i}" for i in range(50)]
    assert client.map(client.complete, items) == [x.upper() for x in items]


def _live(tmp_path, handler, **kw):
    return LiveBackend("http://llm.invalid/v1/chat", "m", cache_path=tmp_path / "c.jsonl",
                       transport=httpx.MockTransport(handler), backoff_cap=0.0, **kw)


def test_live_backend_records_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "tok")
    calls = []

    def handler(request):
        body = json.loads(request.content)
        calls.append((body, request.headers.get("authorization")))
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    backend = _live(tmp_path, handler)
    assert backend("prompt") == "hello"
    assert backend("prompt") == "hello"
    assert len(calls) == 1
    assert calls[0][0]["temperature"] == 0 and calls[0][1] == "Bearer tok"
    assert ReplayBackend(tmp_path / "c.jsonl")("prompt") == "hello"


def test_live_backend_retries_then_fails(tmp_path):
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(503)

    with pytest.raises(ClientError):
        _live(tmp_path, handler, max_retries=2)("p")
    assert len(attempts) == 3


def test_prompt_sections_parse():
    p = llm.refine_prompt({"name": "A", "entities": ["x", "y"], "subclusters": ["s1", "s2"]},
                          {"name": None, "entities": ["z"], "subclusters": []})
    a, b = llm.parse_refine_clusters(p)
    assert a == {"name": "A", "size": 2, "subclusters": ["s1", "s2"], "entities": ["x", "y"]}
    assert b["name"] == "unnamed" and b["subclusters"] == [] and b["entities"] == ["z"]
