"""Chat client abstraction with live, replay and deterministic mock backends,
plus the prompt templates used for descriptions and hierarchy refinement.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable, Iterable

log = logging.getLogger(__name__)

MAX_LISTED = 200


class ClientError(RuntimeError):
    pass


class CacheMissError(ClientError):
    pass


class SchemaError(ValueError):
    """A response that does not follow the requested output format."""


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------- prompts

def _template(name: str) -> Template:
    text = resources.files("kgfit").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    return Template(text)


def _bullets(items: Iterable[str], limit: int | None = None) -> str:
    items = list(items)
    shown = items if limit is None else items[:limit]
    lines = [f"- {x}" for x in shown]
    if len(shown) < len(items):
        lines.append(f"- ... ({len(items) - len(shown)} more)")
    return "\n".join(lines)


def describe_prompt(entity: str, hint: str | None = None) -> str:
    hint_text = f"Reference description (rephrase it into the required form): {hint}\n" if hint else ""
    return _template("describe").substitute(entity=entity, hint=hint_text)


def name_prompt(entities: list[str]) -> str:
    return _template("name").substitute(entities=_bullets(entities, MAX_LISTED))


def split_prompt(name: str | None, entities: list[str]) -> str:
    return _template("split").substitute(name=name or "unnamed", entities=_bullets(entities))


def refine_prompt(a: dict, b: dict) -> str:
    """``a``/``b`` carry ``name``, ``entities`` and ``subclusters``."""
    fields = {}
    for tag, c in (("a", a), ("b", b)):
        fields[f"name_{tag}"] = c.get("name") or "unnamed"
        fields[f"size_{tag}"] = len(c["entities"])
        subs = c.get("subclusters") or []
        fields[f"subs_{tag}"] = "; ".join(s or "unnamed" for s in subs) if subs else "(none)"
        fields[f"entities_{tag}"] = _bullets(c["entities"], MAX_LISTED)
    return _template("refine").substitute(fields)


def with_rejection(prompt: str, reason: str) -> str:
    return (f"{prompt}\n### PREVIOUS ANSWER REJECTED\n{reason}\n"
            "Answer again, following the output format exactly.\n")


def prompt_task(prompt: str) -> str:
    m = re.match(r"### TASK: (\w+)", prompt)
    if not m:
        raise SchemaError("prompt has no task header")
    return m.group(1)


def prompt_sections(prompt: str) -> dict[str, str]:
    out = {}
    for block in re.split(r"^### ", prompt, flags=re.M)[1:]:
        head, _, body = block.partition("\n")
        out[head.strip()] = body
    return out


def bullet_items(body: str) -> list[str]:
    return [line[2:].strip() for line in body.splitlines() if line.startswith("- ")]


# --------------------------------------------------------------------------- backends

class ReplayCache:
    """Append-only JSONL of ``{"key", "prompt", "response"}`` records."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["key"]] = rec["response"]

    def get(self, prompt: str):
        return self._entries.get(prompt_key(prompt))

    def put(self, prompt: str, response: str) -> None:
        key = prompt_key(prompt)
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = response
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "prompt": prompt, "response": response},
                                    ensure_ascii=False) + "\n")

    def __len__(self):
        return len(self._entries)


class MockBackend:
    def __init__(self, policy: str | Callable[[str], str] = "echo"):
        if isinstance(policy, str):
            if policy not in MOCK_POLICIES:
                raise ValueError(f"unknown mock policy {policy!r}; choose from {sorted(MOCK_POLICIES)}")
            self.name = policy
            policy = MOCK_POLICIES[policy]
        else:
            self.name = getattr(policy, "__name__", "custom")
        self.policy = policy

    def __call__(self, prompt: str) -> str:
        return self.policy(prompt)


class ReplayBackend:
    def __init__(self, path):
        self.cache = ReplayCache(path)

    def __call__(self, prompt: str) -> str:
        hit = self.cache.get(prompt)
        if hit is None:
            raise CacheMissError(f"no cached response for prompt {prompt_key(prompt)[:12]}")
        return hit


class LiveBackend:
    """Chat-completions style JSON over HTTP; every exchange goes to the cache."""

    def __init__(self, endpoint: str, model: str, token_env: str = "OPENAI_API_KEY",
                 cache_path=None, timeout: float = 60.0, max_retries: int = 4,
                 backoff_cap: float = 30.0, transport=None):
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_cap = backoff_cap
        self.cache = ReplayCache(cache_path) if cache_path else None
        self._transport = transport

    def _post(self, payload: dict) -> dict:
        import httpx

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
            resp = client.post(self.endpoint, json=payload, headers=headers)
            resp.raise_for_status()
            return resp.json()

    def __call__(self, prompt: str) -> str:
        if self.cache is not None:
            hit = self.cache.get(prompt)
            if hit is not None:
                return hit
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        last = None
        for attempt in range(self.max_retries + 1):
            try:
                data = self._post(payload)
                text = data["choices"][0]["message"]["content"]
                break
            except Exception as exc:  # noqa: BLE001 - network errors vary by transport
                last = exc
                if attempt == self.max_retries:
                    raise ClientError(f"request failed after {attempt + 1} attempts: {exc}") from exc
                delay = min(self.backoff_cap, 2.0 ** attempt)
                log.warning("LLM request failed (%s); retrying in %.1fs", exc, delay)
                time.sleep(delay)
        else:  # pragma: no cover
            raise ClientError(str(last))
        if self.cache is not None:
            self.cache.put(prompt, text)
        return text


class ChatClient:
    """Front end over one backend with bounded concurrency for batch calls."""

    def __init__(self, backend: Callable[[str], str], max_in_flight: int = 4, schema_retries: int = 2):
        self.backend = backend
        self.max_in_flight = max(1, int(max_in_flight))
        self.schema_retries = schema_retries

    def complete(self, prompt: str) -> str:
        return self.backend(prompt)

    def map(self, fn, items):
        items = list(items)
        if self.max_in_flight == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(fn, items))

    def ask(self, prompt: str, parse: Callable[[str], object]):
        """Send ``prompt`` and parse; on schema violations retry with feedback."""
        current = prompt
        for attempt in range(self.schema_retries + 1):
            text = self.complete(current)
            try:
                return parse(text)
            except SchemaError as exc:
                if attempt == self.schema_retries:
                    raise
                current = with_rejection(prompt, str(exc))

    @classmethod
    def from_spec(cls, spec: str, *, endpoint: str | None = None, model: str | None = None,
                  token_env: str = "OPENAI_API_KEY", cache_path=None, timeout: float = 60.0,
                  max_retries: int = 4, max_in_flight: int = 4) -> "ChatClient":
        """Build from ``live``, ``replay:<path>`` or ``mock:<policy>``."""
        kind, _, arg = spec.partition(":")
        if kind == "mock":
            backend = MockBackend(arg or "echo")
        elif kind == "replay":
            if not arg:
                raise ValueError("replay backend needs a cache path: replay:<path>")
            backend = ReplayBackend(arg)
        elif kind == "live":
            if not endpoint or not model:
                raise ValueError("live backend needs an endpoint URL and model name")
            backend = LiveBackend(endpoint, model, token_env, cache_path, timeout, max_retries)
        else:
            raise ValueError(f"unknown backend {spec!r}")
        return cls(backend, max_in_flight=max_in_flight)


# --------------------------------------------------------------------------- mock policies

def _mock_default(prompt: str, split=None, refine=None) -> str:
    task = prompt_task(prompt)
    sections = prompt_sections(prompt)
    if task == "DESCRIBE":
        entity = sections["ENTITY"].strip()
        return f"{entity} is a [mock description of {entity}]"
    if task == "NAME":
        ents = sorted(bullet_items(sections["ENTITIES"]))
        return f"Name: group of {ents[0]}" if ents else "Name: empty group"
    if task == "SPLIT":
        ents = bullet_items(sections["ENTITIES"])
        groups = split(ents) if split else [ents]
        name = re.search(r'currently called "(.*)"', prompt).group(1)
        if len(groups) == 1:
            return format_split([(name, groups[0])])
        return format_split([(f"{name} / part {i + 1}", g) for i, g in enumerate(groups)])
    if task == "REFINE":
        a, b = parse_refine_clusters(prompt)
        action = refine(a, b) if refine else "NO UPDATE"
        return f"Action: {action}\nName: {a['name']} + {b['name']}"
    raise SchemaError(f"unknown task {task}")


def format_split(groups) -> str:
    lines = []
    for name, ents in groups:
        lines.append(f"## {name}")
        lines.extend(f"- {e}" for e in ents)
    return "\n".join(lines)


def parse_refine_clusters(prompt: str):
    sections = prompt_sections(prompt)
    out = []
    for tag in ("CLUSTER A", "CLUSTER B"):
        body = sections[tag]
        fields = dict(re.findall(r"^(Name|Size|Subclusters): (.*)$", body, flags=re.M))
        subs = fields.get("Subclusters", "(none)")
        out.append({
            "name": fields.get("Name", ""),
            "size": int(fields.get("Size", 0)),
            "subclusters": [] if subs == "(none)" else subs.split("; "),
            "entities": bullet_items(body),
        })
    return out


def _halve(ents):
    ents = sorted(ents)
    if len(ents) < 2:
        return [ents]
    mid = (len(ents) + 1) // 2
    return [ents[:mid], ents[mid:]]


def _hashed(prompt: str, salt: str) -> int:
    return int(hashlib.sha256((salt + prompt).encode("utf-8")).hexdigest()[:8], 16)


_ACTIONS = ("NO UPDATE", "PARENT MERGE", "LEAF MERGE", "A INCLUDES B", "B INCLUDES A")


def _random_policy(prompt: str) -> str:
    """Prompt-hash driven choices: reproducible but varied splits and actions."""
    def split(ents):
        k = 1 + _hashed(prompt, "k") % min(3, len(ents))
        order = sorted(ents, key=lambda e: _hashed(e, prompt))
        return [order[i::k] for i in range(k)]
    return _mock_default(prompt, split=split, refine=lambda a, b: _ACTIONS[_hashed(prompt, "a") % 5])


def _merge_biased(a, b):
    return "LEAF MERGE" if a["size"] + b["size"] <= 6 else "NO UPDATE"


MOCK_POLICIES: dict[str, Callable[[str], str]] = {
    "echo": lambda p: _mock_default(p),
    "never-split": lambda p: _mock_default(p),
    "always-noupdate": lambda p: _mock_default(p),
    "halve-lexicographic": lambda p: _mock_default(p, split=_halve),
    "merge-biased": lambda p: _mock_default(p, refine=_merge_biased),
    "always-leafmerge": lambda p: _mock_default(p, refine=lambda a, b: "LEAF MERGE"),
    "always-parentmerge": lambda p: _mock_default(p, refine=lambda a, b: "PARENT MERGE"),
    "parentmerge-internal": lambda p: _mock_default(
        p, refine=lambda a, b: "PARENT MERGE" if a["subclusters"] and b["subclusters"] else "NO UPDATE"),
    "always-a-includes-b": lambda p: _mock_default(p, refine=lambda a, b: "A INCLUDES B"),
    "always-b-includes-a": lambda p: _mock_default(p, refine=lambda a, b: "B INCLUDES A"),
    "random": _random_policy,
}
