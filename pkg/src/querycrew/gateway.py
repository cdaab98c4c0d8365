"""Chat-completion access: HTTP backend with bounded retry, a deterministic
mock backend for offline runs, structured-output parsing, and per-call
accounting.

The mock backend is a pure lookup: (scenario_key, template_id) maps to a
scripted response, either from an in-memory mapping or from a fixture
directory laid out as `<root>/<scenario_key>/<template_id>[.n].txt` with
optional per-template fallbacks in `<root>/defaults/<template_id>.txt`.
Identical keys always produce identical responses, which keeps end-to-end
runs reproducible byte for byte.
"""

from __future__ import annotations

import ast
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from . import templates
from .templates import (
    JSON_OBJECT,
    PYTHON_LIST,
    TAGGED_ANSWER_BLOCK,
    VERDICT_LINES,
    render_template,
)
from .textutils import estimate_tokens

logger = logging.getLogger(__name__)

_RETRY_SUFFIX = "\n\nRespond with valid JSON only."
_VERDICT_RE = re.compile(
    r"candidate\s+response\s*#?\s*(\d+)\s*:\s*(passed|failed)", re.IGNORECASE
)
_ANSWER_TAG_RE = re.compile(r"</?\s*Answer\s*>", re.IGNORECASE)
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


class GatewayError(Exception):
    """Transport-level or protocol-level completion failure."""


class ParseError(Exception):
    """Model output did not match the expected shape; carries the raw text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass
class SamplingParams:
    temperature: float = 0.0
    max_tokens: int = 2048
    n_samples: int = 1

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    backend_id: str


@dataclass
class CallRecord:
    template_id: str
    scenario_key: str
    backend_id: str
    n_samples: int
    prompt_tokens: int
    completion_tokens: int
    elapsed: float


class Backend(Protocol):
    backend_id: str

    def complete(
        self, prompt: str, params: SamplingParams, template_id: str, scenario_key: str
    ) -> list[Completion]: ...


class HttpChatBackend:
    """Client for a chat-completions-compatible HTTP endpoint.

    Transport failures are retried up to `max_retries` times with exponential
    backoff; a non-200 response fails immediately with a body excerpt. At
    most `max_in_flight` requests run concurrently against one backend.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        max_in_flight: int = 8,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.backend_id = f"http:{model}"
        self.session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def complete(
        self, prompt: str, params: SamplingParams, template_id: str, scenario_key: str
    ) -> list[Completion]:
        import os

        headers = {}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "n": params.n_samples,
        }
        last_exc: Exception | None = None
        for attempt in range(1 + self.max_retries):
            try:
                with self._gate:
                    resp = self.session.post(
                        f"{self.base_url}/chat/completions",
                        json=payload,
                        headers=headers,
                        timeout=self.timeout,
                    )
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_s * (2**attempt))
                continue
            if resp.status_code != 200:
                raise GatewayError(
                    f"backend returned {resp.status_code}: {resp.text[:200]}"
                )
            body = resp.json()
            usage = body.get("usage", {})
            choices = body.get("choices", [])
            if len(choices) != params.n_samples:
                raise GatewayError(
                    f"backend returned {len(choices)} choices, expected {params.n_samples}"
                )
            prompt_tokens = usage.get("prompt_tokens", estimate_tokens(prompt))
            total_completion = usage.get("completion_tokens")
            completions = []
            for choice in choices:
                text = choice["message"]["content"] or ""
                per_sample = (
                    total_completion // len(choices)
                    if total_completion is not None
                    else estimate_tokens(text)
                )
                completions.append(
                    Completion(text, prompt_tokens, per_sample, self.backend_id)
                )
            return completions
        raise GatewayError(
            f"backend unreachable after {self.max_retries} retries: {last_exc}"
        )


class MockLookupError(GatewayError):
    """No scripted response exists for (scenario_key, template_id)."""


class MockBackend:
    """Deterministic scripted backend for offline tests and benchmarks."""

    backend_id = "mock"

    def __init__(
        self,
        fixture_dir: str | Path | None = None,
        responses: Mapping[tuple[str, str], Sequence[str]] | None = None,
    ):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.responses = {k: list(v) for k, v in (responses or {}).items()}
        self.calls = 0

    def complete(
        self, prompt: str, params: SamplingParams, template_id: str, scenario_key: str
    ) -> list[Completion]:
        self.calls += 1
        variants = self._lookup(scenario_key, template_id)
        out = []
        for i in range(params.n_samples):
            text = variants[i] if i < len(variants) else variants[-1]
            out.append(
                Completion(
                    text=text,
                    prompt_tokens=estimate_tokens(prompt),
                    completion_tokens=estimate_tokens(text),
                    backend_id=self.backend_id,
                )
            )
        return out

    def _lookup(self, scenario_key: str, template_id: str) -> list[str]:
        key = (scenario_key, template_id)
        if key in self.responses:
            return self.responses[key]
        if self.fixture_dir is not None:
            scenario_dir = self.fixture_dir / sanitize_scenario_key(scenario_key)
            single = scenario_dir / f"{template_id}.txt"
            if single.is_file():
                return [single.read_text(encoding="utf-8")]
            variants = sorted(
                scenario_dir.glob(f"{template_id}.*.txt"),
                key=lambda p: int(p.suffixes[-2].lstrip(".")),
            )
            if variants:
                return [p.read_text(encoding="utf-8") for p in variants]
            fallback = self.fixture_dir / "defaults" / f"{template_id}.txt"
            if fallback.is_file():
                return [fallback.read_text(encoding="utf-8")]
        raise MockLookupError(
            f"no scripted response for scenario {scenario_key!r} / {template_id!r}"
        )


_SCENARIO_SAFE = re.compile(r"[^A-Za-z0-9._+#-]")


def sanitize_scenario_key(key: str) -> str:
    return _SCENARIO_SAFE.sub("_", key)


def complete(
    backend: Backend,
    prompt: str,
    params: SamplingParams,
    template_id: str = "",
    scenario_key: str = "",
) -> list[Completion]:
    """Request n_samples completions from a backend."""
    completions = backend.complete(prompt, params, template_id, scenario_key)
    if len(completions) != params.n_samples:
        raise GatewayError(
            f"backend produced {len(completions)} completions, expected {params.n_samples}"
        )
    return completions


def parse_structured(completion: Completion | str, expected_shape: str):
    """Parse a completion into the declared output shape.

    json_object -> dict, python_list -> list of str, tagged_answer_block ->
    list of str from the last <Answer> block, verdict_lines -> list of
    "Passed"/"Failed" strings. Raises ParseError carrying the raw text.
    """
    text = completion.text if isinstance(completion, Completion) else completion
    if expected_shape == JSON_OBJECT:
        return _parse_json_object(text)
    if expected_shape == PYTHON_LIST:
        return _parse_python_list(text)
    if expected_shape == TAGGED_ANSWER_BLOCK:
        return _parse_tagged_answer(text)
    if expected_shape == VERDICT_LINES:
        return _parse_verdicts(text)
    raise ValueError(f"unknown expected_shape {expected_shape!r}")


def _strip_fences(text: str) -> str:
    m = _FENCE_RE.search(text)
    return m.group(1) if m else text


def _balanced_block(text: str, open_ch: str, close_ch: str) -> str | None:
    """First balanced open..close block, string-literal aware."""
    start = text.find(open_ch)
    while start != -1:
        depth = 0
        in_string: str | None = None
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == in_string:
                    in_string = None
                continue
            if ch in "\"'":
                in_string = ch
            elif ch == open_ch:
                depth += 1
            elif ch == close_ch:
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find(open_ch, start + 1)
    return None


def _parse_json_object(text: str) -> dict:
    block = _balanced_block(_strip_fences(text), "{", "}")
    if block is not None:
        try:
            value = json.loads(block)
            if isinstance(value, dict):
                return value
        except json.JSONDecodeError:
            pass
    raise ParseError("no parseable JSON object in response", raw=text)


def _parse_python_list(text: str) -> list[str]:
    block = _balanced_block(_strip_fences(text), "[", "]")
    if block is not None:
        try:
            value = ast.literal_eval(block)
            if isinstance(value, (list, tuple)):
                return [str(item) for item in value]
        except (ValueError, SyntaxError):
            pass
    raise ParseError("no parseable Python list in response", raw=text)


def _parse_tagged_answer(text: str) -> list[str]:
    segments = _ANSWER_TAG_RE.split(text)
    if len(segments) < 2:
        raise ParseError("no <Answer> block in response", raw=text)
    # content between consecutive tags, last nonempty one wins
    for segment in reversed(segments[1:]):
        if segment.strip():
            return _parse_python_list(segment)
    raise ParseError("empty <Answer> block in response", raw=text)


def _parse_verdicts(text: str) -> list[str]:
    segments = _ANSWER_TAG_RE.split(text)
    scope = segments[-2] if len(segments) >= 3 and segments[-2].strip() else text
    matches = _VERDICT_RE.findall(scope)
    if not matches:
        matches = _VERDICT_RE.findall(text)
    if not matches:
        raise ParseError("no verdict lines in response", raw=text)
    return [verdict.capitalize() for _idx, verdict in matches]


@dataclass
class Gateway:
    """Routes tool calls to backends and records per-call accounting.

    `backends` maps a template_id to its backend; the "default" entry covers
    everything unbound. Every complete() invocation appends one CallRecord,
    which is what pipeline traces count as an LLM call. With `log_path` set,
    full request/response pairs are appended there as JSONL for replay.
    """

    backends: dict[str, Backend]
    calls: list[CallRecord] = field(default_factory=list)
    log_path: Path | None = None

    @classmethod
    def single(cls, backend: Backend, log_path: Path | None = None) -> "Gateway":
        return cls(backends={"default": backend}, log_path=log_path)

    def backend_for(self, template_id: str) -> Backend:
        backend = self.backends.get(template_id) or self.backends.get("default")
        if backend is None:
            raise GatewayError(f"no backend bound for {template_id!r}")
        return backend

    def complete_rendered(
        self,
        template_id: str,
        bindings: dict[str, object],
        params: SamplingParams,
        scenario_key: str,
    ) -> list[Completion]:
        prompt = render_template(template_id, bindings)
        return self.complete_prompt(template_id, prompt, params, scenario_key)

    def complete_prompt(
        self,
        template_id: str,
        prompt: str,
        params: SamplingParams,
        scenario_key: str,
    ) -> list[Completion]:
        backend = self.backend_for(template_id)
        start = time.perf_counter()
        completions = complete(backend, prompt, params, template_id, scenario_key)
        elapsed = time.perf_counter() - start
        self.calls.append(
            CallRecord(
                template_id=template_id,
                scenario_key=scenario_key,
                backend_id=getattr(backend, "backend_id", "?"),
                n_samples=params.n_samples,
                prompt_tokens=completions[0].prompt_tokens,
                completion_tokens=sum(c.completion_tokens for c in completions),
                elapsed=elapsed,
            )
        )
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {
                            "template_id": template_id,
                            "scenario_key": scenario_key,
                            "prompt": prompt,
                            "responses": [c.text for c in completions],
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        return completions

    def structured(
        self,
        template_id: str,
        bindings: dict[str, object],
        params: SamplingParams,
        scenario_key: str,
        retry_on_parse_failure: bool = True,
    ):
        """Render, complete, and parse one single-sample call.

        On a parse failure and when retries are allowed, the prompt is
        re-asked once with an appended instruction to emit valid output; the
        second failure propagates. The re-ask uses scenario key
        `<key>#retry1` so scripted runs can stage both responses.
        """
        template = templates.TEMPLATES[template_id]
        prompt = render_template(template_id, bindings)
        completion = self.complete_prompt(template_id, prompt, params, scenario_key)[0]
        try:
            return parse_structured(completion, template.expected_shape)
        except ParseError:
            if not retry_on_parse_failure:
                raise
        retry = self.complete_prompt(
            template_id, prompt + _RETRY_SUFFIX, params, f"{scenario_key}#retry1"
        )[0]
        return parse_structured(retry, template.expected_shape)
