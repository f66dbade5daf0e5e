"""Provider contract for chat completions, plus code extraction and pricing.

Three provider implementations share one `complete()` contract: a live HTTP
client speaking the de-facto chat-completion schema, a scripted provider that
replays fixture responses in order, and a seeded stochastic provider whose
pass/fail sequence is a pure function of (seed, call index).
"""

from __future__ import annotations

import enum
import json
import random
import re
import textwrap
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import requests

from .errors import (
    FixtureExhausted,
    NegativeTokens,
    NoCode,
    ProviderUnreachable,
    RateLimited,
)


@dataclass(frozen=True)
class LLMRequest:
    """One chat-completion request: (role, content) messages plus model knobs."""

    messages: tuple[tuple[str, str], ...]
    model_name: str = "gpt-4o"
    temperature: float = 0.2

    def __post_init__(self) -> None:
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("request needs at least one user message")
        if any(not content for _, content in self.messages):
            raise ValueError("message content must be non-empty")
        if any(role not in ("system", "user") for role, _ in self.messages):
            raise ValueError("message role must be system or user")

    @property
    def user_text(self) -> str:
        """Concatenated user-message content, for request capture in tests."""
        return "\n".join(c for r, c in self.messages if r == "user")


class UsageSource(enum.Enum):
    PROVIDER_REPORTED = "provider_reported"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class LLMResponse:
    content: str
    prompt_tokens: int
    completion_tokens: int
    usage_source: UsageSource

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")


@dataclass(frozen=True)
class CostModel:
    """Per-token USD prices; configuration, never a baked-in constant."""

    input_price_per_token: Decimal
    output_price_per_token: Decimal

    def __post_init__(self) -> None:
        if self.input_price_per_token < 0 or self.output_price_per_token < 0:
            raise ValueError("prices must be non-negative")

    @classmethod
    def from_floats(cls, input_price: float, output_price: float) -> "CostModel":
        return cls(Decimal(str(input_price)), Decimal(str(output_price)))


class CodeKind(enum.Enum):
    INTERPRETER_SCRIPT = "interpreter_script"
    BOARD_SKETCH = "board_sketch"


@dataclass(frozen=True)
class CodeArtifact:
    code: str
    kind: CodeKind
    fenced: bool

    def __post_init__(self) -> None:
        if not self.code.strip():
            raise ValueError("code must be non-empty")


def estimate_tokens(text: str) -> int:
    """Fallback token estimate when the provider reports no usage: ceil(chars/4)."""
    return -(-len(text) // 4)


def price(prompt_tokens: int, completion_tokens: int, model: CostModel) -> Decimal:
    """Convert a usage pair to USD.

    Exact decimal arithmetic; rounding to 6 places happens only at display
    time so that pricing stays strictly linear in token counts.
    """
    if prompt_tokens < 0 or completion_tokens < 0:
        raise NegativeTokens(f"negative token count: ({prompt_tokens}, {completion_tokens})")
    return (
        Decimal(prompt_tokens) * model.input_price_per_token
        + Decimal(completion_tokens) * model.output_price_per_token
    )


# fence tags conventionally used for each artifact kind; "" is a bare fence
_KIND_TAGS = {
    CodeKind.INTERPRETER_SCRIPT: {"python", "py", ""},
    CodeKind.BOARD_SKETCH: {"cpp", "c++", "c", "arduino", "ino", ""},
}

_FENCE_RE = re.compile(r"```([A-Za-z0-9+._-]*)[ \t]*\n(.*?)```", re.DOTALL)


def extract_code(response: LLMResponse, expected: CodeKind) -> CodeArtifact:
    """Pull the code block to run from a completion.

    Takes the first fenced block whose tag matches the expected kind; a
    response without any fence is treated as bare code so it still enters the
    execute-and-retry loop instead of being dropped.
    """
    content = response.content
    if not content.strip():
        raise NoCode("empty response content")

    fences = _FENCE_RE.findall(content)
    if not fences:
        return CodeArtifact(code=content.strip("\n"), kind=expected, fenced=False)

    for tag, body in fences:
        if tag.lower() in _KIND_TAGS[expected] and body.strip():
            return CodeArtifact(code=body.strip("\n"), kind=expected, fenced=True)
    raise NoCode(f"no fenced block matches kind {expected.value}")


class LLMProvider:
    """Provider contract: complete() returns a response or raises ProviderError."""

    def complete(self, request: LLMRequest) -> LLMResponse:
        raise NotImplementedError


@dataclass
class FixtureEntry:
    content: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class ScriptedProvider(LLMProvider):
    """Replays a fixed list of responses in order; deterministic by design.

    The fixture cursor is per-instance, so concurrent stage runs each get
    their own sequence. All requests are captured for test assertions.
    """

    def __init__(self, entries: list[FixtureEntry]):
        self._entries = list(entries)
        self._cursor = 0
        self.requests: list[LLMRequest] = []

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedProvider":
        entries = [
            FixtureEntry(
                content=e["content"],
                prompt_tokens=e.get("prompt_tokens"),
                completion_tokens=e.get("completion_tokens"),
            )
            for e in json.loads(Path(path).read_text(encoding="utf-8"))
        ]
        return cls(entries)

    @property
    def calls(self) -> int:
        return self._cursor

    def complete(self, request: LLMRequest) -> LLMResponse:
        self.requests.append(request)
        if self._cursor >= len(self._entries):
            raise FixtureExhausted(
                f"scripted fixture exhausted after {len(self._entries)} entries"
            )
        entry = self._entries[self._cursor]
        self._cursor += 1
        if entry.prompt_tokens is None or entry.completion_tokens is None:
            return LLMResponse(
                content=entry.content,
                prompt_tokens=estimate_tokens(request.user_text),
                completion_tokens=estimate_tokens(entry.content),
                usage_source=UsageSource.ESTIMATED,
            )
        return LLMResponse(
            content=entry.content,
            prompt_tokens=entry.prompt_tokens,
            completion_tokens=entry.completion_tokens,
            usage_source=UsageSource.PROVIDER_REPORTED,
        )


SUCCESS_SCRIPT = textwrap.dedent(
    """\
    from pathlib import Path

    out = Path("artifacts")
    out.mkdir(exist_ok=True)
    (out / "model.tflite").write_bytes(b"\\x00" * 64)
    (out / "processed.csv").write_text("r,g,b,label\\n0.1,0.2,0.3,apple\\n")
    print("done")
    """
)

FAILURE_SCRIPT = textwrap.dedent(
    """\
    import sys

    sys.stderr.write("Traceback: simulated stage error at step {idx}\\n")
    sys.exit(1)
    """
)

SUCCESS_SKETCH = textwrap.dedent(
    """\
    #include <model_data.h>

    void setup() {{
      // load interpreter, index {idx}
    }}

    void loop() {{
    }}
    """
)

FAILURE_SKETCH = textwrap.dedent(
    """\
    // FORCE_COMPILE_ERROR: undefined reference to `setup' (simulated, index {idx})
    void loop() {{
    }}
    """
)


class StochasticProvider(LLMProvider):
    """Seeded pass/fail code generator; a pure function of (seed, call index).

    `code_kind` selects whether success/failure bodies are interpreter scripts
    or board sketches, matching what the downstream executor expects.
    """

    def __init__(
        self,
        seed: int,
        success_probability: float,
        code_kind: CodeKind = CodeKind.INTERPRETER_SCRIPT,
    ):
        if not 0.0 <= success_probability <= 1.0:
            raise ValueError("success_probability must be in [0, 1]")
        self._seed = seed
        self._p = success_probability
        self._kind = code_kind
        self._index = 0
        self.requests: list[LLMRequest] = []

    def _entry(self, index: int) -> tuple[bool, int, int]:
        rng = random.Random(f"{self._seed}:{index}")
        success = rng.random() < self._p
        prompt_tokens = 400 + rng.randrange(0, 4000)
        completion_tokens = 100 + rng.randrange(0, 1200)
        return success, prompt_tokens, completion_tokens

    def complete(self, request: LLMRequest) -> LLMResponse:
        self.requests.append(request)
        index = self._index
        self._index += 1
        success, prompt_tokens, completion_tokens = self._entry(index)
        if self._kind is CodeKind.BOARD_SKETCH:
            body = SUCCESS_SKETCH if success else FAILURE_SKETCH
            fence = "cpp"
        else:
            body = SUCCESS_SCRIPT if success else FAILURE_SCRIPT
            fence = "python"
        content = f"```{fence}\n{body.format(idx=index)}```"
        return LLMResponse(
            content=content,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            usage_source=UsageSource.PROVIDER_REPORTED,
        )


class LiveProvider(LLMProvider):
    """HTTP client for the de-facto chat-completion wire schema.

    Transport faults are retried with bounded exponential backoff; those
    retries are invisible to the lifecycle layer and consume no attempt slots.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        model_name: str = "gpt-4o",
        timeout: float = 120.0,
        max_transport_retries: int = 3,
        backoff_base: float = 1.0,
    ):
        self._endpoint = endpoint
        self._api_key = api_key
        self._model_name = model_name
        self._timeout = timeout
        self._retries = max_transport_retries
        self._backoff_base = backoff_base

    def complete(self, request: LLMRequest) -> LLMResponse:
        body = {
            "model": request.model_name or self._model_name,
            "temperature": request.temperature,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_error: Exception | None = None
        for try_index in range(self._retries):
            if try_index:
                time.sleep(self._backoff_base * 2 ** (try_index - 1))
            try:
                resp = requests.post(
                    self._endpoint, json=body, headers=headers, timeout=self._timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 429:
                last_error = RateLimited(f"rate limited by {self._endpoint}")
                continue
            if resp.status_code >= 500:
                last_error = ProviderUnreachable(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProviderUnreachable(
                    f"unexpected status {resp.status_code}: {resp.text[:500]}"
                )
            return self._parse(resp.json(), request)
        if isinstance(last_error, RateLimited):
            raise last_error
        raise ProviderUnreachable(
            f"{self._endpoint} unreachable after {self._retries} tries: {last_error}"
        )

    @staticmethod
    def _parse(payload: dict, request: LLMRequest) -> LLMResponse:
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnreachable(f"malformed completion payload: {exc}") from exc
        usage = payload.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return LLMResponse(
                content=content,
                prompt_tokens=int(usage["prompt_tokens"]),
                completion_tokens=int(usage["completion_tokens"]),
                usage_source=UsageSource.PROVIDER_REPORTED,
            )
        return LLMResponse(
            content=content,
            prompt_tokens=estimate_tokens(request.user_text),
            completion_tokens=estimate_tokens(content),
            usage_source=UsageSource.ESTIMATED,
        )
