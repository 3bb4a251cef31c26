"""LLM access choke point.

Every model call in the engine flows through a Gateway in one of three modes:

- live: POSTs to an OpenAI-compatible chat-completions endpoint;
- scripted: answers from registered per-label behaviors, fully offline;
- replay: answers verbatim from a previously recorded call log, verifying
  that each request digest matches the logged one.

Each call appends a log entry, so a finished run carries its full transcript
and can be re-executed without network access.
"""

from __future__ import annotations

import json
import math
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    EndpointError,
    GatewayError,
    InvalidField,
    MalformedLog,
    ReplayDivergence,
)
from .hashing import canonical_json, file_sha256, sha256_hex

_ROLES = ("system", "user", "assistant")

# Digest of zero bytes; the content hash of an empty file set by definition.
EMPTY_CONTENT_HASH = sha256_hex(b"")


def estimate_tokens(text: str) -> int:
    """Offline token estimate: ceil(1.3 x whitespace-separated word count)."""
    return math.ceil(1.3 * len(text.split()))


@dataclass(frozen=True)
class ChatRequest:
    """A single chat-completion request.

    `messages` is a tuple of {"role", "content"} mappings; canonical_dict()
    is the serialization that request digests are computed over.
    """

    model: str
    messages: tuple
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise InvalidField("ChatRequest.messages must be non-empty")
        msgs = []
        for m in self.messages:
            role = m.get("role")
            if role not in _ROLES:
                raise InvalidField(f"ChatRequest message role {role!r} is not one of {_ROLES}")
            if not isinstance(m.get("content"), str):
                raise InvalidField("ChatRequest message content must be a string")
            msgs.append({"role": role, "content": m["content"]})
        object.__setattr__(self, "messages", tuple(msgs))

    def canonical_dict(self) -> dict:
        return {
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.canonical_dict()))

    def system_prompt(self) -> str | None:
        for m in self.messages:
            if m["role"] == "system":
                return m["content"]
        return None

    def prompt_token_estimate(self) -> int:
        return sum(estimate_tokens(m["content"]) for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass
class CallLogEntry:
    """One gateway call: densely indexed, digest-addressed, label-annotated."""

    index: int
    request_digest: str
    request: dict
    response: dict
    label: str = "default"

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "request_digest": self.request_digest,
            "request": self.request,
            "response": self.response,
            "label": self.label,
        }


def default_transport(url: str, payload: dict, timeout: float = 60.0) -> dict:
    """POST a JSON payload and decode the JSON reply (stdlib only)."""
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode("utf-8"))


def _default_behavior(seed: int, request: ChatRequest, digest: str) -> str:
    return f"scripted reply {digest[:12]}"


class Gateway:
    """Unified chat-completion interface with per-call logging.

    Construct via the scripted(), live(), or replay() classmethods. Scripted
    behaviors are pure functions (seed, request, digest) -> text registered
    under a call-site label; unlabeled calls fall back to a generic stub.
    """

    def __init__(self, mode: str, *, model: str, seed: int = 0,
                 endpoint_url: str | None = None, transport=None, retries: int = 1,
                 log: list[CallLogEntry] | None = None):
        if mode not in ("live", "scripted", "replay"):
            raise InvalidField(f"unknown gateway mode {mode!r}")
        self.mode = mode
        self.model = model
        self.seed = seed
        self.endpoint_url = endpoint_url
        self._transport = transport
        self._retries = retries
        self._behaviors: dict[str, object] = {}
        self._replay_log: list[CallLogEntry] = list(log) if log else []
        self._cursor = 0
        self.entries: list[CallLogEntry] = []
        self.system_prompts: list[str] = []

    # -- constructors ---------------------------------------------------

    @classmethod
    def scripted(cls, seed: int, *, model: str = "scripted-stub", transport=None) -> "Gateway":
        # `transport` is accepted (and ignored) so tests can prove scripted
        # mode never performs network activity even when one is injected.
        return cls("scripted", model=model, seed=seed, transport=transport)

    @classmethod
    def live(cls, endpoint_url: str, model: str, *, transport=None, retries: int = 1) -> "Gateway":
        if not endpoint_url:
            raise InvalidField("live gateway requires an endpoint URL")
        return cls("live", model=model, endpoint_url=endpoint_url,
                   transport=transport or default_transport, retries=retries)

    @classmethod
    def replay(cls, log: list[CallLogEntry], *, model: str = "replay", transport=None) -> "Gateway":
        return cls("replay", model=model, log=log, transport=transport)

    # -- scripted behavior registry -------------------------------------

    def register_behavior(self, label: str, fn, *, overwrite: bool = True) -> None:
        if overwrite or label not in self._behaviors:
            self._behaviors[label] = fn

    def ensure_behavior(self, label: str, fn) -> None:
        self._behaviors.setdefault(label, fn)

    # -- the single entry point -----------------------------------------

    @property
    def call_count(self) -> int:
        return len(self.entries)

    def complete(self, request: ChatRequest, label: str = "default") -> ChatResponse:
        digest = request.digest()
        if self.mode == "scripted":
            response = self._complete_scripted(request, digest, label)
        elif self.mode == "replay":
            response = self._complete_replay(request, digest)
        else:
            response = self._complete_live(request)
        self._record(request, digest, response, label)
        return response

    def _record(self, request: ChatRequest, digest: str, response: ChatResponse, label: str) -> None:
        entry = CallLogEntry(
            index=len(self.entries),
            request_digest=digest,
            request=request.canonical_dict(),
            response={
                "text": response.text,
                "prompt_tokens": response.prompt_tokens,
                "completion_tokens": response.completion_tokens,
            },
            label=label,
        )
        self.entries.append(entry)
        sp = request.system_prompt()
        if sp is not None and sp not in self.system_prompts:
            self.system_prompts.append(sp)

    def _complete_scripted(self, request: ChatRequest, digest: str, label: str) -> ChatResponse:
        behavior = self._behaviors.get(label, _default_behavior)
        text = behavior(self.seed, request, digest)
        return ChatResponse(
            text=text,
            prompt_tokens=request.prompt_token_estimate(),
            completion_tokens=estimate_tokens(text),
        )

    def _complete_replay(self, request: ChatRequest, digest: str) -> ChatResponse:
        if self._cursor >= len(self._replay_log):
            raise ReplayDivergence(
                f"replay log exhausted at index {self._cursor}; got request {digest}"
            )
        entry = self._replay_log[self._cursor]
        if entry.request_digest != digest:
            raise ReplayDivergence(
                f"replay divergence at index {self._cursor}: "
                f"expected {entry.request_digest}, got {digest}"
            )
        self._cursor += 1
        resp = entry.response
        return ChatResponse(
            text=resp["text"],
            prompt_tokens=int(resp["prompt_tokens"]),
            completion_tokens=int(resp["completion_tokens"]),
        )

    def _complete_live(self, request: ChatRequest) -> ChatResponse:
        payload = request.canonical_dict()
        last_err: Exception | None = None
        for _ in range(1 + max(0, self._retries)):
            try:
                raw = self._transport(self.endpoint_url, payload)
                choice = raw["choices"][0]
                text = choice["message"]["content"]
                usage = raw.get("usage", {})
                return ChatResponse(
                    text=text,
                    prompt_tokens=int(usage.get("prompt_tokens", request.prompt_token_estimate())),
                    completion_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
                )
            except (urllib.error.URLError, OSError, KeyError, IndexError,
                    TypeError, ValueError, json.JSONDecodeError) as err:
                last_err = err
        raise EndpointError(f"live endpoint failed after retries: {last_err!r}")


# -- log persistence ------------------------------------------------------


def save_log(entries: list[CallLogEntry], destination: Path | str) -> None:
    """Write entries as JSONL, one canonical line each. Byte-stable."""
    lines = [canonical_json(e.to_dict()) for e in entries]
    Path(destination).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8", newline="\n")


def log_to_lines(entries: list[CallLogEntry]) -> str:
    lines = [canonical_json(e.to_dict()) for e in entries]
    return "\n".join(lines) + ("\n" if lines else "")


def load_log(source: Path | str) -> list[CallLogEntry]:
    """Parse a JSONL call log; raises MalformedLog on any defect."""
    entries: list[CallLogEntry] = []
    text = Path(source).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines()):
        if not line.strip():
            raise MalformedLog(f"blank line at {lineno}")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise MalformedLog(f"line {lineno} is not valid JSON: {err}") from err
        try:
            entry = CallLogEntry(
                index=int(obj["index"]),
                request_digest=str(obj["request_digest"]),
                request=obj["request"],
                response=obj["response"],
                label=str(obj.get("label", "default")),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise MalformedLog(f"line {lineno} missing required fields: {err!r}") from err
        if entry.index != lineno:
            raise MalformedLog(f"entry index {entry.index} at line {lineno} is not dense")
        entries.append(entry)
    return entries


# -- content hashing -------------------------------------------------------


def content_hash(paths: list[Path | str], base_dir: Path | str | None = None) -> str:
    """Hash of the (path, file digest) pairs in sorted path order.

    Paths are recorded relative to base_dir (posix separators) so the hash is
    location-independent. The empty set hashes to EMPTY_CONTENT_HASH.
    """
    base = Path(base_dir) if base_dir is not None else None
    pairs = []
    for p in paths:
        p = Path(p)
        rel = p.relative_to(base).as_posix() if base is not None else p.as_posix()
        pairs.append((rel, file_sha256(p)))
    pairs.sort()
    h = "".join(f"{rel}\n{digest}\n" for rel, digest in pairs)
    return sha256_hex(h)
