"""Completion providers: live chat endpoint, transcript recording, and replay.

Replay-strict mode makes full pipeline runs hermetic: every request must
resolve from the transcript by fingerprint or the run fails.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests


class ProviderError(RuntimeError):
    pass


class NetworkError(ProviderError):
    pass


class ApiError(ProviderError):
    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class MissingTranscriptEntry(ProviderError):
    def __init__(self, fingerprint: str, prompt_head: str):
        super().__init__(
            f"no transcript entry for fingerprint {fingerprint[:12]}... "
            f"(prompt starts: {prompt_head!r})"
        )
        self.fingerprint = fingerprint


@dataclass(frozen=True)
class CompletionRequest:
    prompt_text: str
    system_text: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 512
    model_name: str = "gpt-3.5-turbo"

    def __post_init__(self):
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def request_fingerprint(request: CompletionRequest) -> str:
    """Stable content hash; excludes max tokens so limit tweaks keep recordings valid."""
    payload = json.dumps(
        {
            "model": request.model_name,
            "system": request.system_text,
            "prompt": request.prompt_text,
            "temperature": request.temperature,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


class HttpChatProvider:
    """Client for the widely used chat-completions HTTP interface."""

    def __init__(
        self,
        url: str,
        api_key: str = "",
        timeout_s: float = 60.0,
        retries: int = 1,
        max_inflight: int = 4,
    ):
        self.url = url
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.retries = retries
        self._gate = threading.Semaphore(max_inflight)

    def complete(self, request: CompletionRequest) -> str:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.prompt_text})
        body = {
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: ProviderError | None = None
        for _ in range(self.retries + 1):
            with self._gate:
                try:
                    resp = requests.post(
                        self.url, json=body, headers=headers, timeout=self.timeout_s
                    )
                except requests.RequestException as exc:
                    last_error = NetworkError(str(exc))
                    continue
            if resp.status_code != 200:
                last_error = ApiError(resp.status_code, resp.text)
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = ApiError(resp.status_code, f"malformed response body: {exc}")
                continue
        assert last_error is not None
        raise last_error


def load_transcript(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    path = Path(path)
    if not path.exists():
        return entries
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            entries[rec["fingerprint"]] = rec["response"]
    return entries


class TranscriptRecorder:
    """Wrap a live provider; replay known fingerprints, record new ones."""

    def __init__(self, inner: Provider, path: str | Path):
        self._inner = inner
        self._path = Path(path)
        self._entries = load_transcript(self._path)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        fp = request_fingerprint(request)
        with self._lock:
            if fp in self._entries:
                return self._entries[fp]
        response = self._inner.complete(request)
        record = {
            "fingerprint": fp,
            "request": {
                "model_name": request.model_name,
                "system_text": request.system_text,
                "prompt_text": request.prompt_text,
                "temperature": request.temperature,
            },
            "response": response,
        }
        with self._lock:
            if fp not in self._entries:
                self._entries[fp] = response
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return response


class TranscriptReplayer:
    """Serve responses from a transcript; optionally fall through to live."""

    def __init__(self, path: str | Path, fallback: Provider | None = None):
        self._entries = load_transcript(path)
        self._fallback = fallback

    def __len__(self) -> int:
        return len(self._entries)

    def complete(self, request: CompletionRequest) -> str:
        fp = request_fingerprint(request)
        if fp in self._entries:
            return self._entries[fp]
        if self._fallback is not None:
            return self._fallback.complete(request)
        raise MissingTranscriptEntry(fp, request.prompt_text[:80])
