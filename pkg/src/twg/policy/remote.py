"""HTTP client for a chat-completion style generation endpoint.

Request body (POST ``{base_url}/chat/completions``)::

    {"model": "...",
     "messages": [{"role": "user",
                   "content": [{"type": "text", "text": "..."},
                               {"type": "video_view", "grain": "coarse", "source_uri": "...",
                                "video_id": "...", "start_s": 0.0, "end_s": 640.0,
                                "timestamps": [5.0, 15.0, ...], "max_tokens_per_frame": 16,
                                "attachments": [["..."], [], ...]}]},
                  {"role": "assistant", "content": [{"type": "text", "text": "..."}]}],
     "temperature": 1.0, "top_p": 0.9, "top_k": 50, "repetition_penalty": 1.0,
     "max_tokens": 1024, "seed": 123, "logprobs": true}

Response body::

    {"choices": [{"message": {"role": "assistant", "content": "..."},
                  "logprobs": {"content": [{"token": "...", "logprob": -0.1}, ...]}}],
     "usage": {"completion_tokens": 42}}

``logprobs`` may be null when the server cannot report them. The endpoint
fetches and tokenizes frames itself from ``source_uri`` and ``timestamps``.

Configuration comes from the constructor or the environment:
``TWG_ENDPOINT_URL``, ``TWG_API_KEY``, ``TWG_MODEL``, ``TWG_TIMEOUT_S``,
``TWG_MAX_IN_FLIGHT``.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from typing import TYPE_CHECKING

import httpx

from .base import (
    GenerationRequest,
    GenerationResponse,
    Message,
    PolicyKind,
    TransportError,
    Unsupported,
    rough_token_count,
)

if TYPE_CHECKING:
    from ..rollout import Trajectory

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 425, 429, 500, 502, 503, 504}


def message_payload(m: Message) -> dict:
    content: list[dict] = [{"type": "text", "text": m.text}]
    for v in m.views:
        content.append(
            {
                "type": "video_view",
                "grain": v.grain.value,
                "source_uri": v.source_uri,
                "video_id": v.video_id,
                "start_s": v.start_s,
                "end_s": v.end_s,
                "timestamps": list(v.timestamps),
                "max_tokens_per_frame": v.tokens_per_frame,
                "attachments": [list(f) for f in v.frames],
            }
        )
    return {"role": m.role, "content": content}


def request_payload(req: GenerationRequest, model: str, want_logprobs: bool) -> dict:
    s = req.sampling
    return {
        "model": model,
        "messages": [message_payload(m) for m in req.context],
        "temperature": s.temperature,
        "top_p": s.top_p,
        "top_k": s.top_k,
        "repetition_penalty": s.repetition_penalty,
        "max_tokens": s.max_new_tokens,
        "seed": req.seed,
        "logprobs": want_logprobs,
    }


def parse_response(body: dict) -> GenerationResponse:
    choice = body["choices"][0]
    text = choice["message"]["content"] or ""
    lp = choice.get("logprobs")
    total = None
    n_tokens = None
    if lp and lp.get("content") is not None:
        toks = lp["content"]
        total = float(sum(t["logprob"] for t in toks))
        n_tokens = len(toks)
    usage = body.get("usage") or {}
    n_tokens = usage.get("completion_tokens", n_tokens)
    if not n_tokens:
        n_tokens = rough_token_count(text)
    return GenerationResponse(text=text, total_logprob=total, token_count=int(n_tokens))


class RemotePolicy:
    kind = PolicyKind.REMOTE

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout_s: float | None = None,
        max_in_flight: int | None = None,
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        reports_logprobs: bool = False,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        env = os.environ
        self.base_url = (base_url or env.get("TWG_ENDPOINT_URL", "")).rstrip("/")
        if not self.base_url:
            raise ValueError("no endpoint URL (pass base_url or set TWG_ENDPOINT_URL)")
        self.api_key = api_key if api_key is not None else env.get("TWG_API_KEY", "")
        self.model = model or env.get("TWG_MODEL", "default")
        self.timeout_s = float(timeout_s if timeout_s is not None else env.get("TWG_TIMEOUT_S", 120))
        cap = int(max_in_flight if max_in_flight is not None else env.get("TWG_MAX_IN_FLIGHT", 8))
        if cap < 1 or max_attempts < 1:
            raise ValueError("max_in_flight and max_attempts must be >= 1")
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.reports_logprobs = reports_logprobs
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(cap)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._client = httpx.Client(timeout=self.timeout_s, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict) -> dict:
        url = f"{self.base_url}/chat/completions"
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                with self._slots:
                    r = self._client.post(url, json=payload)
            except httpx.TransportError as e:
                last = e
                log.warning("attempt %d/%d to %s failed: %s", attempt + 1, self.max_attempts, url, e)
                continue
            if r.status_code in RETRYABLE_STATUS:
                last = RuntimeError(f"HTTP {r.status_code}")
                log.warning("attempt %d/%d to %s got HTTP %d", attempt + 1, self.max_attempts, url, r.status_code)
                continue
            if r.status_code >= 400:
                raise TransportError(f"{url} rejected the request: HTTP {r.status_code} {r.text[:200]}")
            try:
                return r.json()
            except ValueError as e:
                raise TransportError(f"{url} returned invalid JSON") from e
        raise TransportError(f"{url} unreachable after {self.max_attempts} attempts: {last}")

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        body = self._post(request_payload(req, self.model, self.reports_logprobs))
        try:
            return parse_response(body)
        except (KeyError, IndexError, TypeError) as e:
            raise TransportError(f"malformed response body: {e}") from e

    def score_trajectory(self, traj: Trajectory) -> float:
        if not self.reports_logprobs:
            raise Unsupported("endpoint does not report log-probabilities")
        lps = [t.logprob for t in traj.turns]
        if any(lp is None for lp in lps):
            raise Unsupported("trajectory was generated without log-probabilities")
        return float(sum(lps))
