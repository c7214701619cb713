"""Chat-completion client for a live language model endpoint."""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import httpx

from .base import BackendError, BackendRequest, BackendResponse, TransportError

DEFAULT_MODEL = "gpt-4-0125-preview"


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    api_key: str
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    timeout: float = 120.0
    attempts: int = 3
    backoff: float = 1.0          # seconds before the first retry, doubled after each
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, env=None, **overrides) -> "EndpointConfig":
        """Read ``TEAMPLAN_API_URL`` / ``TEAMPLAN_API_KEY`` (plus optional model and temperature)."""
        env = os.environ if env is None else env
        url = env.get("TEAMPLAN_API_URL", "")
        key = env.get("TEAMPLAN_API_KEY", "")
        if not url or not key:
            raise BackendError("set TEAMPLAN_API_URL and TEAMPLAN_API_KEY to use the live backend")
        kw = {"url": url, "api_key": key}
        if env.get("TEAMPLAN_MODEL"):
            kw["model"] = env["TEAMPLAN_MODEL"]
        if env.get("TEAMPLAN_TEMPERATURE"):
            kw["temperature"] = float(env["TEAMPLAN_TEMPERATURE"])
        kw.update(overrides)
        return cls(**kw)


class HttpChatBackend:
    """Sends (system, user) message pairs to an OpenAI-style ``/chat/completions`` URL.

    Transport errors and 5xx/429 responses are retried with exponential
    backoff; any other 4xx fails at once.  A semaphore caps concurrent
    requests from parallel subgroup managers.
    """

    name = "http"

    def __init__(self, cfg: EndpointConfig, client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def _payload(self, request: BackendRequest) -> dict:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.rendered_prompt})
        return {"model": self.cfg.model, "temperature": self.cfg.temperature, "messages": messages}

    def complete(self, request: BackendRequest) -> BackendResponse:
        payload = self._payload(request)
        headers = {"Authorization": f"Bearer {self.cfg.api_key}"}
        delay = self.cfg.backoff
        last = ""
        for attempt in range(self.cfg.attempts):
            if attempt:
                self._sleep(delay)
                delay *= 2
            t0 = time.monotonic()
            try:
                with self._slots:
                    r = self._client.post(self.cfg.url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if r.status_code == 429 or r.status_code >= 500:
                last = f"HTTP {r.status_code}"
                continue
            if r.status_code >= 400:
                raise BackendError(f"HTTP {r.status_code} from {self.cfg.url}: {r.text[:200]}")
            try:
                body = r.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
            if not text:
                raise BackendError("empty completion")
            return BackendResponse(text, body.get("usage"), time.monotonic() - t0)
        raise TransportError(f"{request.role} request failed after {self.cfg.attempts} attempts ({last})")

    def close(self) -> None:
        self._client.close()
