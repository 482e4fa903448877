"""OpenAI-compatible chat-completion backend."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, fields
from typing import Callable, Optional, Sequence

import httpx

from ..errors import ConfigError, RemoteRejected, RemoteUnavailable
from ..protocol import fmt_time
from ..timeline import FrameRef
from .base import ModelInterface, ModelOutput, estimate_tokens

logger = logging.getLogger(__name__)

ENV_PREFIX = "SPECTEMP_REMOTE_"
_RETRY_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class RemoteConfig:
    base_url: str
    model: str
    api_key: str = ""
    timeout_s: float = 60.0
    max_attempts: int = 3
    backoff_s: float = 1.0
    temperature: float = 0.0
    max_tokens: int = 512
    attach_images: bool = False

    @classmethod
    def from_mapping(cls, data: dict) -> "RemoteConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown remote config keys: {sorted(unknown)}")
        missing = [k for k in ("base_url", "model") if not data.get(k)]
        if missing:
            raise ConfigError(f"remote config is missing {missing}")
        return cls(**data)

    @classmethod
    def from_env(cls, overrides: Optional[dict] = None) -> "RemoteConfig":
        """Read ``SPECTEMP_REMOTE_BASE_URL``, ``..._MODEL``, ``..._API_KEY`` etc.

        Explicit ``overrides`` win over the environment.
        """
        data: dict = {}
        for f in fields(cls):
            raw = os.environ.get(ENV_PREFIX + f.name.upper())
            if raw is None:
                continue
            if f.type in ("float",):
                data[f.name] = float(raw)
            elif f.type in ("int",):
                data[f.name] = int(raw)
            elif f.type in ("bool",):
                data[f.name] = raw.strip().lower() in ("1", "true", "yes")
            else:
                data[f.name] = raw
        data.update(overrides or {})
        return cls.from_mapping(data)


def frame_placeholder(frame: FrameRef) -> str:
    return f"[frame t={fmt_time(frame.timestamp_s)}s]"


class RemoteModel(ModelInterface):
    """Chat-completion client with exponential backoff.

    Network errors, timeouts and retryable statuses (429, 5xx) are retried up
    to ``max_attempts`` times, then surface as :class:`RemoteUnavailable`.
    Other non-2xx statuses raise :class:`RemoteRejected` immediately. Each call
    builds its own request, so one instance may be shared between threads.

    ``image_resolver`` maps a frame to an image URL (for example a data URL)
    and is only used when ``attach_images`` is set.
    """

    def __init__(self, config: RemoteConfig,
                 image_resolver: Optional[Callable[[FrameRef], str]] = None,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        if config.attach_images and image_resolver is None:
            raise ConfigError("attach_images requires an image_resolver")
        self.config = config
        self.image_resolver = image_resolver
        self._transport = transport
        self._sleep = sleep

    def _messages(self, prompt: str, frames: Sequence[FrameRef]) -> list[dict]:
        if not self.config.attach_images:
            return [{"role": "user", "content": prompt}]
        parts: list[dict] = []
        for f in frames:
            parts.append({"type": "text", "text": frame_placeholder(f)})
            parts.append({"type": "image_url", "image_url": {"url": self.image_resolver(f)}})
        parts.append({"type": "text", "text": prompt})
        return [{"role": "user", "content": parts}]

    def _post(self, payload: dict) -> httpx.Response:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        with httpx.Client(timeout=self.config.timeout_s, transport=self._transport) as client:
            return client.post(url, json=payload, headers=headers)

    def invoke(self, prompt, frames, view=None) -> ModelOutput:
        payload = {
            "model": self.config.model,
            "messages": self._messages(prompt, frames),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        last_reason, last_err = "network", ""
        for attempt in range(self.config.max_attempts):
            if attempt:
                delay = self.config.backoff_s * 2 ** (attempt - 1)
                logger.warning("remote call failed (%s), retrying in %.2fs", last_err, delay)
                self._sleep(delay)
            try:
                resp = self._post(payload)
            except httpx.TimeoutException as e:
                last_reason, last_err = "timeout", repr(e)
                continue
            except httpx.TransportError as e:
                last_reason, last_err = "network", repr(e)
                continue
            if resp.status_code in _RETRY_STATUS:
                last_reason, last_err = "status", f"HTTP {resp.status_code}"
                continue
            if not 200 <= resp.status_code < 300:
                raise RemoteRejected(resp.status_code, resp.text[:500])
            return self._decode(resp)
        raise RemoteUnavailable(
            f"{self.config.base_url} unavailable after {self.config.max_attempts} attempts: {last_err}",
            reason=last_reason)

    @staticmethod
    def _decode(resp: httpx.Response) -> ModelOutput:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise RemoteRejected(resp.status_code, f"unparseable completion: {e}") from e
        usage = body.get("usage") or {}
        decode = usage.get("completion_tokens")
        return ModelOutput(text, None, int(decode) if decode is not None else estimate_tokens(text))
