"""Model and embedding interfaces the orchestrator talks to."""

from __future__ import annotations

import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..protocol import SessionView
from ..timeline import FrameRef

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def estimate_tokens(text: str) -> int:
    """Crude word/punctuation count used wherever a real tokenizer is unavailable."""
    return len(_TOKEN_RE.findall(text))


@dataclass(frozen=True)
class ModelOutput:
    text: str
    token_logprobs: Optional[tuple[float, ...]] = None
    decode_tokens: int = 0


class ModelInterface(ABC):
    """A target or draft model.

    ``view`` carries structured session state. Scripted backends rely on it;
    real backends only need ``prompt`` and ``frames``.
    """

    @abstractmethod
    def invoke(self, prompt: str, frames: Sequence[FrameRef],
               view: Optional[SessionView] = None) -> ModelOutput:
        ...


class EmbeddingProvider(ABC):
    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray:
        ...

    @abstractmethod
    def embed_frame(self, frame: FrameRef) -> np.ndarray:
        ...
