"""Base producer class with common functionality for all step producers."""

from abc import ABC, abstractmethod
from typing import AsyncIterator, Dict

import structlog

from ..models import ProducedStep, StepSpec
from ..utils.text import tokenize

logger = structlog.get_logger()

PLAN_PROMPT_KIND = "plan"


class ProducerError(Exception):
    """Base exception for producer errors."""
    code = "ProducerError"


class ScriptMissingError(ProducerError):
    """Raised when a scripted producer has no entry for a requested step."""
    code = "ScriptMissing"


class RemoteProducerError(ProducerError):
    """Raised when the remote generation endpoint fails or answers badly."""
    code = "RemoteProducerError"


class StepProducer(ABC):
    """Base class for everything that turns (context, step spec) into step text.

    Subclasses implement ``produce``. Phase I planning goes through
    ``stream_plan``, which by default chunks the text ``produce`` returns for a
    ``kind="plan"`` spec.
    """

    name = "base"

    def __init__(self, chunk_size: int = 16):
        self.chunk_size = max(1, chunk_size)

        # Statistics
        self.calls = 0
        self.tokens_produced = 0
        self.errors = 0

    async def __aenter__(self) -> "StepProducer":
        await self.open()
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb) -> None:
        await self.close()

    async def open(self) -> None:
        """Acquire resources (clients, files). No-op by default."""

    async def close(self) -> None:
        """Release resources. No-op by default."""

    @abstractmethod
    async def produce(self, context: str, spec: StepSpec) -> ProducedStep:
        """Generate the text for one step given its materialised context."""

    async def stream_plan(self, prompt: str) -> AsyncIterator[str]:
        """Yield the linear Phase I output in chunks."""
        produced = await self.produce(prompt, StepSpec(kind=PLAN_PROMPT_KIND))
        text = produced.text
        for start in range(0, len(text), self.chunk_size):
            yield text[start:start + self.chunk_size]

    def _result(self, text: str) -> ProducedStep:
        token_ids = tokenize(text)
        self.calls += 1
        self.tokens_produced += len(token_ids)
        return ProducedStep(text=text, token_ids=token_ids)

    def get_stats(self) -> Dict[str, int]:
        return {
            "calls": self.calls,
            "tokensProduced": self.tokens_produced,
            "errors": self.errors,
        }
