"""Remote producer speaking a minimal JSON-over-HTTP generation protocol."""

from typing import Optional

import httpx
import structlog

from ..models import ProducedStep, StepSpec
from .base import RemoteProducerError, StepProducer

logger = structlog.get_logger()


class RemoteProducer(StepProducer):
    """POST ``{context, spec, maxTokens}`` to an endpoint, expect ``{text}`` back."""

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        timeout_seconds: float = 30.0,
        max_tokens: int = 256,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        chunk_size: int = 16,
    ):
        super().__init__(chunk_size=chunk_size)
        self.endpoint = endpoint
        self.timeout_seconds = timeout_seconds
        self.max_tokens = max_tokens
        self.transport = transport
        self.client: Optional[httpx.AsyncClient] = None

    async def open(self) -> None:
        if self.client is None:
            self.client = httpx.AsyncClient(
                timeout=self.timeout_seconds,
                transport=self.transport,
                headers={"Content-Type": "application/json"},
            )

    async def close(self) -> None:
        if self.client is not None:
            await self.client.aclose()
            self.client = None

    async def produce(self, context: str, spec: StepSpec) -> ProducedStep:
        await self.open()
        assert self.client is not None
        payload = {
            "context": context,
            "spec": spec.model_dump(mode="json", exclude_none=True),
            "maxTokens": self.max_tokens,
        }
        try:
            response = await self.client.post(self.endpoint, json=payload)
            response.raise_for_status()
            body = response.json()
        except httpx.HTTPStatusError as e:
            self.errors += 1
            raise RemoteProducerError(f"HTTP {e.response.status_code} from {self.endpoint}") from e
        except (httpx.HTTPError, ValueError) as e:
            self.errors += 1
            raise RemoteProducerError(f"Request to {self.endpoint} failed: {e}") from e

        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str):
            self.errors += 1
            raise RemoteProducerError(f"Response from {self.endpoint} has no 'text' field")
        logger.debug(f"Remote producer returned {len(text)} chars for {spec.key}")
        return self._result(text)
