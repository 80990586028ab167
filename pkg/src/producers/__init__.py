"""Step producers: scripted fixtures, deterministic synthetic text and a remote endpoint."""

from pathlib import Path
from typing import Any, Dict, Optional, Type, Union

from .base import ProducerError, RemoteProducerError, ScriptMissingError, StepProducer
from .remote import RemoteProducer
from .scripted import ScriptedProducer
from .synthetic import SyntheticProducer

PRODUCERS: Dict[str, Type[StepProducer]] = {
    "scripted": ScriptedProducer,
    "synthetic": SyntheticProducer,
    "remote": RemoteProducer,
}


def create_producer(settings: Any, script_path: Optional[Union[str, Path]] = None) -> StepProducer:
    """Instantiate the producer selected by ``settings.producer``."""
    kind = settings.producer
    if kind == "scripted":
        if script_path is None:
            raise ProducerError("the scripted producer needs a script file")
        return ScriptedProducer.from_file(script_path)
    if kind == "synthetic":
        return SyntheticProducer(
            seed=settings.seed,
            min_tokens=settings.step_tokens_min,
            max_tokens=settings.step_tokens_max,
        )
    if kind == "remote":
        return RemoteProducer(
            settings.endpoint,
            timeout_seconds=settings.remote_timeout_seconds,
            max_tokens=settings.max_tokens,
        )
    raise ProducerError(f"unknown producer {kind!r}; choose one of {sorted(PRODUCERS)}")


__all__ = [
    "PRODUCERS",
    "ProducerError",
    "RemoteProducer",
    "RemoteProducerError",
    "ScriptMissingError",
    "ScriptedProducer",
    "StepProducer",
    "SyntheticProducer",
    "create_producer",
]
