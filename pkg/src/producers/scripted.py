"""Scripted producer: replays plan, step and conclusion texts from a fixture file."""

from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import structlog
import yaml

from ..models import ProducedStep, StepSpec
from .base import ProducerError, ScriptMissingError, StepProducer

logger = structlog.get_logger()


class ScriptedProducer(StepProducer):
    """Producer driven by a script mapping.

    Script layout (YAML or JSON)::

        plan: |
          <Plan> ... </Plan>
        steps:
          1: text of outline 1      # keyed by outline index or transition id
          "t:n2": text
        conclusion: final text
    """

    name = "scripted"

    def __init__(self, script: Mapping[str, Any], chunk_size: int = 16):
        super().__init__(chunk_size=chunk_size)
        self.plan = str(script.get("plan", ""))
        self.conclusion = script.get("conclusion")
        self.steps: Dict[str, str] = {
            str(key): str(value) for key, value in (script.get("steps") or {}).items()
        }

    @classmethod
    def from_file(cls, path: Union[str, Path], chunk_size: int = 16) -> "ScriptedProducer":
        path = Path(path)
        try:
            script = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ProducerError(f"Cannot load script {path}: {e}") from e
        if not isinstance(script, dict):
            raise ProducerError(f"Script {path} must be a mapping")
        logger.debug(f"Loaded script {path} with {len(script.get('steps') or {})} steps")
        return cls(script, chunk_size=chunk_size)

    def _lookup(self, spec: StepSpec) -> Optional[str]:
        for key in (spec.index, spec.trans_id):
            if key is not None and str(key) in self.steps:
                return self.steps[str(key)]
        return None

    async def produce(self, context: str, spec: StepSpec) -> ProducedStep:
        if spec.kind == "plan":
            if not self.plan:
                self.errors += 1
                raise ScriptMissingError("script has no plan")
            return self._result(self.plan)
        if spec.kind == "conclusion":
            if self.conclusion is None:
                self.errors += 1
                raise ScriptMissingError("script has no conclusion")
            return self._result(str(self.conclusion))

        text = self._lookup(spec)
        if text is None:
            self.errors += 1
            raise ScriptMissingError(f"no scripted text for step {spec.index or spec.trans_id}")
        return self._result(text)
