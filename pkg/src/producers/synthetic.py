"""Hash-deterministic synthetic producer for fuzzing and cost-model workloads."""

import random
import re
from typing import List

import structlog

from ..models import ProducedStep, StepSpec
from ..utils.text import stable_digest
from .base import StepProducer

logger = structlog.get_logger()

_PLAN_BLOCK = re.compile(r"<Plan\s*>.*?</Plan>", re.DOTALL)


class SyntheticProducer(StepProducer):
    """Step text derived from a stable digest of (seed, context, spec).

    Identical inputs give identical outputs across processes. Step lengths are
    drawn in ``[min_tokens, max_tokens]``.
    """

    name = "synthetic"

    def __init__(
        self,
        seed: int = 0,
        min_tokens: int = 50,
        max_tokens: int = 200,
        max_width: int = 8,
        max_depth: int = 3,
        chunk_size: int = 16,
    ):
        super().__init__(chunk_size=chunk_size)
        if min_tokens < 1 or max_tokens < min_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        self.seed = seed
        self.min_tokens = min_tokens
        self.max_tokens = max_tokens
        self.max_width = max(2, max_width)
        self.max_depth = max(1, max_depth)

    def _rng(self, *parts: str) -> random.Random:
        return random.Random(int(stable_digest(str(self.seed), *parts), 16))

    def _words(self, rng: random.Random, count: int) -> List[str]:
        return [f"w{rng.getrandbits(20):05x}" for _ in range(count)]

    def generate_plan(self, prompt: str) -> str:
        """Layered, branch-heavy plan with a single terminal outline."""
        rng = self._rng("plan", prompt)
        width = rng.randint(2, self.max_width)
        depth = rng.randint(1, self.max_depth)

        lines = ["<Plan>"]
        previous: List[int] = []
        used = set()
        index = 0
        for layer in range(depth):
            current = []
            for _ in range(width if layer == 0 else rng.randint(1, width)):
                index += 1
                deps = sorted(rng.sample(previous, rng.randint(1, min(2, len(previous))))) if previous else []
                used.update(deps)
                lines.append(
                    f'<Outline id="{index}" deps="{",".join(map(str, deps))}">{" ".join(self._words(rng, 3))}</Outline>'
                )
                current.append(index)
            previous = current

        dangling = [i for i in range(1, index + 1) if i not in used]
        if len(dangling) > 1:
            index += 1
            lines.append(f'<Outline id="{index}" deps="{",".join(map(str, dangling))}">merge</Outline>')
        lines.append("</Plan>")
        return "\n".join(lines)

    async def produce(self, context: str, spec: StepSpec) -> ProducedStep:
        if spec.kind == "plan":
            match = _PLAN_BLOCK.search(context)
            return self._result(match.group(0) if match else self.generate_plan(context))

        rng = self._rng(spec.kind, spec.key, spec.description, context)
        length = rng.randint(self.min_tokens, self.max_tokens)
        return self._result(" ".join(self._words(rng, length)))
