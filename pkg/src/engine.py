"""Two-phase reasoning engine: linear planning, then frontier execution over the prefix cache.

Phase I streams producer output until ``</Plan>``, parses the plan and
instantiates the Petri net. Phase II runs scheduler rounds, forking the cache
for fork groups and composing branch handles at joins, then produces the
conclusion from the join of every terminal token.
``run_plan`` skips Phase I and executes a plan supplied by the caller.
"""

import asyncio
from contextlib import aclosing
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .graph import CycleDetectedError, InvalidGraphError, dag_to_petri, transition_id
from .kv_cache import RadixCache, SequenceHandle
from .models import (
    Marking,
    NodeRole,
    Outline,
    PetriNet,
    PlanDocument,
    ProducedStep,
    RunMetrics,
    RunReport,
    SemanticToken,
    StepRecord,
    StepSpec,
    TraceDocument,
    TraceStep,
    ValidationReport,
)
from .plan_format import (
    PlanFormatError,
    locate_plan,
    node_id,
    parse_plan,
    plan_to_dag,
    serialize_plan,
    serialize_trace,
    verify_syntax,
)
from .producers.base import StepProducer
from .scheduler import (
    ProducerFailureError,
    fire,
    join_handle,
    join_order,
    merge_histories,
    render_context,
    run_to_completion,
)
from .utils.text import normalize_newlines, tokenize

logger = structlog.get_logger()

PLAN_TRANS_ID = "plan"
CONCLUSION_TRANS_ID = "conclusion"
SPEEDUP_BIN_EDGES = np.round(np.arange(1.0, 5.25, 0.25), 2)


class EngineError(Exception):
    """Base exception for engine errors."""
    code = "EngineError"


class PlanParseError(EngineError):
    """Raised when Phase I output does not yield a usable plan."""
    code = "PlanParseFailure"

    def __init__(self, message: str, raw_text: str):
        self.raw_text = raw_text
        super().__init__(message)


class InfeasibleOrderError(EngineError):
    """Raised when a trace lists a step before one of its dependencies."""
    code = "InfeasibleOrder"


class InvalidTraceError(EngineError):
    """Raised when a trace fails syntax verification."""
    code = "InvalidTrace"

    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__("; ".join(str(v) for v in report.violations) or "invalid trace")


class PlanStreamDetector:
    """Detect ``</Plan>`` on a chunked stream, including tags split across chunks."""

    CLOSE_TAG = "</Plan>"

    def __init__(self) -> None:
        self._parts: List[str] = []
        self._tail = ""
        self.found = False
        self.discarded = 0

    def feed(self, chunk: str) -> bool:
        """Consume a chunk; returns True once the closing tag has been seen."""
        if self.found:
            self.discarded += len(chunk)
            return True
        window = self._tail + chunk
        index = window.find(self.CLOSE_TAG)
        if index >= 0:
            cut = index + len(self.CLOSE_TAG) - len(self._tail)
            self._parts.append(chunk[:cut])
            self.discarded += len(chunk) - cut
            self.found = True
        else:
            self._parts.append(chunk)
            self._tail = window[-(len(self.CLOSE_TAG) - 1):]
        return self.found

    @property
    def text(self) -> str:
        return "".join(self._parts)


class _OutlineProducer(StepProducer):
    """Adds outline index and description to the step specs the scheduler sends."""

    name = "outline"

    def __init__(self, inner: StepProducer, outlines: Dict[str, Outline]):
        super().__init__(chunk_size=inner.chunk_size)
        self.inner = inner
        self.outlines = outlines

    async def produce(self, context: str, spec: StepSpec) -> ProducedStep:
        outline = self.outlines.get(spec.trans_id or "")
        if outline is not None:
            spec = spec.model_copy(update={"index": outline.index, "description": outline.description})
        return await self.inner.produce(context, spec)


class _VerbatimProducer(StepProducer):
    """Returns recorded step texts; used to replay traces."""

    name = "verbatim"

    def __init__(self, texts: Dict[str, str]):
        super().__init__()
        self.texts = texts

    async def produce(self, context: str, spec: StepSpec) -> ProducedStep:
        return self._result(self.texts[spec.trans_id or ""])


def _split_preamble(raw: str) -> Optional[str]:
    raw = normalize_newlines(raw)
    preamble = raw[:locate_plan(raw)]
    if preamble.endswith("\n"):
        preamble = preamble[:-1]
    return preamble if preamble.strip() else None


def _seed_marking(net: PetriNet, plan_record: StepRecord, cache: Optional[RadixCache]) -> Marking:
    """Initial marking: every initial place holds the plan as its history."""
    initial = net.initial_places()
    handles: List[Optional[SequenceHandle]] = [None] * len(initial)
    if cache is not None and initial:
        plan_handle = cache.append(cache.new_handle(), plan_record.token_ids)
        handles = list(cache.fork(plan_handle, len(initial)))
        cache.release(plan_handle)
    by_place: Dict[str, Optional[SemanticToken]] = {p: None for p in net.places}
    for place, handle in zip(initial, handles):
        by_place[place] = SemanticToken(history=(plan_record,), handle=handle)
    return Marking(by_place=by_place, round=0)


def _join_tokens(
    tokens: Sequence[SemanticToken],
    cache: Optional[RadixCache],
) -> Tuple[Tuple[StepRecord, ...], Optional[SequenceHandle]]:
    """Merged history of ``tokens`` and, with a cache, a handle spelling it."""
    history = merge_histories(tokens)
    if cache is None or any(t.handle is None for t in tokens):
        return history, None
    if len(tokens) == 1:
        return history, cache.fork(tokens[0].handle, 1)[0]
    return history, join_handle(tokens, cache)


class ReasoningEngine:
    """Runs the plan/execute/conclude pipeline for one producer."""

    def __init__(
        self,
        producer: Optional[StepProducer] = None,
        single_conclusion: bool = True,
        workers: Optional[int] = 4,
    ):
        self.producer = producer
        self.single_conclusion = single_conclusion
        self.workers = workers

    @classmethod
    def from_settings(cls, settings: Any, producer: Optional[StepProducer] = None) -> "ReasoningEngine":
        return cls(producer, single_conclusion=settings.single_conclusion, workers=settings.workers)

    def _require_producer(self) -> StepProducer:
        if self.producer is None:
            raise EngineError("no step producer configured")
        return self.producer

    # -- Phase I ----------------------------------------------------------------

    async def plan(self, prompt: str) -> Tuple[str, PlanDocument]:
        """Stream linear output until ``</Plan>`` and parse the plan."""
        producer = self._require_producer()
        detector = PlanStreamDetector()
        try:
            async with aclosing(producer.stream_plan(prompt)) as stream:
                async for chunk in stream:
                    if detector.feed(chunk):
                        break
        except Exception as e:
            logger.error(f"Producer failed during planning: {e}")
            raise ProducerFailureError(PLAN_TRANS_ID, e) from e

        raw = detector.text
        if not detector.found:
            raise PlanParseError("planning output ended without </Plan>", raw)
        if detector.discarded:
            logger.warning(f"Discarded {detector.discarded} chars after </Plan>")
        logger.info(f"Detected </Plan> after {len(raw)} chars")

        try:
            plan = parse_plan(raw)
        except (PlanFormatError, CycleDetectedError) as e:
            raise PlanParseError(f"cannot parse plan: {e}", raw) from e
        return raw, plan

    # -- Phase II -----------------------------------------------------------------

    async def run_inference(self, prompt: str, serial: bool = False) -> RunReport:
        """Plan, execute the frontier rounds and produce the conclusion."""
        raw, plan = await self.plan(prompt)
        return await self._execute(raw, plan, serial=serial)

    async def run_plan(self, plan: PlanDocument, prompt: str = "", serial: bool = False) -> RunReport:
        """Execute a given plan directly, without the planning phase.

        The prompt becomes the trace preamble. The plan is not decoded and
        contributes no tokens to the run metrics.
        """
        head = normalize_newlines(prompt).rstrip("\n")
        raw = (head + "\n" if head.strip() else "") + serialize_plan(plan)
        logger.info(f"Running given plan with {len(plan.outlines)} outlines")
        return await self._execute(raw, plan, serial=serial, planned=False)

    async def _execute(self, raw: str, plan: PlanDocument, serial: bool = False, planned: bool = True) -> RunReport:
        try:
            dag = plan_to_dag(plan, single_conclusion=self.single_conclusion)
        except InvalidGraphError as e:
            raise PlanParseError(f"plan does not form a valid DAG: {e}", raw) from e
        net = dag_to_petri(dag)
        logger.info(f"Instantiated net with {len(net.places)} places and {len(net.transitions)} transitions")

        cache = RadixCache()
        plan_record = StepRecord(trans_id=PLAN_TRANS_ID, text=raw, token_ids=tuple(tokenize(raw)))
        marking = _seed_marking(net, plan_record, cache)

        outlines = {transition_id(node_id(o.index)): o for o in plan.outlines}
        producer = self._require_producer()
        adapter = _OutlineProducer(producer, outlines)
        result = await run_to_completion(
            net,
            adapter,
            cache=cache,
            workers=None if serial else self.workers,
            serial=serial,
            marking=marking,
        )

        terminal = join_order(net, dag.nodes_with_role(NodeRole.CONCLUSION))
        tokens = [result.marking.token(p) for p in terminal]
        history, handle = _join_tokens([t for t in tokens if t is not None], cache)
        spec = StepSpec(
            kind="conclusion",
            trans_id=CONCLUSION_TRANS_ID,
            description=plan.goal or "conclusion",
            input_places=terminal,
        )
        try:
            conclusion = await producer.produce(render_context(history), spec)
        except Exception as e:
            logger.error(f"Producer failed for conclusion: {e}")
            raise ProducerFailureError(CONCLUSION_TRANS_ID, e) from e
        if handle is not None:
            cache.append(handle, conclusion.token_ids)

        steps = []
        for outline in plan.outlines:
            token = result.marking.token(node_id(outline.index))
            steps.append(TraceStep(index=outline.index, text=token.history[-1].text.strip() if token else ""))
        doc = TraceDocument(
            plan=plan,
            steps=steps,
            conclusion=conclusion.text.strip(),
            preamble=_split_preamble(raw),
        )
        report = verify_syntax(doc, single_conclusion=self.single_conclusion)
        if not report.ok:
            raise InvalidTraceError(report)

        metrics = RunMetrics.from_rounds(
            plan_tokens=len(plan_record.token_ids) if planned else 0,
            round_tokens=result.round_tokens(),
            conclusion_tokens=len(conclusion.token_ids),
        )
        stats = cache.stats()
        logger.info(f"Run finished: {metrics.rounds} rounds, speedup {metrics.speedup:.2f}")
        return RunReport(
            trace=doc,
            trace_text=serialize_trace(doc),
            metrics=metrics,
            final_marking=result.marking,
            cache_stats=stats.to_dict(),
            log=result.fired_log,
        )

    async def serial_reference(self, prompt: str) -> RunReport:
        """Same plan, one transition per round in ascending id order."""
        return await self.run_inference(prompt, serial=True)

    async def replay_trace(self, doc: TraceDocument) -> Tuple[Marking, RunMetrics]:
        """Re-execute a trace with its recorded texts and measure it."""
        report = verify_syntax(doc, single_conclusion=self.single_conclusion)
        blocking = ValidationReport(violations=[v for v in report.violations if v.code != "OrderViolation"])
        if not blocking.ok:
            raise InvalidTraceError(blocking)

        dag = plan_to_dag(doc.plan, single_conclusion=self.single_conclusion)
        net = dag_to_petri(dag)
        head = (doc.preamble + "\n" if doc.preamble is not None else "") + serialize_plan(doc.plan)
        plan_record = StepRecord(trans_id=PLAN_TRANS_ID, text=head, token_ids=tuple(tokenize(head)))
        producer = _VerbatimProducer({transition_id(node_id(s.index)): s.text for s in doc.steps})

        # Document order must be a valid sequential firing order.
        marking = _seed_marking(net, plan_record, None)
        for step in doc.steps:
            trans_id = transition_id(node_id(step.index))
            outline = doc.plan.outline(step.index)
            missing = [d for d in (outline.deps if outline else []) if d > 0 and not marking.is_marked(node_id(d))]
            if missing:
                raise InfeasibleOrderError(f"step {step.index} appears before its dependencies {missing}")
            marking = await fire(net, marking, trans_id, producer)

        result = await run_to_completion(net, producer, workers=self.workers, marking=_seed_marking(net, plan_record, None))
        metrics = RunMetrics.from_rounds(
            plan_tokens=len(plan_record.token_ids),
            round_tokens=result.round_tokens(),
            conclusion_tokens=len(tokenize(doc.conclusion)),
        )
        return result.marking, metrics


def summarize_runs(metrics: Sequence[RunMetrics]) -> Dict[str, Any]:
    """Aggregate speedups over many runs with a fixed-bin histogram (1.0 to 5.0, step 0.25)."""
    if not metrics:
        return {"runs": 0, "meanSpeedup": 0.0, "minSpeedup": 0.0, "maxSpeedup": 0.0, "meanRounds": 0.0,
                "histogram": {"edges": SPEEDUP_BIN_EDGES.tolist(), "counts": [0] * (len(SPEEDUP_BIN_EDGES) - 1)}}
    speedups = np.array([m.speedup for m in metrics], dtype=float)
    rounds = np.array([m.rounds for m in metrics], dtype=float)
    counts, _ = np.histogram(np.clip(speedups, SPEEDUP_BIN_EDGES[0], SPEEDUP_BIN_EDGES[-1]), bins=SPEEDUP_BIN_EDGES)
    return {
        "runs": len(metrics),
        "meanSpeedup": round(float(speedups.mean()), 6),
        "minSpeedup": round(float(speedups.min()), 6),
        "maxSpeedup": round(float(speedups.max()), 6),
        "meanRounds": round(float(rounds.mean()), 6),
        "histogram": {"edges": SPEEDUP_BIN_EDGES.tolist(), "counts": [int(c) for c in counts]},
    }


async def run_many(engine: ReasoningEngine, prompts: Sequence[str]) -> List[RunReport]:
    """Independent runs executed concurrently; each gets its own cache."""
    return list(await asyncio.gather(*(engine.run_inference(p) for p in prompts)))
