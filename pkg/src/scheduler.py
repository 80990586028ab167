"""Frontier scheduling over a Petri net: enabled set, fork/join firing and the round loop.

A transition is enabled when every input place holds a token and every
output place is empty. Tokens are read, never consumed; the empty-output
guard makes each transition fire once.
"""

import asyncio
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import structlog

from .kv_cache import RadixCache, SequenceHandle
from .models import (
    FiredRecord,
    Frontier,
    Marking,
    PetriNet,
    ProducedStep,
    RunResult,
    SemanticToken,
    StepRecord,
    StepSpec,
)
from .producers.base import StepProducer

logger = structlog.get_logger()


class SchedulerError(Exception):
    """Base exception for scheduler errors."""
    code = "SchedulerError"


class NotEnabledError(SchedulerError):
    """Raised when firing a transition outside the current frontier."""
    code = "NotEnabled"


class ProducerFailureError(SchedulerError):
    """Raised when a producer fails; the round publishes nothing."""
    code = "ProducerFailure"

    def __init__(self, trans_id: str, cause: BaseException):
        self.trans_id = trans_id
        self.cause = cause
        super().__init__(f"producer failed for {trans_id}: {cause}")


class DeadlockError(SchedulerError):
    """Raised when the frontier empties while transitions remain unfired."""
    code = "Deadlock"


class RoundOutcome(NamedTuple):
    marking: Marking
    fired: List[str]
    records: List[FiredRecord]


@dataclass
class _Firing:
    """Prepared state for one transition: context snapshot and its working handle."""

    trans_id: str
    history: Tuple[StepRecord, ...]
    context: str
    spec: StepSpec
    handle: Optional[SequenceHandle] = None
    produced: Optional[ProducedStep] = None


@dataclass
class _Group:
    """Enabled transitions sharing one pre-set, hence one merged context."""

    trans_ids: List[str]
    history: Tuple[StepRecord, ...]
    base: Optional[SequenceHandle] = None
    owned: bool = False
    firings: List[_Firing] = field(default_factory=list)


def compute_frontier(net: PetriNet, marking: Marking) -> Frontier:
    enabled = [
        trans_id
        for trans_id in net.transition_ids()
        if all(marking.is_marked(p) for p in net.transitions[trans_id].pre_set)
        and not any(marking.is_marked(q) for q in net.transitions[trans_id].post_set)
    ]
    groups: Dict[Tuple[str, ...], List[str]] = {}
    for trans_id in enabled:
        groups.setdefault(net.transitions[trans_id].pre_set, []).append(trans_id)
    return Frontier(
        enabled=enabled,
        fork_groups=sorted(groups.values()),
        join_set=[t for t in enabled if len(net.transitions[t].pre_set) >= 2],
    )


def join_order(net: PetriNet, places: Sequence[str]) -> List[str]:
    """Input places ordered by producing transition id, or by place id for initial tokens."""
    return sorted(places, key=lambda p: net.producer_of(p) or p)


def merge_histories(tokens: Sequence[SemanticToken]) -> Tuple[StepRecord, ...]:
    """Canonical join history: every record once, at its first occurrence in join order.

    A record shared by several inputs (the plan, or a common ancestor step
    reached along different paths) is kept where the earliest input lists it.
    Each input history lists a record's ancestors before it, so the merged
    history does as well.
    """
    seen: Set[str] = set()
    merged: List[StepRecord] = []
    for token in tokens:
        for record in token.history:
            if record.trans_id not in seen:
                seen.add(record.trans_id)
                merged.append(record)
    return tuple(merged)


def join_handle(tokens: Sequence[SemanticToken], cache: RadixCache) -> SequenceHandle:
    """Composite cache handle spelling ``merge_histories(tokens)``.

    Each record is taken from the handle of the input where it first occurs;
    adjacent records of the same handle become one range.
    """
    pieces: List[Tuple[SequenceHandle, int, int]] = []
    seen: Set[str] = set()
    for token in tokens:
        if token.handle is None:
            raise SchedulerError("join input carries no cache handle; bind the marking first")
        offset = 0
        for record in token.history:
            size = len(record.token_ids)
            if record.trans_id not in seen:
                seen.add(record.trans_id)
                if pieces and pieces[-1][0] is token.handle and pieces[-1][2] == offset:
                    pieces[-1] = (token.handle, pieces[-1][1], offset + size)
                elif size:
                    pieces.append((token.handle, offset, offset + size))
            offset += size
    return cache.compose(pieces)


def render_context(history: Sequence[StepRecord]) -> str:
    """Materialised text of a history, one record per paragraph."""
    return "\n\n".join(record.text for record in history if record.text)


def bind_cache(marking: Marking, cache: RadixCache) -> Marking:
    """Attach cache handles to tokens that have none."""
    by_place: Dict[str, Optional[SemanticToken]] = {}
    for place, token in marking.by_place.items():
        if token is not None and token.handle is None:
            handle = cache.append(cache.new_handle(), token.token_ids)
            token = token.model_copy(update={"handle": handle})
        by_place[place] = token
    return Marking(by_place=by_place, round=marking.round)


def _spec_for(net: PetriNet, trans_id: str) -> StepSpec:
    transition = net.transitions[trans_id]
    return StepSpec(
        kind="step",
        trans_id=trans_id,
        description=transition.label,
        input_places=list(transition.pre_set),
        output_places=list(transition.post_set),
    )


def _prepare(
    net: PetriNet,
    marking: Marking,
    trans_ids: Sequence[str],
    cache: Optional[RadixCache],
) -> List[_Group]:
    """Build one merged context per pre-set and fork it across the group."""
    by_pre_set: Dict[Tuple[str, ...], List[str]] = {}
    for trans_id in trans_ids:
        by_pre_set.setdefault(net.transitions[trans_id].pre_set, []).append(trans_id)

    groups: List[_Group] = []
    try:
        for pre_set, members in sorted(by_pre_set.items(), key=lambda item: item[1]):
            tokens = [marking.token(p) for p in join_order(net, pre_set)]
            inputs = [t for t in tokens if t is not None]
            group = _Group(trans_ids=members, history=merge_histories(inputs))
            groups.append(group)

            handles: List[Optional[SequenceHandle]] = [None] * len(members)
            if cache is not None:
                if any(t.handle is None for t in inputs):
                    raise SchedulerError(f"inputs of {members[0]} carry no cache handle; bind the marking first")
                if len(inputs) == 1:
                    group.base = inputs[0].handle
                else:
                    group.base = join_handle(inputs, cache)
                    group.owned = True
                handles = list(cache.fork(group.base, len(members)))

            context = render_context(group.history)
            for trans_id, handle in zip(members, handles):
                group.firings.append(
                    _Firing(
                        trans_id=trans_id,
                        history=group.history,
                        context=context,
                        spec=_spec_for(net, trans_id),
                        handle=handle,
                    )
                )
    except BaseException:
        _discard(groups, cache)
        raise
    return groups


def _discard(groups: Sequence[_Group], cache: Optional[RadixCache]) -> None:
    if cache is None:
        return
    for group in groups:
        for firing in group.firings:
            if firing.handle is not None and firing.handle.alive:
                cache.release(firing.handle)
        if group.owned and group.base is not None and group.base.alive:
            cache.release(group.base)


async def _produce_all(
    firings: Sequence[_Firing],
    producer: StepProducer,
    workers: Optional[int],
) -> None:
    semaphore = asyncio.Semaphore(workers) if workers else None

    async def _run(firing: _Firing) -> ProducedStep:
        if semaphore is None:
            return await producer.produce(firing.context, firing.spec)
        async with semaphore:
            return await producer.produce(firing.context, firing.spec)

    results = await asyncio.gather(*(_run(f) for f in firings), return_exceptions=True)
    failure: Optional[ProducerFailureError] = None
    for firing, result in zip(firings, results):
        if isinstance(result, BaseException):
            logger.error(f"Producer failed for {firing.trans_id}: {result}")
            if failure is None:
                failure = ProducerFailureError(firing.trans_id, result)
        else:
            firing.produced = result
    if failure is not None:
        raise failure


def _commit(
    net: PetriNet,
    marking: Marking,
    groups: Sequence[_Group],
    cache: Optional[RadixCache],
    round_index: int,
) -> Tuple[Dict[str, SemanticToken], List[FiredRecord]]:
    """Turn produced steps into output tokens, in ascending transition id."""
    updates: Dict[str, SemanticToken] = {}
    records: List[FiredRecord] = []
    firings = sorted((f for g in groups for f in g.firings), key=lambda f: f.trans_id)

    for firing in firings:
        assert firing.produced is not None
        produced = firing.produced
        record = StepRecord(trans_id=firing.trans_id, text=produced.text, token_ids=tuple(produced.token_ids))
        history = firing.history + (record,)
        post_set = net.transitions[firing.trans_id].post_set

        handles: List[Optional[SequenceHandle]] = [None] * len(post_set)
        if cache is not None and firing.handle is not None:
            extended = cache.append(firing.handle, produced.token_ids)
            handles = [extended] + (cache.fork(extended, len(post_set) - 1) if len(post_set) > 1 else [])
            firing.handle = None

        for place, handle in zip(post_set, handles):
            updates[place] = SemanticToken(history=history, handle=handle)

        start = sum(len(r.token_ids) for r in firing.history)
        records.append(
            FiredRecord(
                round=round_index,
                trans_id=firing.trans_id,
                input_places=list(net.transitions[firing.trans_id].pre_set),
                output_places=list(post_set),
                text=produced.text,
                produced_tokens=len(produced.token_ids),
                positions=(start, start + len(produced.token_ids)),
            )
        )

    if cache is not None:
        for group in groups:
            if group.owned and group.base is not None and group.base.alive:
                cache.release(group.base)
    return updates, records


async def fire(
    net: PetriNet,
    marking: Marking,
    trans_id: str,
    producer: StepProducer,
    cache: Optional[RadixCache] = None,
) -> Marking:
    """Fire a single enabled transition; the marking round does not advance."""
    if trans_id not in compute_frontier(net, marking).enabled:
        raise NotEnabledError(f"{trans_id} is not enabled at round {marking.round}")
    groups = _prepare(net, marking, [trans_id], cache)
    try:
        await _produce_all(groups[0].firings, producer, workers=None)
    except BaseException:
        _discard(groups, cache)
        raise
    updates, _ = _commit(net, marking, groups, cache, marking.round)
    return marking.with_tokens(updates)


async def step_round(
    net: PetriNet,
    marking: Marking,
    producer: StepProducer,
    cache: Optional[RadixCache] = None,
    workers: Optional[int] = None,
    serial: bool = False,
) -> RoundOutcome:
    """Fire the whole frontier and publish M_{k+1} at the round barrier.

    With ``serial`` only the smallest enabled transition fires. A producer
    failure aborts the round with no marking change.
    """
    frontier = compute_frontier(net, marking)
    if frontier.is_empty:
        return RoundOutcome(marking, [], [])

    to_fire = frontier.enabled[:1] if serial else frontier.enabled
    groups = _prepare(net, marking, to_fire, cache)
    try:
        await _produce_all([f for g in groups for f in g.firings], producer, workers)
    except BaseException:
        _discard(groups, cache)
        raise

    updates, records = _commit(net, marking, groups, cache, marking.round)
    logger.info(f"Round {marking.round} fired {', '.join(to_fire)}")
    return RoundOutcome(marking.with_tokens(updates, advance=True), list(to_fire), records)


async def run_to_completion(
    net: PetriNet,
    producer: StepProducer,
    cache: Optional[RadixCache] = None,
    workers: Optional[int] = None,
    serial: bool = False,
    marking: Optional[Marking] = None,
) -> RunResult:
    """Run rounds until the frontier is empty; every transition fires exactly once."""
    marking = marking if marking is not None else Marking.initial(net)
    if cache is not None:
        marking = bind_cache(marking, cache)

    rounds = 0
    fired_log: List[FiredRecord] = []
    while True:
        outcome = await step_round(net, marking, producer, cache=cache, workers=workers, serial=serial)
        if not outcome.fired:
            break
        marking = outcome.marking
        fired_log.extend(outcome.records)
        rounds += 1

    unfired = [
        t for t in net.transition_ids()
        if not all(marking.is_marked(q) for q in net.transitions[t].post_set)
    ]
    if unfired:
        raise DeadlockError(f"frontier empty at round {marking.round} with unfired {unfired}")

    logger.info(f"Run complete: {len(fired_log)} transitions in {rounds} rounds")
    return RunResult(marking=marking, rounds=rounds, fired_log=fired_log)
