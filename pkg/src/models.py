"""Pydantic models for reasoning graphs, Petri nets, trace documents and run data."""

from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import networkx as nx
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)
from pydantic.alias_generators import to_camel

from .kv_cache import SequenceHandle


class NodeRole(str, Enum):
    """Role of a node in the reasoning DAG."""
    SOURCE = "source"
    HYPOTHESIS = "hypothesis"
    CONCLUSION = "conclusion"


class MaskMode(str, Enum):
    """Visibility rule used when building attention masks."""
    LAYER = "layer"
    ANCESTRY = "ancestry"
    CAUSAL = "causal"


class SegmentKind(str, Enum):
    """Kinds of token spans in a flattened training sequence."""
    PREAMBLE = "preamble"
    STEP = "step"
    CONCLUSION = "conclusion"


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class Violation(BaseModel):
    """A single failed check, addressed by node, edge, index or token pair."""

    code: str = Field(..., min_length=1)
    location: str = ""
    message: str = ""

    def __str__(self) -> str:
        return f"{self.code}: {self.message}" if self.message else self.code


class ValidationReport(BaseModel):
    """Outcome of a validation pass. Validators report, they do not raise."""

    violations: List[Violation] = Field(default_factory=list)

    @computed_field
    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code: str, location: str = "", message: str = "") -> None:
        self.violations.append(Violation(code=code, location=location, message=message))

    def extend(self, other: "ValidationReport", prefix: str = "") -> None:
        for violation in other.violations:
            location = f"{prefix}{violation.location}" if prefix else violation.location
            self.violations.append(violation.model_copy(update={"location": location}))

    def codes(self) -> List[str]:
        return [v.code for v in self.violations]

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


# ---------------------------------------------------------------------------
# Reasoning DAG
# ---------------------------------------------------------------------------


class ReasoningNode(BaseModel):
    """A typed DAG node."""

    model_config = ConfigDict(frozen=True)

    label: str = ""
    role: NodeRole


class ReasoningDag(BaseModel):
    """Logical reasoning graph G=(V, E).

    Construction does not validate structure; use ``graph.validate_dag`` for that.
    Edges are kept as a sorted, de-duplicated list.
    """

    model_config = ConfigDict(frozen=True)

    nodes: Dict[str, ReasoningNode] = Field(default_factory=dict)
    edges: List[Tuple[str, str]] = Field(default_factory=list)

    @field_validator("edges")
    @classmethod
    def normalize_edges(cls, v: List[Tuple[str, str]]) -> List[Tuple[str, str]]:
        return sorted({(str(u), str(w)) for u, w in v})

    def node_ids(self) -> List[str]:
        return sorted(self.nodes)

    def predecessors(self, node_id: str) -> List[str]:
        return sorted(u for u, v in self.edges if v == node_id)

    def successors(self, node_id: str) -> List[str]:
        return sorted(v for u, v in self.edges if u == node_id)

    def in_degree(self, node_id: str) -> int:
        return sum(1 for _, v in self.edges if v == node_id)

    def out_degree(self, node_id: str) -> int:
        return sum(1 for u, _ in self.edges if u == node_id)

    def sources(self) -> List[str]:
        """Nodes with in-degree 0."""
        targets = {v for _, v in self.edges}
        return [n for n in self.node_ids() if n not in targets]

    def sinks(self) -> List[str]:
        """Nodes with out-degree 0."""
        origins = {u for u, _ in self.edges}
        return [n for n in self.node_ids() if n not in origins]

    def nodes_with_role(self, role: NodeRole) -> List[str]:
        return [n for n in self.node_ids() if self.nodes[n].role == role]

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        for node_id in self.node_ids():
            node = self.nodes[node_id]
            graph.add_node(node_id, label=node.label, role=node.role.value)
        graph.add_edges_from(self.edges)
        return graph


# ---------------------------------------------------------------------------
# Petri net and colored tokens
# ---------------------------------------------------------------------------


class StepRecord(BaseModel):
    """One entry of a token's textual history, tagged with its provenance."""

    model_config = ConfigDict(frozen=True)

    trans_id: str
    text: str = ""
    token_ids: Tuple[int, ...] = ()


class SemanticToken(BaseModel):
    """Colored token (h, k): textual history plus prefix-cache references."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    history: Tuple[StepRecord, ...] = ()
    handle: Optional[SequenceHandle] = None

    @property
    def token_ids(self) -> List[int]:
        ids: List[int] = []
        for record in self.history:
            ids.extend(record.token_ids)
        return ids

    @property
    def cache_refs(self) -> List[int]:
        """Radix node ids referenced by this token, in logical order."""
        return self.handle.node_ids() if self.handle is not None else []

    def trans_ids(self) -> List[str]:
        return [record.trans_id for record in self.history]


class Transition(BaseModel):
    """A reasoning step consuming pre-set places and producing post-set places."""

    model_config = ConfigDict(frozen=True)

    pre_set: Tuple[str, ...]
    post_set: Tuple[str, ...]
    label: str = ""

    @field_validator("pre_set", "post_set")
    @classmethod
    def normalize_places(cls, v: Sequence[str]) -> Tuple[str, ...]:
        places = tuple(sorted(set(v)))
        if not places:
            raise ValueError("pre_set and post_set must be non-empty")
        return places

    @model_validator(mode="after")
    def check_disjoint(self) -> "Transition":
        overlap = set(self.pre_set) & set(self.post_set)
        if overlap:
            raise ValueError(f"pre_set and post_set overlap on {sorted(overlap)}")
        return self


class PetriNet(BaseModel):
    """Executable net N=(P, T, F, M0)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    places: Tuple[str, ...]
    transitions: Dict[str, Transition]
    initial_marking: Dict[str, Optional[SemanticToken]] = Field(default_factory=dict)

    @field_validator("places")
    @classmethod
    def normalize_place_ids(cls, v: Sequence[str]) -> Tuple[str, ...]:
        return tuple(sorted(set(v)))

    @model_validator(mode="after")
    def check_structure(self) -> "PetriNet":
        known = set(self.places)
        producers: Dict[str, str] = {}
        graph = nx.DiGraph()
        for trans_id in sorted(self.transitions):
            transition = self.transitions[trans_id]
            unknown = (set(transition.pre_set) | set(transition.post_set)) - known
            if unknown:
                raise ValueError(f"{trans_id} references unknown places {sorted(unknown)}")
            for place in transition.post_set:
                if place in producers:
                    raise ValueError(
                        f"place {place} produced by both {producers[place]} and {trans_id}"
                    )
                producers[place] = trans_id
            for place in transition.pre_set:
                graph.add_edge(f"p:{place}", f"t:{trans_id}")
            for place in transition.post_set:
                graph.add_edge(f"t:{trans_id}", f"p:{place}")
        if not nx.is_directed_acyclic_graph(graph):
            raise ValueError("transition graph contains a cycle")

        unknown_marked = set(self.initial_marking) - known
        if unknown_marked:
            raise ValueError(f"initial marking names unknown places {sorted(unknown_marked)}")
        for place in self.places:
            self.initial_marking.setdefault(place, None)
            marked = self.initial_marking[place] is not None
            if marked == (place in producers):
                state = "marked" if marked else "empty"
                raise ValueError(f"place {place} is {state} in the initial marking")
        return self

    @property
    def arcs(self) -> List[Tuple[str, str]]:
        """Flow relation F as (from, to) pairs over place and transition ids."""
        flow: List[Tuple[str, str]] = []
        for trans_id in self.transition_ids():
            transition = self.transitions[trans_id]
            flow.extend((place, trans_id) for place in transition.pre_set)
            flow.extend((trans_id, place) for place in transition.post_set)
        return flow

    def transition_ids(self) -> List[str]:
        return sorted(self.transitions)

    def producer_of(self, place: str) -> Optional[str]:
        for trans_id in self.transition_ids():
            if place in self.transitions[trans_id].post_set:
                return trans_id
        return None

    def consumers_of(self, place: str) -> List[str]:
        return [t for t in self.transition_ids() if place in self.transitions[t].pre_set]

    def initial_places(self) -> List[str]:
        return [p for p in self.places if self.initial_marking.get(p) is not None]


class Marking(BaseModel):
    """Place to token assignment at scheduling round k."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    by_place: Dict[str, Optional[SemanticToken]]
    round: int = Field(0, ge=0)

    @classmethod
    def initial(cls, net: PetriNet) -> "Marking":
        return cls(by_place={p: net.initial_marking.get(p) for p in net.places}, round=0)

    def is_marked(self, place: str) -> bool:
        return self.by_place.get(place) is not None

    def token(self, place: str) -> Optional[SemanticToken]:
        return self.by_place.get(place)

    def marked_places(self) -> List[str]:
        return sorted(p for p, token in self.by_place.items() if token is not None)

    def with_tokens(self, updates: Dict[str, SemanticToken], advance: bool = False) -> "Marking":
        """Return a new marking with ``updates`` placed. Marked places stay marked."""
        by_place = dict(self.by_place)
        for place, token in updates.items():
            if place not in by_place:
                raise KeyError(f"unknown place {place}")
            if by_place[place] is not None:
                raise ValueError(f"place {place} is already marked")
            by_place[place] = token
        return Marking(by_place=by_place, round=self.round + 1 if advance else self.round)


class Frontier(BaseModel):
    """Enabled transitions at one round, classified into fork groups and joins."""

    enabled: List[str] = Field(default_factory=list)
    fork_groups: List[List[str]] = Field(default_factory=list)
    join_set: List[str] = Field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.enabled


# ---------------------------------------------------------------------------
# Plan / trace documents
# ---------------------------------------------------------------------------


class Outline(BaseModel):
    """One planned step with its dependency list."""

    index: int
    deps: List[int] = Field(default_factory=list)
    description: str = ""

    def deps_attr(self) -> str:
        return ",".join(str(d) for d in self.deps)


class PlanDocument(BaseModel):
    """Contents of a ``<Plan>`` block."""

    goal: str = ""
    outlines: List[Outline] = Field(default_factory=list)

    def indices(self) -> List[int]:
        return [o.index for o in self.outlines]

    def outline(self, index: int) -> Optional[Outline]:
        for outline in self.outlines:
            if outline.index == index:
                return outline
        return None


class TraceStep(BaseModel):
    """Reasoning text generated for one outline."""

    index: int
    text: str = ""


class TraceDocument(BaseModel):
    """A full Plan / Execution / Conclusion trace.

    The model itself is permissive so that faulty documents can be represented
    and reported on by ``plan_format.verify_syntax``.
    """

    plan: PlanDocument = Field(default_factory=PlanDocument)
    steps: List[TraceStep] = Field(default_factory=list)
    conclusion: str = ""
    preamble: Optional[str] = None

    def step(self, index: int) -> Optional[TraceStep]:
        for step in self.steps:
            if step.index == index:
                return step
        return None


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


class ReasoningChain(BaseModel):
    """An indexed linear chain ``N: A->B->C``."""

    index: int = Field(..., ge=1)
    entities: List[str] = Field(..., min_length=2)
    line: Optional[int] = Field(None, description="Source line number, when parsed from text")

    @field_validator("entities")
    @classmethod
    def check_entities(cls, v: List[str]) -> List[str]:
        if any(not e or e != e.strip() for e in v):
            raise ValueError("entities must be non-empty trimmed strings")
        for left, right in zip(v, v[1:]):
            if left == right:
                raise ValueError(f"immediate repetition of entity {left!r}")
        return v

    @property
    def text(self) -> str:
        return "->".join(self.entities)

    def render(self) -> str:
        return f"{self.index}: {self.text}"

    def pairs(self) -> List[Tuple[str, str]]:
        return list(zip(self.entities, self.entities[1:]))


class MergeStats(BaseModel):
    """Statistics reported after merging chains into a DAG."""

    chains: int = Field(0, ge=0)
    nodes: int = Field(0, ge=0)
    edges: int = Field(0, ge=0)
    depth: int = Field(0, ge=0)
    shared_nodes: int = Field(0, ge=0, description="Entities appearing in two or more chains")


class CurationResult(BaseModel):
    """Output of the deterministic chain curation pipeline."""

    chains: List[ReasoningChain] = Field(default_factory=list)
    dag: ReasoningDag
    plan: PlanDocument
    stats: MergeStats


# ---------------------------------------------------------------------------
# Producers and scheduling records
# ---------------------------------------------------------------------------


class StepSpec(BaseModel):
    """What a producer is asked to generate."""

    kind: Literal["plan", "step", "conclusion"] = "step"
    trans_id: Optional[str] = None
    index: Optional[int] = None
    description: str = ""
    input_places: List[str] = Field(default_factory=list)
    output_places: List[str] = Field(default_factory=list)

    @property
    def key(self) -> str:
        return self.trans_id or self.kind


class ProducedStep(BaseModel):
    """Producer output: the text and its token ids."""

    text: str
    token_ids: List[int] = Field(default_factory=list)


class FiredRecord(BaseModel):
    """One line of the structured run log."""

    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True)

    round: int = Field(..., ge=0)
    trans_id: str
    input_places: List[str] = Field(default_factory=list)
    output_places: List[str] = Field(default_factory=list)
    text: str = ""
    produced_tokens: int = Field(0, ge=0)
    positions: Tuple[int, int] = (0, 0)

    @computed_field(alias="producedChars")
    @property
    def produced_chars(self) -> int:
        return len(self.text)

    def to_log_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True, exclude={"text"})


class RunResult(BaseModel):
    """Outcome of ``scheduler.run_to_completion``."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    marking: Marking
    rounds: int = Field(0, ge=0)
    fired_log: List[FiredRecord] = Field(default_factory=list)

    def round_tokens(self) -> List[List[int]]:
        """Produced token counts grouped per round."""
        grouped: List[List[int]] = [[] for _ in range(self.rounds)]
        for record in self.fired_log:
            grouped[record.round].append(record.produced_tokens)
        return grouped


class RunMetrics(BaseModel):
    """Token-count cost model: serial cost N against critical-path cost."""

    plan_tokens: int = Field(0, ge=0)
    step_tokens: int = Field(0, ge=0)
    conclusion_tokens: int = Field(0, ge=0)
    per_round_critical_tokens: List[int] = Field(default_factory=list)
    transitions: int = Field(0, ge=0)

    @classmethod
    def from_rounds(
        cls,
        plan_tokens: int,
        round_tokens: Sequence[Sequence[int]],
        conclusion_tokens: int,
    ) -> "RunMetrics":
        return cls(
            plan_tokens=plan_tokens,
            step_tokens=sum(sum(r) for r in round_tokens),
            conclusion_tokens=conclusion_tokens,
            per_round_critical_tokens=[max(r) if r else 0 for r in round_tokens],
            transitions=sum(len(r) for r in round_tokens),
        )

    @computed_field
    @property
    def rounds(self) -> int:
        return len(self.per_round_critical_tokens)

    @computed_field
    @property
    def total_tokens(self) -> int:
        return self.plan_tokens + self.step_tokens + self.conclusion_tokens

    @computed_field
    @property
    def serial_cost(self) -> int:
        return self.total_tokens

    @computed_field
    @property
    def parallel_cost(self) -> int:
        return self.plan_tokens + sum(self.per_round_critical_tokens) + self.conclusion_tokens

    @computed_field
    @property
    def speedup(self) -> float:
        if self.parallel_cost == 0:
            return 1.0
        return self.serial_cost / self.parallel_cost

    def to_dict(self) -> Dict[str, Any]:
        return {
            "planTokens": self.plan_tokens,
            "stepTokens": self.step_tokens,
            "conclusionTokens": self.conclusion_tokens,
            "perRoundCriticalTokens": list(self.per_round_critical_tokens),
            "transitions": self.transitions,
            "rounds": self.rounds,
            "totalTokens": self.total_tokens,
            "serialCost": self.serial_cost,
            "parallelCost": self.parallel_cost,
            "speedup": round(self.speedup, 6),
        }


class RunReport(BaseModel):
    """Everything a run emits: the trace, metrics, cache accounting and log."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    trace: TraceDocument
    trace_text: str
    metrics: RunMetrics
    final_marking: Optional[Marking] = None
    cache_stats: Dict[str, int] = Field(default_factory=dict)
    log: List[FiredRecord] = Field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trace": self.trace_text,
            "metrics": self.metrics.to_dict(),
            "cacheStats": dict(self.cache_stats),
            "log": [record.to_log_dict() for record in self.log],
        }


# ---------------------------------------------------------------------------
# Attention layouts
# ---------------------------------------------------------------------------


class Segment(BaseModel):
    """A contiguous token range [start, end) belonging to one step."""

    step_id: str
    kind: SegmentKind = SegmentKind.STEP
    layer: int
    start: int = Field(..., ge=0)
    end: int = Field(..., ge=0)

    @property
    def length(self) -> int:
        return self.end - self.start


class SegmentLayout(BaseModel):
    """Token-span segmentation of a flattened trace into layers and steps."""

    segments: List[Segment] = Field(default_factory=list)
    deps: Dict[str, List[str]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_coverage(self) -> "SegmentLayout":
        cursor = 0
        for segment in self.segments:
            if segment.start != cursor or segment.end < segment.start:
                raise ValueError(
                    f"segment {segment.step_id} covers [{segment.start},{segment.end}), expected start {cursor}"
                )
            cursor = segment.end
        return self

    @property
    def length(self) -> int:
        return self.segments[-1].end if self.segments else 0

    def step_segments(self) -> List[Segment]:
        return [s for s in self.segments if s.kind == SegmentKind.STEP]

    def segment(self, step_id: str) -> Optional[Segment]:
        for segment in self.segments:
            if segment.step_id == step_id:
                return segment
        return None


# Type aliases for common use cases
Edge = Tuple[str, str]
ChainList = List[ReasoningChain]
