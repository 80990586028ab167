"""Chain compiler: parse ``N: A->B->C`` lines, merge them into a DAG, compile to a plan."""

import re
from typing import Dict, List, Optional, Sequence

import networkx as nx
import structlog

from .graph import (
    CycleDetectedError,
    InvalidGraphError,
    depth_edges,
    find_cycles,
    node_layers,
    validate_dag,
)
from .models import (
    CurationResult,
    MergeStats,
    NodeRole,
    Outline,
    PlanDocument,
    ReasoningChain,
    ReasoningDag,
    ReasoningNode,
)
from .utils.text import clean_text, normalize_newlines

logger = structlog.get_logger()

DEFAULT_CHAIN_CAP = 10
DELIMITER = "->"

_LINE_PATTERN = re.compile(r"^\s*(\d+)\s*:(.*)$")


class ChainFormatError(Exception):
    """Base exception for chain file errors."""
    code = "ChainFormatError"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class BadLineError(ChainFormatError):
    code = "BadLine"


class EmptyEntityError(ChainFormatError):
    code = "EmptyEntity"


class RepeatedEntityError(ChainFormatError):
    code = "RepeatedEntity"


def parse_chains(text: str, strict: bool = True) -> List[ReasoningChain]:
    """Parse chains in line order, keeping indices as written.

    In strict mode an immediately repeated entity rejects the line; lenient
    mode collapses the repetition.
    """
    chains: List[ReasoningChain] = []
    for line_no, raw in enumerate(normalize_newlines(text).split("\n"), start=1):
        if not raw.strip():
            continue
        match = _LINE_PATTERN.match(raw)
        if not match:
            raise BadLineError(f"expected 'N: A->B->...', got {raw.strip()!r}", line_no)
        index = int(match.group(1))
        if index < 1:
            raise BadLineError(f"chain index must be positive, got {index}", line_no)

        entities = [e.strip() for e in match.group(2).split(DELIMITER)]
        if any(not e for e in entities):
            raise EmptyEntityError("empty entity", line_no)

        collapsed = [entities[0]]
        for entity in entities[1:]:
            if entity == collapsed[-1]:
                if strict:
                    raise RepeatedEntityError(f"entity {entity!r} repeated immediately", line_no)
                continue
            collapsed.append(entity)
        if len(collapsed) < 2:
            raise BadLineError("a chain needs at least two distinct entities", line_no)

        chains.append(ReasoningChain(index=index, entities=collapsed, line=line_no))
    return chains


def render_chains(chains: Sequence[ReasoningChain]) -> str:
    """Canonical chain file text."""
    return "".join(f"{chain.render()}\n" for chain in chains)


def dedup_chains(chains: Sequence[ReasoningChain], cap: int = DEFAULT_CHAIN_CAP) -> List[ReasoningChain]:
    """Drop textual duplicates keeping the first, cap the count (0 = unlimited), reindex from 1."""
    seen = set()
    kept: List[ReasoningChain] = []
    for chain in chains:
        key = tuple(chain.entities)
        if key in seen:
            continue
        seen.add(key)
        kept.append(chain)
        if cap and len(kept) >= cap:
            break

    dropped = len(chains) - len(kept)
    if dropped:
        logger.debug(f"Dropped {dropped} duplicate or capped chains, kept {len(kept)}")
    return [
        chain.model_copy(update={"index": position})
        for position, chain in enumerate(kept, start=1)
    ]


def merge_chains(chains: Sequence[ReasoningChain]) -> ReasoningDag:
    """Union chains into one DAG keyed by exact entity label; roles follow degree."""
    if not chains:
        raise ChainFormatError("no chains to merge")

    graph = nx.DiGraph()
    for chain in chains:
        graph.add_nodes_from(chain.entities)
        graph.add_edges_from(chain.pairs())

    cycles = find_cycles(graph)
    if cycles:
        members = set(cycles[0])
        involved = [c for c in chains if any(u in members and v in members for u, v in c.pairs())]
        raise CycleDetectedError(
            cycles[0],
            chains=[c.index for c in involved],
            lines=[c.line for c in involved if c.line is not None],
        )

    nodes: Dict[str, ReasoningNode] = {}
    for entity in sorted(graph.nodes):
        if graph.in_degree(entity) == 0:
            role = NodeRole.SOURCE
        elif graph.out_degree(entity) == 0:
            role = NodeRole.CONCLUSION
        else:
            role = NodeRole.HYPOTHESIS
        nodes[entity] = ReasoningNode(label=entity, role=role)
    return ReasoningDag(nodes=nodes, edges=list(graph.edges))


def merge_stats(chains: Sequence[ReasoningChain], dag: ReasoningDag) -> MergeStats:
    """Counts for the compile report; an entity is shared when two or more chains name it."""
    occurrences: Dict[str, int] = {}
    for chain in chains:
        for entity in set(chain.entities):
            occurrences[entity] = occurrences.get(entity, 0) + 1
    depth, edges = depth_edges(dag)
    return MergeStats(
        chains=len(chains),
        nodes=len(dag.nodes),
        edges=edges,
        depth=depth,
        shared_nodes=sum(1 for count in occurrences.values() if count >= 2),
    )


def compile_to_plan(dag: ReasoningDag, goal: str = "") -> PlanDocument:
    """One outline per non-source node in layer order, lexicographic within a layer.

    A node fed by Source nodes only gets ``deps=[]``; one fed by both Source
    nodes and other steps lists dependency ``0`` alongside the step indices.
    """
    report = validate_dag(dag)
    if not report.ok:
        raise InvalidGraphError(report)

    layers = node_layers(dag)
    sources = set(dag.nodes_with_role(NodeRole.SOURCE))
    ordered = sorted((n for n in dag.node_ids() if n not in sources), key=lambda n: (layers[n], n))
    index_of = {node: i for i, node in enumerate(ordered, start=1)}

    outlines: List[Outline] = []
    for node in ordered:
        preds = dag.predecessors(node)
        deps = sorted(index_of[p] for p in preds if p in index_of)
        if deps and any(p in sources for p in preds):
            deps = [0] + deps
        labels = ",".join(dag.nodes[p].label or p for p in preds)
        description = clean_text(f"{labels}{DELIMITER}{dag.nodes[node].label or node}")
        outlines.append(Outline(index=index_of[node], deps=deps, description=description))
    return PlanDocument(goal=clean_text(goal), outlines=outlines)


def curate(
    text: str,
    cap: int = DEFAULT_CHAIN_CAP,
    strict: bool = True,
    goal: str = "",
) -> CurationResult:
    """Parse, de-duplicate, merge and compile a chain file."""
    parsed = parse_chains(text, strict=strict)
    if not parsed:
        raise ChainFormatError("chain file contains no chains")
    chains = dedup_chains(parsed, cap=cap)
    dag = merge_chains(chains)
    plan = compile_to_plan(dag, goal=goal)
    stats = merge_stats(chains, dag)
    logger.info(
        f"Compiled {stats.chains} chains into {stats.nodes} nodes, {stats.edges} edges, "
        f"depth {stats.depth} and {len(plan.outlines)} outlines"
    )
    return CurationResult(chains=chains, dag=dag, plan=plan, stats=stats)
