"""Reasoning DAG validation and compilation into an executable Petri net."""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import structlog

from .models import (
    Edge,
    NodeRole,
    PetriNet,
    ReasoningDag,
    ReasoningNode,
    SemanticToken,
    Transition,
    ValidationReport,
)

logger = structlog.get_logger()

SOURCE_NODE = "source"


class GraphError(Exception):
    """Base exception for graph errors."""
    code = "GraphError"


class InvalidGraphError(GraphError):
    """Raised when an operation requires a valid DAG and validation failed."""
    code = "InvalidGraph"

    def __init__(self, report: ValidationReport):
        self.report = report
        details = "; ".join(str(v) for v in report.violations) or "invalid graph"
        super().__init__(details)


class CycleDetectedError(GraphError):
    """Raised when a graph that must be acyclic contains a cycle."""
    code = "CycleDetected"

    def __init__(
        self,
        nodes: Sequence[str],
        chains: Optional[Sequence[int]] = None,
        lines: Optional[Sequence[int]] = None,
    ):
        self.nodes = sorted(nodes)
        self.chains = sorted(chains) if chains else []
        self.lines = sorted(lines) if lines else []
        message = f"cycle {format_node_set(self.nodes)}"
        if self.chains:
            message += f" (chains {', '.join(str(c) for c in self.chains)})"
        if self.lines:
            message += f" (lines {', '.join(str(n) for n in self.lines)})"
        super().__init__(message)


def format_node_set(nodes: Iterable[str]) -> str:
    """Sorted ids in braces, as used in cycle reports."""
    return "{" + ",".join(sorted(nodes)) + "}"


def transition_id(node_id: str) -> str:
    """Deterministic transition id for the transition producing ``node_id``."""
    return f"t:{node_id}"


def find_cycles(graph: nx.DiGraph) -> List[List[str]]:
    """Node sets of every cyclic strongly connected component, sorted."""
    cycles = []
    for component in nx.strongly_connected_components(graph):
        members = sorted(component)
        if len(members) > 1 or graph.has_edge(members[0], members[0]):
            cycles.append(members)
    return sorted(cycles)


def validate_dag(dag: ReasoningDag) -> ValidationReport:
    """Check acyclicity, role constraints and Source-to-Conclusion reachability."""
    report = ValidationReport()
    known = set(dag.nodes)

    for u, v in dag.edges:
        for endpoint in (u, v):
            if endpoint not in known:
                report.add("UnknownNode", f"{u}->{v}", f"edge endpoint {endpoint} is not a node")

    graph = nx.DiGraph()
    graph.add_nodes_from(dag.node_ids())
    graph.add_edges_from((u, v) for u, v in dag.edges if u in known and v in known)

    for members in find_cycles(graph):
        report.add("CycleDetected", ",".join(members), f"cycle {format_node_set(members)}")

    for node_id in dag.node_ids():
        role = dag.nodes[node_id].role
        in_degree = graph.in_degree(node_id)
        out_degree = graph.out_degree(node_id)
        if role == NodeRole.SOURCE:
            if in_degree != 0:
                report.add("RoleViolation", node_id, f"Source in-degree {in_degree}")
            if out_degree == 0:
                report.add("RoleViolation", node_id, "Source out-degree 0")
        elif role == NodeRole.CONCLUSION:
            if out_degree != 0:
                report.add("RoleViolation", node_id, f"Conclusion out-degree {out_degree}")
            if in_degree == 0:
                report.add("RoleViolation", node_id, "Conclusion in-degree 0")
        else:
            if in_degree == 0:
                report.add("RoleViolation", node_id, "Hypothesis in-degree 0")
            if out_degree == 0:
                report.add("RoleViolation", node_id, "Hypothesis out-degree 0")

    sources = dag.nodes_with_role(NodeRole.SOURCE)
    conclusions = set(dag.nodes_with_role(NodeRole.CONCLUSION))
    if not sources:
        report.add("NoSource", "", "graph has no Source node")
    if not conclusions:
        report.add("NoConclusion", "", "graph has no Conclusion node")
    for source in sources:
        if conclusions and not (nx.descendants(graph, source) & conclusions):
            report.add("Unreachable", source, f"Source {source} reaches no Conclusion")

    return report


def node_layers(dag: ReasoningDag) -> Dict[str, int]:
    """Longest-path layer of every node; in-degree-0 nodes are layer 0.

    Raises CycleDetectedError for cyclic graphs.
    """
    graph = dag.to_networkx()
    cycles = find_cycles(graph)
    if cycles:
        raise CycleDetectedError(cycles[0])
    layers: Dict[str, int] = {}
    for node in nx.lexicographical_topological_sort(graph):
        preds = list(graph.predecessors(node))
        layers[node] = max(layers[p] for p in preds) + 1 if preds else 0
    return layers


def dag_to_petri(dag: ReasoningDag) -> PetriNet:
    """Compile a validated DAG into a Petri net.

    Converging edges aggregate into one transition per target node; diverging
    edges yield distinct transitions.
    """
    report = validate_dag(dag)
    if not report.ok:
        raise InvalidGraphError(report)

    transitions: Dict[str, Transition] = {}
    initial: Dict[str, Optional[SemanticToken]] = {}
    for node_id in dag.node_ids():
        preds = dag.predecessors(node_id)
        if preds:
            transitions[transition_id(node_id)] = Transition(
                pre_set=tuple(preds),
                post_set=(node_id,),
                label=dag.nodes[node_id].label or node_id,
            )
            initial[node_id] = None
        else:
            initial[node_id] = SemanticToken()

    net = PetriNet(places=tuple(dag.node_ids()), transitions=transitions, initial_marking=initial)
    logger.debug(
        f"Instantiated Petri net with {len(net.places)} places, "
        f"{len(net.transitions)} transitions and depth {topological_depth(net)}"
    )
    return net


def petri_to_edges(net: PetriNet) -> List[Edge]:
    """Collapse transitions back into DAG edges."""
    edges = set()
    for transition in net.transitions.values():
        for pre in transition.pre_set:
            for post in transition.post_set:
                edges.add((pre, post))
    return sorted(edges)


def transition_graph(net: PetriNet) -> nx.DiGraph:
    """Precedence graph over transitions mediated by places."""
    graph = nx.DiGraph()
    graph.add_nodes_from(net.transition_ids())
    for trans_id in net.transition_ids():
        for place in net.transitions[trans_id].pre_set:
            producer = net.producer_of(place)
            if producer is not None:
                graph.add_edge(producer, trans_id)
    return graph


def transition_layers(net: PetriNet) -> List[List[str]]:
    """Longest-path layering of transitions; layer 0 reads only initially marked places."""
    graph = transition_graph(net)
    depth: Dict[str, int] = {}
    for trans_id in nx.lexicographical_topological_sort(graph):
        preds = list(graph.predecessors(trans_id))
        depth[trans_id] = max(depth[p] for p in preds) + 1 if preds else 0

    layers: List[List[str]] = [[] for _ in range(max(depth.values(), default=-1) + 1)]
    for trans_id in sorted(depth):
        layers[depth[trans_id]].append(trans_id)
    return layers


def topological_depth(net: PetriNet) -> int:
    """Length of the longest transition chain; the number of scheduling rounds."""
    return len(transition_layers(net))


def check_net(net: PetriNet) -> ValidationReport:
    """Structural report for a net, including ones built without validation."""
    report = ValidationReport()
    known = set(net.places)
    producers: Dict[str, str] = {}
    flow = nx.DiGraph()

    for trans_id in sorted(net.transitions):
        transition = net.transitions[trans_id]
        pre, post = set(transition.pre_set), set(transition.post_set)
        if not pre:
            report.add("EmptyPreSet", trans_id, "pre-set is empty")
        if not post:
            report.add("EmptyPostSet", trans_id, "post-set is empty")
        if pre & post:
            report.add("Overlap", trans_id, f"pre/post overlap on {format_node_set(pre & post)}")
        for place in sorted((pre | post) - known):
            report.add("UnknownPlace", trans_id, f"place {place} is not declared")
        for place in sorted(post):
            if place in producers:
                report.add(
                    "MultipleProducers",
                    place,
                    f"place {place} produced by {producers[place]} and {trans_id}",
                )
            else:
                producers[place] = trans_id
        flow.add_edges_from((f"p:{p}", f"t:{trans_id}") for p in pre)
        flow.add_edges_from((f"t:{trans_id}", f"p:{p}") for p in post)

    for members in find_cycles(flow):
        report.add("CycleDetected", ",".join(members), f"cycle {format_node_set(members)}")

    for place in sorted(known):
        marked = net.initial_marking.get(place) is not None
        if marked and place in producers:
            report.add("InitialMarking", place, f"produced place {place} is initially marked")
        if not marked and place not in producers:
            report.add("InitialMarking", place, f"unproduced place {place} is initially empty")
    return report


def collapse_sources(dag: ReasoningDag, source_id: str = SOURCE_NODE) -> ReasoningDag:
    """Merge every Source node into a single ``source_id`` node."""
    sources = set(dag.nodes_with_role(NodeRole.SOURCE))
    if not sources:
        return dag
    nodes = {n: node for n, node in dag.nodes.items() if n not in sources}
    nodes[source_id] = ReasoningNode(label=source_id, role=NodeRole.SOURCE)
    edges = [
        (source_id if u in sources else u, source_id if v in sources else v)
        for u, v in dag.edges
    ]
    return ReasoningDag(nodes=nodes, edges=edges)


def is_isomorphic(left: ReasoningDag, right: ReasoningDag) -> bool:
    """Structural isomorphism respecting node roles; labels are ignored."""
    return bool(
        nx.is_isomorphic(
            left.to_networkx(),
            right.to_networkx(),
            node_match=lambda a, b: a["role"] == b["role"],
        )
    )


def depth_edges(dag: ReasoningDag) -> Tuple[int, int]:
    """(longest path length in edges, edge count) for merge reports."""
    graph = dag.to_networkx()
    return int(nx.dag_longest_path_length(graph)), graph.number_of_edges()
