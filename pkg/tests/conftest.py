"""Pytest configuration and fixtures."""

from pathlib import Path

import pytest
import structlog

from src.graph import SOURCE_NODE, dag_to_petri
from src.kv_cache import RadixCache
from src.models import NodeRole, ReasoningDag, ReasoningNode
from src.plan_format import parse_trace
from src.producers import ScriptedProducer

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def diamond_trace_text() -> str:
    """Canonical fork/join trace: outlines 1 and 2 fork from the source, 3 joins them."""
    return (FIXTURES / "diamond_trace.txt").read_text(encoding="utf-8")


@pytest.fixture
def diamond_trace(diamond_trace_text):
    return parse_trace(diamond_trace_text)


@pytest.fixture
def diamond_dag():
    """S -> A, S -> B, A -> C, B -> C."""
    return ReasoningDag(
        nodes={
            "S": ReasoningNode(label="Symptoms", role=NodeRole.SOURCE),
            "A": ReasoningNode(label="Fever", role=NodeRole.HYPOTHESIS),
            "B": ReasoningNode(label="Cough", role=NodeRole.HYPOTHESIS),
            "C": ReasoningNode(label="Diagnosis", role=NodeRole.CONCLUSION),
        },
        edges=[("S", "A"), ("S", "B"), ("A", "C"), ("B", "C")],
    )


@pytest.fixture
def diamond_net(diamond_dag):
    return dag_to_petri(diamond_dag)


@pytest.fixture
def nested_diamond_net():
    """S -> P, S -> Q, Q -> X, P -> Y, Q -> Y, X -> Z, Y -> Z: Q is reached twice at Z."""
    roles = {"S": NodeRole.SOURCE, "Z": NodeRole.CONCLUSION}
    nodes = {
        name: ReasoningNode(label=name, role=roles.get(name, NodeRole.HYPOTHESIS))
        for name in ("S", "P", "Q", "X", "Y", "Z")
    }
    edges = [("S", "P"), ("S", "Q"), ("Q", "X"), ("P", "Y"), ("Q", "Y"), ("X", "Z"), ("Y", "Z")]
    return dag_to_petri(ReasoningDag(nodes=nodes, edges=edges))


@pytest.fixture
def chain_dag():
    """source -> n1 -> n2 -> n3."""
    return ReasoningDag(
        nodes={
            SOURCE_NODE: ReasoningNode(label="source", role=NodeRole.SOURCE),
            "n1": ReasoningNode(label="first", role=NodeRole.HYPOTHESIS),
            "n2": ReasoningNode(label="second", role=NodeRole.HYPOTHESIS),
            "n3": ReasoningNode(label="third", role=NodeRole.CONCLUSION),
        },
        edges=[(SOURCE_NODE, "n1"), ("n1", "n2"), ("n2", "n3")],
    )


@pytest.fixture
def wide_dag():
    """One source forking into eight branches that join into one conclusion."""
    nodes = {SOURCE_NODE: ReasoningNode(label="source", role=NodeRole.SOURCE)}
    edges = []
    for i in range(1, 9):
        nodes[f"b{i}"] = ReasoningNode(label=f"branch {i}", role=NodeRole.HYPOTHESIS)
        edges.append((SOURCE_NODE, f"b{i}"))
        edges.append((f"b{i}", "join"))
    nodes["join"] = ReasoningNode(label="join", role=NodeRole.CONCLUSION)
    return ReasoningDag(nodes=nodes, edges=edges)


@pytest.fixture
def diamond_script():
    return ScriptedProducer.from_file(FIXTURES / "diamond_script.yaml")


@pytest.fixture
def cache():
    return RadixCache()


@pytest.fixture(autouse=True)
def reset_logging():
    """CLI invocations bind structlog to the runner's stderr; restore the default afterwards."""
    yield
    structlog.reset_defaults()
