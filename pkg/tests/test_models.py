"""Tests for Pydantic models."""

import pytest
from pydantic import ValidationError

from src.models import (
    FiredRecord,
    Marking,
    NodeRole,
    PetriNet,
    ReasoningChain,
    ReasoningDag,
    ReasoningNode,
    RunMetrics,
    Segment,
    SegmentLayout,
    SemanticToken,
    StepRecord,
    Transition,
    ValidationReport,
)


def test_dag_edges_are_sorted_and_deduplicated(diamond_dag):
    dag = ReasoningDag(nodes=diamond_dag.nodes, edges=list(reversed(diamond_dag.edges)) + [("S", "A")])
    assert dag.edges == [("A", "C"), ("B", "C"), ("S", "A"), ("S", "B")]


def test_dag_neighbourhood_helpers(diamond_dag):
    assert diamond_dag.predecessors("C") == ["A", "B"]
    assert diamond_dag.successors("S") == ["A", "B"]
    assert diamond_dag.sources() == ["S"]
    assert diamond_dag.sinks() == ["C"]
    assert diamond_dag.nodes_with_role(NodeRole.HYPOTHESIS) == ["A", "B"]


def test_dag_to_networkx_keeps_roles(diamond_dag):
    graph = diamond_dag.to_networkx()
    assert graph.nodes["S"]["role"] == "source"
    assert graph.number_of_edges() == 4


def test_transition_rejects_overlap():
    with pytest.raises(ValidationError):
        Transition(pre_set=("a",), post_set=("a", "b"))


def test_transition_rejects_empty_sets():
    with pytest.raises(ValidationError):
        Transition(pre_set=(), post_set=("b",))


def test_petri_net_rejects_two_producers():
    with pytest.raises(ValidationError, match="produced by both"):
        PetriNet(
            places=("a", "b"),
            transitions={
                "t1": Transition(pre_set=("a",), post_set=("b",)),
                "t2": Transition(pre_set=("a",), post_set=("b",)),
            },
            initial_marking={"a": SemanticToken()},
        )


def test_petri_net_requires_unproduced_places_marked():
    with pytest.raises(ValidationError, match="empty in the initial marking"):
        PetriNet(
            places=("a", "b"),
            transitions={"t1": Transition(pre_set=("a",), post_set=("b",))},
            initial_marking={},
        )


def test_marking_with_tokens_does_not_mutate(diamond_net):
    marking = Marking.initial(diamond_net)
    token = SemanticToken(history=(StepRecord(trans_id="t:A", text="x", token_ids=(1,)),))
    updated = marking.with_tokens({"A": token}, advance=True)

    assert not marking.is_marked("A")
    assert updated.is_marked("A")
    assert updated.round == 1
    with pytest.raises(ValueError):
        updated.with_tokens({"A": token})


def test_semantic_token_token_ids_concatenate_history():
    token = SemanticToken(
        history=(
            StepRecord(trans_id="plan", token_ids=(1, 2)),
            StepRecord(trans_id="t:n1", token_ids=(3,)),
        )
    )
    assert token.token_ids == [1, 2, 3]
    assert token.trans_ids() == ["plan", "t:n1"]
    assert token.cache_refs == []


def test_chain_rejects_immediate_repetition():
    with pytest.raises(ValidationError):
        ReasoningChain(index=1, entities=["A", "A", "B"])


def test_chain_render():
    chain = ReasoningChain(index=3, entities=["A", "B", "C"])
    assert chain.render() == "3: A->B->C"
    assert chain.pairs() == [("A", "B"), ("B", "C")]


def test_validation_report_extend_with_prefix():
    inner = ValidationReport()
    inner.add("CycleDetected", "n1,n2", "cycle {n1,n2}")
    report = ValidationReport()
    report.extend(inner, prefix="plan:")

    assert not report.ok
    assert report.violations[0].location == "plan:n1,n2"
    assert report.to_dict()["ok"] is False


def test_run_metrics_eight_equal_branches():
    # 8 branches of 100 tokens in one round, plan 20, join 50, conclusion 30
    metrics = RunMetrics.from_rounds(20, [[100] * 8, [50]], 30)

    assert metrics.total_tokens == 900
    assert metrics.parallel_cost == 200
    assert metrics.speedup == 4.5
    assert metrics.to_dict()["speedup"] == 4.5


def test_run_metrics_empty_run_has_unit_speedup():
    assert RunMetrics().speedup == 1.0


def test_fired_record_log_dict_uses_camel_case():
    record = FiredRecord(round=0, trans_id="t:n1", text="abc", produced_tokens=1, positions=(5, 6))
    data = record.to_log_dict()
    assert data["transId"] == "t:n1"
    assert data["producedTokens"] == 1
    assert data["positions"] == [5, 6]
    assert "text" not in data


def test_segment_layout_must_be_contiguous():
    with pytest.raises(ValidationError):
        SegmentLayout(
            segments=[
                Segment(step_id="preamble", layer=-1, start=0, end=2),
                Segment(step_id="1", layer=0, start=3, end=5),
            ]
        )


def test_reasoning_node_is_frozen():
    node = ReasoningNode(label="x", role=NodeRole.SOURCE)
    with pytest.raises(ValidationError):
        node.label = "y"
