"""Tests for the chain compiler."""

import pytest

from src.chains import (
    BadLineError,
    ChainFormatError,
    EmptyEntityError,
    RepeatedEntityError,
    compile_to_plan,
    curate,
    dedup_chains,
    merge_chains,
    merge_stats,
    parse_chains,
    render_chains,
)
from src.graph import CycleDetectedError, collapse_sources, is_isomorphic
from src.models import NodeRole, ReasoningChain
from src.plan_format import plan_to_dag, serialize_plan


def test_parse_chains_keeps_indices_and_lines():
    chains = parse_chains("3: A->B\n\n1: B -> C -> D\n")
    assert [c.index for c in chains] == [3, 1]
    assert [c.line for c in chains] == [1, 3]
    assert chains[1].entities == ["B", "C", "D"]


def test_parse_chains_errors():
    with pytest.raises(BadLineError) as excinfo:
        parse_chains("1: A->B\nnot a chain")
    assert excinfo.value.line == 2

    with pytest.raises(EmptyEntityError):
        parse_chains("1: A->->B")

    with pytest.raises(RepeatedEntityError):
        parse_chains("1: A->A->B")


def test_parse_chains_lenient_collapses_repeats():
    chains = parse_chains("1: A->A->B", strict=False)
    assert chains[0].entities == ["A", "B"]


def test_render_chains_round_trip():
    text = "1: A->B->C\n2: C->D\n"
    assert render_chains(parse_chains(text)) == text


def test_dedup_chains_drops_textual_duplicates_and_reindexes():
    chains = parse_chains("4: A->B\n7: A->B\n9: B->C")
    kept = dedup_chains(chains)
    assert [(c.index, c.text) for c in kept] == [(1, "A->B"), (2, "B->C")]


def test_dedup_chains_cap():
    chains = [ReasoningChain(index=i, entities=[f"x{i}", f"y{i}"]) for i in range(1, 16)]
    assert len(dedup_chains(chains)) == 10
    assert len(dedup_chains(chains, cap=3)) == 3
    assert len(dedup_chains(chains, cap=0)) == 15


def test_merge_chains_diamond(fixtures_dir):
    chains = parse_chains((fixtures_dir / "diamond_chains.txt").read_text(encoding="utf-8"))
    dag = merge_chains(chains)

    assert dag.nodes_with_role(NodeRole.SOURCE) == ["Symptoms"]
    assert dag.nodes_with_role(NodeRole.CONCLUSION) == ["Diagnosis"]
    assert dag.nodes_with_role(NodeRole.HYPOTHESIS) == ["Cough", "Fever"]
    assert len(dag.edges) == 4


def test_merge_chains_cycle_names_chains_and_lines(fixtures_dir):
    chains = parse_chains((fixtures_dir / "cyclic_chains.txt").read_text(encoding="utf-8"))
    with pytest.raises(CycleDetectedError) as excinfo:
        merge_chains(chains)

    assert excinfo.value.nodes == ["A", "B", "C"]
    assert excinfo.value.chains == [1, 2]
    assert excinfo.value.lines == [1, 2]
    assert str(excinfo.value) == "cycle {A,B,C} (chains 1, 2) (lines 1, 2)"


def test_merge_stats(fixtures_dir):
    chains = parse_chains((fixtures_dir / "diamond_chains.txt").read_text(encoding="utf-8"))
    stats = merge_stats(chains, merge_chains(chains))
    assert (stats.chains, stats.nodes, stats.edges, stats.depth, stats.shared_nodes) == (2, 4, 4, 2, 2)


def test_compile_to_plan_diamond(fixtures_dir):
    chains = parse_chains((fixtures_dir / "diamond_chains.txt").read_text(encoding="utf-8"))
    plan = compile_to_plan(merge_chains(chains), goal="  diagnose  ")

    assert serialize_plan(plan) == "\n".join(
        [
            "<Plan>",
            "<Goal>diagnose</Goal>",
            '<Outline id="1" deps="">Symptoms->Cough</Outline>',
            '<Outline id="2" deps="">Symptoms->Fever</Outline>',
            '<Outline id="3" deps="1,2">Cough,Fever->Diagnosis</Outline>',
            "</Plan>",
        ]
    )


def test_compile_to_plan_marks_mixed_source_dependencies():
    chains = parse_chains("1: S->A->B\n2: S->B")
    plan = compile_to_plan(merge_chains(chains))
    assert plan.outline(2).deps == [0, 1]


def test_compile_round_trips_through_plan_to_dag():
    chains = parse_chains("1: S->A->C\n2: T->B->C\n3: S->C")
    dag = merge_chains(chains)
    back = plan_to_dag(compile_to_plan(dag), single_conclusion=False)
    assert is_isomorphic(back, collapse_sources(dag))


def test_curate_pipeline(fixtures_dir):
    text = (fixtures_dir / "diamond_chains.txt").read_text(encoding="utf-8")
    result = curate(text + "3: Symptoms->Fever->Diagnosis\n")

    assert len(result.chains) == 2
    assert len(result.plan.outlines) == 3
    assert result.stats.depth == 2


def test_curate_rejects_empty_input():
    with pytest.raises(ChainFormatError, match="no chains"):
        curate("\n\n")
