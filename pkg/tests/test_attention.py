"""Tests for attention masks, positions and mask export."""

import numpy as np
import pytest

from src.attention import (
    build_layout,
    build_mask,
    build_positions,
    export_binary,
    export_json,
    layout_from_trace,
    mask_runlists,
    read_binary,
    runlists_to_dense,
    to_additive_bias,
    verify_no_leakage,
)
from src.models import MaskMode
from src.plan_format import parse_trace


def _oracle(layout):
    """Three-case evaluator: future blocked, same-layer siblings blocked, rest allowed."""
    owner = []
    for segment in layout.segments:
        owner.extend([segment] * segment.length)
    n = len(owner)
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if j > i:
                continue
            a, b = owner[i], owner[j]
            mask[i, j] = a is b or a.layer != b.layer
    return mask


@pytest.fixture
def small_layout():
    # preamble 2, a and b in layer 0, c depends on a only, conclusion 1
    return build_layout(2, [("a", 2, []), ("b", 2, []), ("c", 2, ["a"])], 1)


def test_diamond_layout_layers(diamond_trace):
    layout = layout_from_trace(diamond_trace)

    assert [s.step_id for s in layout.segments] == ["preamble", "1", "2", "3", "conclusion"]
    assert [s.layer for s in layout.segments] == [-1, 0, 0, 1, 2]
    assert layout.deps["3"] == ["1", "2"]


def test_diamond_mask_matches_oracle(diamond_trace):
    layout = layout_from_trace(diamond_trace)
    mask = build_mask(layout)

    assert mask.shape == (layout.length, layout.length)
    assert np.array_equal(mask, _oracle(layout))
    assert verify_no_leakage(layout, mask).ok


def test_sibling_steps_cannot_see_each_other(diamond_trace):
    layout = layout_from_trace(diamond_trace)
    mask = build_mask(layout)
    first, second, join = layout.segment("1"), layout.segment("2"), layout.segment("3")

    assert not mask[second.start:second.end, first.start:first.end].any()
    assert mask[join.start, first.start]
    assert mask[join.start, second.start]
    assert mask[second.start, 0]


def test_single_branch_trace_is_causal(fixtures_dir):
    doc = parse_trace((fixtures_dir / "linear_trace.txt").read_text(encoding="utf-8"))
    layout = layout_from_trace(doc)
    n = layout.length

    assert np.array_equal(build_mask(layout), np.tril(np.ones((n, n), dtype=bool)))
    assert np.array_equal(build_positions(layout), np.arange(n))


def test_positions_for_forks_and_joins(small_layout):
    positions = build_positions(small_layout)
    assert positions.tolist() == [0, 1, 2, 3, 2, 3, 4, 5, 6]


def test_diamond_positions(diamond_trace):
    layout = layout_from_trace(diamond_trace)
    positions = build_positions(layout)
    preamble = layout.segment("preamble")
    first, second, join = layout.segment("1"), layout.segment("2"), layout.segment("3")

    assert positions[first.start] == preamble.length
    assert positions[second.start] == preamble.length
    assert positions[join.start] == 1 + max(positions[first.end - 1], positions[second.end - 1])


def test_verify_no_leakage_flags_injected_faults(diamond_trace):
    layout = layout_from_trace(diamond_trace)
    mask = build_mask(layout)
    first, second = layout.segment("1"), layout.segment("2")

    mask[second.start, first.start] = True
    mask[0, 1] = True
    report = verify_no_leakage(layout, mask)

    assert sorted(set(report.codes())) == ["Causality", "Leakage"]
    leak = next(v for v in report.violations if v.code == "Leakage")
    assert leak.location == f"({second.start},{first.start})"
    assert "token" in leak.message and "attends to" in leak.message


def test_verify_no_leakage_rejects_wrong_shape(small_layout):
    report = verify_no_leakage(small_layout, np.ones((2, 2), dtype=bool))
    assert report.codes() == ["ShapeMismatch"]


def test_ancestry_mode_blocks_unrelated_steps(small_layout):
    layer_mask = build_mask(small_layout)
    ancestry_mask = build_mask(small_layout, MaskMode.ANCESTRY)

    # c (tokens 6-7) and b (tokens 4-5)
    assert layer_mask[6, 4]
    assert not ancestry_mask[6, 4]
    assert ancestry_mask[6, 2]
    assert ancestry_mask[8, 4]
    assert not verify_no_leakage(small_layout, layer_mask, MaskMode.ANCESTRY).ok
    assert verify_no_leakage(small_layout, ancestry_mask, MaskMode.ANCESTRY).ok


def test_causal_mode_is_plain_lower_triangle(diamond_trace):
    layout = layout_from_trace(diamond_trace)
    n = layout.length
    mask = build_mask(layout, MaskMode.CAUSAL)

    assert np.array_equal(mask, np.tril(np.ones((n, n), dtype=bool)))
    assert np.array_equal(build_positions(layout, MaskMode.CAUSAL), np.arange(n))
    assert verify_no_leakage(layout, mask, MaskMode.CAUSAL).ok
    assert not verify_no_leakage(layout, mask).ok


def test_build_layout_rejects_bad_input():
    with pytest.raises(ValueError, match="undeclared"):
        build_layout(1, [("a", 1, ["b"])], 1)
    with pytest.raises(ValueError, match="duplicate"):
        build_layout(1, [("a", 1, []), ("a", 1, [])], 1)


def test_runlists_round_trip(diamond_trace):
    mask = build_mask(layout_from_trace(diamond_trace))
    assert np.array_equal(runlists_to_dense(mask_runlists(mask)), mask)


def test_runlists_of_small_mask():
    mask = np.array([[1, 0, 0], [1, 1, 0], [1, 0, 1]], dtype=bool)
    assert mask_runlists(mask) == [[(0, 1)], [(0, 2)], [(0, 1), (2, 3)]]


def test_additive_bias():
    bias = to_additive_bias(np.tril(np.ones((2, 2), dtype=bool)))
    assert bias.dtype == np.float32
    assert bias[1, 0] == 0.0
    assert np.isneginf(bias[0, 1])


def test_export_json(small_layout):
    mask = build_mask(small_layout)
    data = export_json(small_layout, mask, build_positions(small_layout))

    assert data["n"] == 9
    assert data["segments"][0] == {"stepId": "preamble", "kind": "preamble", "layer": -1, "start": 0, "end": 2}
    assert data["segments"][-1]["kind"] == "conclusion"
    assert data["runlists"][0] == [[0, 1]]


def test_export_binary_decodes(small_layout):
    mask = build_mask(small_layout)
    positions = build_positions(small_layout)
    decoded = read_binary(export_binary(small_layout, mask, positions))

    assert decoded["n"] == 9
    assert decoded["positions"] == positions.tolist()
    assert [s["kind"] for s in decoded["segments"]] == ["preamble", "step", "step", "step", "conclusion"]
    assert decoded["runlists"] == mask_runlists(mask)


def test_read_binary_rejects_truncated_stream(small_layout):
    mask = build_mask(small_layout)
    data = export_binary(small_layout, mask, build_positions(small_layout))
    with pytest.raises(ValueError, match="truncated"):
        read_binary(data[:-4])
