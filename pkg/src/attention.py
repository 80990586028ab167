"""Topology-aware attention masks and adaptive position indices for DAG traces.

A trace flattens into segments: the preamble (layer -1, visible to every later
token), one segment per step (layer 0 for steps without dependencies,
otherwise 1 + the deepest dependency) and the conclusion (one layer past
the deepest step). Masks are numpy bool arrays where True means "may attend".
"""

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .models import (
    MaskMode,
    Segment,
    SegmentKind,
    SegmentLayout,
    TraceDocument,
    ValidationReport,
)
from .plan_format import escape_text, serialize_plan
from .utils.text import count_tokens

logger = structlog.get_logger()

PREAMBLE_ID = "preamble"
CONCLUSION_ID = "conclusion"

_KIND_CODES = {SegmentKind.PREAMBLE: 0, SegmentKind.STEP: 1, SegmentKind.CONCLUSION: 2}
_KINDS_BY_CODE = {code: kind for kind, code in _KIND_CODES.items()}

StepSpan = Tuple[str, int, Sequence[str]]


def build_layout(
    preamble_len: int,
    steps: Sequence[StepSpan],
    conclusion_len: int,
) -> SegmentLayout:
    """Lay out ``(step_id, length, deps)`` triples after a preamble and before the conclusion.

    Dependencies must name steps listed earlier.
    """
    if preamble_len < 0 or conclusion_len < 0:
        raise ValueError("segment lengths must be non-negative")

    segments = [Segment(step_id=PREAMBLE_ID, kind=SegmentKind.PREAMBLE, layer=-1, start=0, end=preamble_len)]
    layers: Dict[str, int] = {}
    deps: Dict[str, List[str]] = {}
    cursor = preamble_len
    for step_id, length, step_deps in steps:
        if step_id in layers or step_id in (PREAMBLE_ID, CONCLUSION_ID):
            raise ValueError(f"duplicate step id {step_id!r}")
        if length < 0:
            raise ValueError(f"step {step_id} has negative length")
        unknown = [d for d in step_deps if d not in layers]
        if unknown:
            raise ValueError(f"step {step_id} depends on undeclared steps {unknown}")
        deps[step_id] = sorted(set(step_deps))
        layers[step_id] = 1 + max((layers[d] for d in deps[step_id]), default=-1)
        segments.append(Segment(step_id=step_id, layer=layers[step_id], start=cursor, end=cursor + length))
        cursor += length

    segments.append(
        Segment(
            step_id=CONCLUSION_ID,
            kind=SegmentKind.CONCLUSION,
            layer=1 + max(layers.values(), default=-1),
            start=cursor,
            end=cursor + conclusion_len,
        )
    )
    return SegmentLayout(segments=segments, deps=deps)


def layout_from_trace(
    doc: TraceDocument,
    counter: Callable[[str], int] = count_tokens,
) -> SegmentLayout:
    """Segment the canonical serialisation of ``doc``.

    The preamble covers everything before the first step (free text, plan,
    execution opening tag). Each step owns its tags and text; the conclusion
    owns the closing execution tag and the conclusion block.
    """
    head = [doc.preamble] if doc.preamble is not None else []
    head += [serialize_plan(doc.plan), "<Execution>"]
    preamble_len = sum(counter(piece) for piece in head)

    steps: List[StepSpan] = []
    for step in doc.steps:
        outline = doc.plan.outline(step.index)
        step_deps = [str(d) for d in outline.deps if d > 0] if outline else []
        length = counter(f'<Step i="{step.index}">') + counter(escape_text(step.text)) + counter("</Step>")
        steps.append((str(step.index), length, step_deps))

    conclusion_len = sum(counter(p) for p in ("</Execution>", "<Conclusion>", escape_text(doc.conclusion), "</Conclusion>"))
    return build_layout(preamble_len, steps, conclusion_len)


def token_segments(layout: SegmentLayout) -> np.ndarray:
    """Segment index of every token."""
    return np.concatenate(
        [np.full(s.length, i, dtype=np.int64) for i, s in enumerate(layout.segments)]
        or [np.zeros(0, dtype=np.int64)]
    )


def ancestors(layout: SegmentLayout, step_id: str) -> List[str]:
    """Transitive dependencies of a step; every step for the conclusion."""
    if step_id == CONCLUSION_ID:
        return [s.step_id for s in layout.step_segments()]
    found: List[str] = []
    stack = list(layout.deps.get(step_id, []))
    while stack:
        current = stack.pop()
        if current not in found:
            found.append(current)
            stack.extend(layout.deps.get(current, []))
    return sorted(found)


def visibility(layout: SegmentLayout, mode: MaskMode = MaskMode.LAYER) -> np.ndarray:
    """Segment-level relation: ``V[a, b]`` is True when segment a may see segment b (ignoring causality)."""
    segments = layout.segments
    layers = np.array([s.layer for s in segments], dtype=np.int64)
    count = len(segments)
    if mode == MaskMode.CAUSAL:
        return np.ones((count, count), dtype=bool)
    same_layer = layers[:, None] == layers[None, :]
    relation = ~same_layer | np.eye(count, dtype=bool)
    if mode == MaskMode.ANCESTRY:
        index = {s.step_id: i for i, s in enumerate(segments)}
        lineage = np.eye(count, dtype=bool)
        for a, segment in enumerate(segments):
            lineage[a, index[PREAMBLE_ID]] = True
            for ancestor in ancestors(layout, segment.step_id):
                lineage[a, index[ancestor]] = True
        relation &= lineage
    return relation


def build_mask(layout: SegmentLayout, mode: MaskMode = MaskMode.LAYER) -> np.ndarray:
    """Dense N x N boolean mask.

    ``layer`` mode: block j > i, block same-layer tokens of different steps,
    allow everything else. ``ancestry`` mode also blocks earlier steps that
    are not ancestors. ``causal`` mode is the plain lower triangle.
    """
    seg = token_segments(layout)
    n = len(seg)
    causal = np.tril(np.ones((n, n), dtype=bool))
    return causal & visibility(layout, mode)[seg[:, None], seg[None, :]]


def build_positions(layout: SegmentLayout, mode: MaskMode = MaskMode.LAYER) -> np.ndarray:
    """Position index fed to the position embedding for every token.

    In ``causal`` mode positions are simply 0..N-1. Otherwise steps without
    dependencies start right after the preamble; a step with dependencies
    starts at 1 + the largest last position among them; the conclusion
    starts at 1 + the largest last position of any step.
    """
    if mode == MaskMode.CAUSAL:
        return np.arange(layout.length, dtype=np.int64)
    positions = np.zeros(layout.length, dtype=np.int64)
    last: Dict[str, int] = {}
    preamble_end = 0
    for segment in layout.segments:
        if segment.kind == SegmentKind.PREAMBLE:
            start = 0
        elif segment.kind == SegmentKind.STEP:
            step_deps = layout.deps.get(segment.step_id, [])
            start = 1 + max(last[d] for d in step_deps) if step_deps else preamble_end
        else:
            start = 1 + max(last.values()) if last else preamble_end
        positions[segment.start:segment.end] = np.arange(start, start + segment.length)
        if segment.kind == SegmentKind.PREAMBLE:
            preamble_end = segment.length
        else:
            last[segment.step_id] = start + segment.length - 1
    return positions


def verify_no_leakage(
    layout: SegmentLayout,
    mask: np.ndarray,
    mode: MaskMode = MaskMode.LAYER,
) -> ValidationReport:
    """Report every allowed cell the visibility relation of ``mode`` forbids."""
    report = ValidationReport()
    n = layout.length
    if mask.shape != (n, n):
        report.add("ShapeMismatch", "mask", f"mask shape {mask.shape} != ({n}, {n})")
        return report

    seg = token_segments(layout)
    visible = visibility(layout, mode)[seg[:, None], seg[None, :]]
    allowed = mask.astype(bool)
    names = [s.step_id for s in layout.segments]

    for i, j in np.argwhere(allowed & np.triu(np.ones((n, n), dtype=bool), k=1)):
        report.add("Causality", f"({i},{j})", f"token {i} attends to future token {j}")
    for i, j in np.argwhere(allowed & ~visible & np.tril(np.ones((n, n), dtype=bool))):
        report.add(
            "Leakage",
            f"({i},{j})",
            f"token {i} in {names[seg[i]]} attends to token {j} in {names[seg[j]]}",
        )
    return report


def to_additive_bias(mask: np.ndarray) -> np.ndarray:
    """0 where allowed, -inf where blocked."""
    return np.where(mask, np.float32(0.0), np.float32(-np.inf)).astype(np.float32)


def mask_runlists(mask: np.ndarray) -> List[List[Tuple[int, int]]]:
    """Per-row allowed ranges ``[start, end)``."""
    runlists: List[List[Tuple[int, int]]] = []
    for row in mask.astype(bool):
        padded = np.concatenate([[False], row, [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(padded))
        runlists.append([(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])])
    return runlists


def runlists_to_dense(runlists: Sequence[Sequence[Tuple[int, int]]], n: Optional[int] = None) -> np.ndarray:
    size = len(runlists) if n is None else n
    dense = np.zeros((size, size), dtype=bool)
    for i, runs in enumerate(runlists):
        for start, end in runs:
            dense[i, start:end] = True
    return dense


def export_json(
    layout: SegmentLayout,
    mask: np.ndarray,
    positions: np.ndarray,
) -> Dict[str, Any]:
    """JSON artifact ``{n, positions, segments, runlists}``."""
    return {
        "n": layout.length,
        "positions": [int(p) for p in positions],
        "segments": [
            {
                "stepId": s.step_id,
                "kind": s.kind.value,
                "layer": s.layer,
                "start": s.start,
                "end": s.end,
            }
            for s in layout.segments
        ],
        "runlists": [[list(run) for run in runs] for runs in mask_runlists(mask)],
    }


def export_binary(
    layout: SegmentLayout,
    mask: np.ndarray,
    positions: np.ndarray,
) -> bytes:
    """Little-endian int32 stream.

    Field order: N, N positions, S, S records of (kind, layer, start, end),
    then for each of the N rows: R followed by R (start, end) pairs.
    Kind codes: 0 preamble, 1 step, 2 conclusion.
    """
    values: List[int] = [layout.length]
    values.extend(int(p) for p in positions)
    values.append(len(layout.segments))
    for s in layout.segments:
        values.extend((_KIND_CODES[s.kind], s.layer, s.start, s.end))
    for runs in mask_runlists(mask):
        values.append(len(runs))
        for start, end in runs:
            values.extend((start, end))
    return np.asarray(values, dtype="<i4").tobytes()


def read_binary(data: bytes) -> Dict[str, Any]:
    """Decode an ``export_binary`` stream."""
    values = np.frombuffer(data, dtype="<i4").tolist()
    cursor = 0

    def take(count: int) -> List[int]:
        nonlocal cursor
        chunk = values[cursor:cursor + count]
        if len(chunk) != count:
            raise ValueError("truncated mask export")
        cursor += count
        return chunk

    n = take(1)[0]
    positions = take(n)
    segments = []
    for _ in range(take(1)[0]):
        kind, layer, start, end = take(4)
        segments.append({"kind": _KINDS_BY_CODE[kind].value, "layer": layer, "start": start, "end": end})
    runlists = []
    for _ in range(n):
        flat = take(2 * take(1)[0])
        runlists.append([(flat[k], flat[k + 1]) for k in range(0, len(flat), 2)])
    if cursor != len(values):
        raise ValueError("trailing data after mask export")
    return {"n": n, "positions": positions, "segments": segments, "runlists": runlists}
