"""Plan / Execution / Conclusion trace format: parsing, serialisation and syntax checks.

Canonical form::

    optional free-text preamble
    <Plan>
    <Goal>optional goal</Goal>
    <Outline id="1" deps="">A->B</Outline>
    <Outline id="2" deps="1">B->C</Outline>
    </Plan>
    <Execution>
    <Step i="1">
    step text
    </Step>
    ...
    </Execution>
    <Conclusion>
    conclusion text
    </Conclusion>

``deps=""`` means the step depends on the plan source only; the index ``0``
names the source explicitly and may be combined with other indices.
"""

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import networkx as nx
import structlog

from .graph import SOURCE_NODE, CycleDetectedError, InvalidGraphError, find_cycles, validate_dag
from .models import (
    NodeRole,
    Outline,
    PlanDocument,
    ReasoningDag,
    ReasoningNode,
    TraceDocument,
    TraceStep,
    ValidationReport,
)
from .utils.text import clean_text, normalize_newlines

logger = structlog.get_logger()

KNOWN_TAGS = {"Plan", "Goal", "Outline", "Execution", "Step", "Conclusion"}

_TAG_PATTERN = re.compile(r"<(/?)([A-Za-z][\w-]*)([^<>]*)>")
_ATTR_PATTERN = re.compile(r'\s*([A-Za-z_][\w-]*)="([^"]*)"')
_PLAN_OPEN = re.compile(r"<Plan\s*>")


class PlanFormatError(Exception):
    """Base exception for trace format errors."""
    code = "PlanFormatError"

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(message)


class MalformedTagError(PlanFormatError):
    code = "MalformedTag"


class BadIndexError(PlanFormatError):
    code = "BadIndex"


class ForwardDepError(PlanFormatError):
    code = "ForwardDep"


class MissingSectionError(PlanFormatError):
    code = "MissingSection"


class StepIndexMismatchError(PlanFormatError):
    code = "StepIndexMismatch"


class OrderViolationError(PlanFormatError):
    code = "OrderViolation"


class PolicyViolationError(PlanFormatError):
    """Raised when a plan breaks the single-conclusion policy."""
    code = "PolicyViolation"


_ERRORS = {
    cls.code: cls
    for cls in (
        MalformedTagError,
        BadIndexError,
        ForwardDepError,
        MissingSectionError,
        StepIndexMismatchError,
        OrderViolationError,
        PolicyViolationError,
    )
}


def node_id(index: int) -> str:
    """DAG node id of outline ``index``."""
    return f"n{index}"


def escape_text(text: str) -> str:
    """Escape ``&`` and ``<`` so free text can never read as a tag."""
    return text.replace("&", "&amp;").replace("<", "&lt;")


def unescape_text(text: str) -> str:
    """Inverse of ``escape_text``."""
    return text.replace("&lt;", "<").replace("&amp;", "&")


# ---------------------------------------------------------------------------
# Scanner
# ---------------------------------------------------------------------------


@dataclass
class _Tag:
    name: str
    closing: bool
    offset: int
    attrs: Dict[str, str] = field(default_factory=dict)


@dataclass
class _Text:
    value: str
    offset: int


def _location(text: str, offset: int) -> str:
    return f"line {text.count(chr(10), 0, offset) + 1}"


def _scan(text: str, start: int) -> List[Union[_Tag, _Text]]:
    items: List[Union[_Tag, _Text]] = []
    cursor = start
    for match in _TAG_PATTERN.finditer(text, start):
        if match.start() > cursor:
            items.append(_Text(text[cursor:match.start()], cursor))
        closing, name, raw_attrs = match.group(1) == "/", match.group(2), match.group(3)
        if name not in KNOWN_TAGS:
            raise MalformedTagError(f"unknown tag <{'/' if closing else ''}{name}>", _location(text, match.start()))
        attrs: Dict[str, str] = {}
        consumed = 0
        for attr in _ATTR_PATTERN.finditer(raw_attrs):
            if attr.start() != consumed:
                break
            attrs[attr.group(1)] = attr.group(2)
            consumed = attr.end()
        if raw_attrs[consumed:].strip() or (closing and attrs):
            raise MalformedTagError(f"malformed attributes in <{name}>", _location(text, match.start()))
        items.append(_Tag(name=name, closing=closing, offset=match.start(), attrs=attrs))
        cursor = match.end()
    if cursor < len(text):
        items.append(_Text(text[cursor:], cursor))
    return items


class _Parser:
    """Single-pass recursive-descent parser over scanned items; first error wins."""

    def __init__(self, text: str, start: int):
        self.text = text
        self.items = _scan(text, start)
        self.pos = 0

    def _loc(self, offset: int) -> str:
        return _location(self.text, offset)

    def peek_tag(self) -> Optional[_Tag]:
        while self.pos < len(self.items):
            item = self.items[self.pos]
            if isinstance(item, _Tag):
                return item
            if item.value.strip():
                raise MalformedTagError(f"unexpected text {item.value.strip()[:40]!r}", self._loc(item.offset))
            self.pos += 1
        return None

    def take_open(self, name: str) -> Optional[_Tag]:
        tag = self.peek_tag()
        if tag is not None and tag.name == name and not tag.closing:
            self.pos += 1
            return tag
        return None

    def expect_close(self, name: str, opened: _Tag) -> None:
        tag = self.peek_tag()
        if tag is None:
            raise MalformedTagError(f"unclosed <{name}>", self._loc(opened.offset))
        if tag.name != name or not tag.closing:
            raise MalformedTagError(f"unexpected <{tag.name}> inside <{name}>", self._loc(tag.offset))
        self.pos += 1

    def read_text(self, name: str, opened: _Tag) -> str:
        parts: List[str] = []
        while self.pos < len(self.items):
            item = self.items[self.pos]
            self.pos += 1
            if isinstance(item, _Text):
                parts.append(item.value)
            elif item.name == name and item.closing:
                return unescape_text("".join(parts))
            else:
                raise MalformedTagError(f"unexpected <{item.name}> inside <{name}>", self._loc(item.offset))
        raise MalformedTagError(f"unclosed <{name}>", self._loc(opened.offset))

    def parse_plan(self) -> PlanDocument:
        opened = self.take_open("Plan")
        if opened is None:
            raise MissingSectionError("missing <Plan> section", "plan")
        goal = ""
        outlines: List[Outline] = []
        seen_goal = False
        while True:
            tag = self.peek_tag()
            if tag is None:
                raise MalformedTagError("unclosed <Plan>", self._loc(opened.offset))
            if tag.name == "Plan" and tag.closing:
                self.pos += 1
                break
            if tag.closing or tag.name not in ("Goal", "Outline") or (tag.name == "Goal" and (seen_goal or outlines)):
                raise MalformedTagError(f"unexpected <{tag.name}> inside <Plan>", self._loc(tag.offset))
            self.pos += 1
            if tag.name == "Goal":
                seen_goal = True
                goal = clean_text(self.read_text("Goal", tag))
            else:
                outlines.append(self._outline(tag))
        return PlanDocument(goal=goal, outlines=outlines)

    def _outline(self, tag: _Tag) -> Outline:
        loc = self._loc(tag.offset)
        if "id" not in tag.attrs or "deps" not in tag.attrs or set(tag.attrs) - {"id", "deps"}:
            raise MalformedTagError('<Outline> requires exactly id="N" and deps="..."', loc)
        index = self._int(tag.attrs["id"], "outline id", loc)
        deps = sorted({self._int(d, "dependency", loc) for d in tag.attrs["deps"].split(",") if d.strip()})
        description = clean_text(self.read_text("Outline", tag))
        return Outline(index=index, deps=deps, description=description)

    def _int(self, raw: str, what: str, loc: str) -> int:
        raw = raw.strip()
        if not re.fullmatch(r"\d+", raw):
            raise MalformedTagError(f"{what} {raw!r} is not a non-negative integer", loc)
        return int(raw)

    def parse_steps(self) -> List[TraceStep]:
        opened = self.take_open("Execution")
        if opened is None:
            raise MissingSectionError("missing <Execution> section", "execution")
        steps: List[TraceStep] = []
        while True:
            tag = self.take_open("Step")
            if tag is None:
                break
            loc = self._loc(tag.offset)
            if set(tag.attrs) != {"i"}:
                raise MalformedTagError('<Step> requires exactly i="N"', loc)
            index = self._int(tag.attrs["i"], "step index", loc)
            steps.append(TraceStep(index=index, text=self.read_text("Step", tag).strip()))
        self.expect_close("Execution", opened)
        return steps

    def parse_conclusion(self) -> str:
        opened = self.take_open("Conclusion")
        if opened is None:
            raise MissingSectionError("missing <Conclusion> section", "conclusion")
        conclusion = self.read_text("Conclusion", opened).strip()
        trailing = self.peek_tag()
        if trailing is not None:
            raise MalformedTagError(f"unexpected <{trailing.name}> after <Conclusion>", self._loc(trailing.offset))
        return conclusion


def locate_plan(text: str) -> int:
    """Offset of the first ``<Plan>`` open tag."""
    match = _PLAN_OPEN.search(text)
    if match is None:
        raise MissingSectionError("missing <Plan> section", "plan")
    return match.start()


def _raise_first(report: ValidationReport) -> None:
    if report.ok:
        return
    violation = report.violations[0]
    if violation.code == "CycleDetected":
        raise CycleDetectedError(violation.location.split(","))
    error_cls = _ERRORS.get(violation.code, PlanFormatError)
    raise error_cls(violation.message, violation.location)


# ---------------------------------------------------------------------------
# Checks shared by the strict parser and verify_syntax
# ---------------------------------------------------------------------------


def plan_violations(plan: PlanDocument) -> ValidationReport:
    """Index contiguity, forward-only dependencies and acyclicity of a plan."""
    report = ValidationReport()
    seen = set()
    for expected, outline in enumerate(plan.outlines, start=1):
        loc = f"outline {outline.index}"
        if outline.index in seen:
            report.add("BadIndex", loc, f"duplicate outline id {outline.index}")
        elif outline.index != expected:
            report.add("BadIndex", loc, f"outline id {outline.index}, expected {expected}")
        seen.add(outline.index)
        for dep in outline.deps:
            if dep < 0:
                report.add("BadIndex", loc, f"negative dependency {dep}")
            elif dep >= outline.index:
                report.add("ForwardDep", loc, f"outline {outline.index} depends on {dep}")
            elif dep > 0 and dep not in seen:
                report.add("BadIndex", loc, f"dependency {dep} is not a declared outline")

    graph = nx.DiGraph()
    for outline in plan.outlines:
        graph.add_node(str(outline.index))
        graph.add_edges_from((str(d), str(outline.index)) for d in outline.deps if d > 0)
    for members in find_cycles(graph):
        report.add("CycleDetected", ",".join(members), f"cycle {{{','.join(members)}}}")
    return report


def step_violations(doc: TraceDocument) -> ValidationReport:
    """Step/outline bijection and dependency ordering."""
    report = ValidationReport()
    outline_ids = set(doc.plan.indices())
    step_ids = [s.index for s in doc.steps]

    duplicates = sorted({i for i in step_ids if step_ids.count(i) > 1})
    missing = sorted(outline_ids - set(step_ids))
    extra = sorted(set(step_ids) - outline_ids)
    if duplicates:
        report.add("StepIndexMismatch", "execution", f"duplicate {_fmt_set(duplicates)}")
    if missing:
        report.add("StepIndexMismatch", "execution", f"missing {_fmt_set(missing)}")
    if extra:
        report.add("StepIndexMismatch", "execution", f"unexpected {_fmt_set(extra)}")

    position = {}
    for pos, index in enumerate(step_ids):
        position.setdefault(index, pos)
    for pos, step in enumerate(doc.steps):
        outline = doc.plan.outline(step.index)
        if outline is None:
            continue
        late = sorted(d for d in outline.deps if d in position and position[d] > pos)
        if late:
            report.add("OrderViolation", f"step {step.index}", f"step {step.index} precedes dependency {_fmt_set(late)}")
    return report


def _fmt_set(values: List[int]) -> str:
    return "{" + ",".join(str(v) for v in values) + "}"


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def parse_plan(text: str, strict: bool = True) -> PlanDocument:
    """Parse the ``<Plan>`` block of ``text``.

    Dependency lists come back sorted and de-duplicated. With ``strict`` the
    index, dependency and cycle checks raise; otherwise only grammar errors do.
    """
    text = normalize_newlines(text)
    parser = _Parser(text, locate_plan(text))
    plan = parser.parse_plan()
    if strict:
        _raise_first(plan_violations(plan))
    return plan


def parse_trace(text: str, strict: bool = True) -> TraceDocument:
    """Parse a full trace. The preamble before ``<Plan>`` is kept verbatim."""
    text = normalize_newlines(text)
    start = locate_plan(text)
    preamble = text[:start]
    if preamble.endswith("\n"):
        preamble = preamble[:-1]
    parser = _Parser(text, start)
    plan = parser.parse_plan()
    steps = parser.parse_steps()
    conclusion = parser.parse_conclusion()
    doc = TraceDocument(
        plan=plan,
        steps=steps,
        conclusion=conclusion,
        preamble=preamble if preamble.strip() else None,
    )
    if strict:
        _raise_first(plan_violations(plan))
        _raise_first(step_violations(doc))
    return doc


def serialize_plan(plan: PlanDocument) -> str:
    """Canonical ``<Plan>`` block, one tag per line, free text escaped."""
    lines = ["<Plan>"]
    if plan.goal:
        lines.append(f"<Goal>{escape_text(plan.goal)}</Goal>")
    for outline in plan.outlines:
        description = escape_text(outline.description)
        lines.append(f'<Outline id="{outline.index}" deps="{outline.deps_attr()}">{description}</Outline>')
    lines.append("</Plan>")
    return "\n".join(lines)


def serialize_trace(doc: TraceDocument) -> str:
    """Canonical text: LF endings, one tag per line, trailing newline.

    Step, goal, outline and conclusion text is escaped with ``escape_text``;
    the preamble is written verbatim.
    """
    lines: List[str] = []
    if doc.preamble is not None:
        lines.append(doc.preamble)
    lines.append(serialize_plan(doc.plan))
    lines.append("<Execution>")
    for step in doc.steps:
        lines.append(f'<Step i="{step.index}">')
        if step.text:
            lines.append(escape_text(step.text))
        lines.append("</Step>")
    lines.append("</Execution>")
    lines.append("<Conclusion>")
    if doc.conclusion:
        lines.append(escape_text(doc.conclusion))
    lines.append("</Conclusion>")
    return "\n".join(lines) + "\n"


def plan_to_dag(plan: PlanDocument, single_conclusion: bool = True) -> ReasoningDag:
    """Map a plan to a DAG with one synthetic Source and one node per outline.

    Sinks become Conclusion nodes. Several sinks violate the single-conclusion
    policy unless ``single_conclusion`` is off.
    """
    violations = plan_violations(plan)
    if not violations.ok:
        raise InvalidGraphError(violations)

    edges = []
    for outline in plan.outlines:
        target = node_id(outline.index)
        preds = [d for d in outline.deps if d > 0]
        if not preds or 0 in outline.deps:
            edges.append((SOURCE_NODE, target))
        edges.extend((node_id(d), target) for d in preds)

    origins = {u for u, _ in edges}
    sinks = [node_id(o.index) for o in plan.outlines if node_id(o.index) not in origins]
    if single_conclusion and len(sinks) > 1:
        raise PolicyViolationError(
            f"plan has {len(sinks)} terminal outlines {sinks}; exactly one Conclusion is required",
            ",".join(sinks),
        )

    nodes = {SOURCE_NODE: ReasoningNode(label="source", role=NodeRole.SOURCE)}
    for outline in plan.outlines:
        nid = node_id(outline.index)
        role = NodeRole.CONCLUSION if nid in sinks else NodeRole.HYPOTHESIS
        nodes[nid] = ReasoningNode(label=outline.description, role=role)

    dag = ReasoningDag(nodes=nodes, edges=edges)
    report = validate_dag(dag)
    if not report.ok:
        raise InvalidGraphError(report)
    return dag


def verify_syntax(doc: TraceDocument, single_conclusion: bool = True) -> ValidationReport:
    """Report every failed trace invariant; ok iff the plan also compiles to a DAG."""
    report = ValidationReport()
    plan_report = plan_violations(doc.plan)
    report.extend(plan_report)
    report.extend(step_violations(doc))
    if doc.preamble is not None and _PLAN_OPEN.search(doc.preamble):
        report.add("MalformedTag", "preamble", "preamble contains a <Plan> tag")
    if not doc.conclusion.strip():
        report.add("MissingSection", "conclusion", "conclusion is empty")
    if plan_report.ok:
        try:
            plan_to_dag(doc.plan, single_conclusion=single_conclusion)
        except PolicyViolationError as e:
            report.add(e.code, e.location, str(e))
        except InvalidGraphError as e:
            report.extend(e.report, prefix="plan:")
    return report


def verify_trace_text(text: str, single_conclusion: bool = True) -> ValidationReport:
    """Parse leniently and verify; grammar errors are folded into the report."""
    try:
        doc = parse_trace(text, strict=False)
    except PlanFormatError as e:
        report = ValidationReport()
        report.add(e.code, e.location, str(e))
        return report
    return verify_syntax(doc, single_conclusion=single_conclusion)
