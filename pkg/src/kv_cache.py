"""Radix-tree prefix store backing SemanticToken cache references.

The store holds abstract token ids only; it is the index structure a serving
engine would map onto device KV memory. Sequences are addressed through
``SequenceHandle`` objects. A handle is an ordered list of radix nodes whose
spans, concatenated, spell the logical sequence. Plain handles follow one
root-to-leaf path; handles built by ``join_merge`` or ``compose`` chain several paths.

Every node listed by a handle has its parent listed earlier in the same
handle (or is a child of the root), so a node with a positive refcount never
has a reclaimed ancestor.
"""

import itertools
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import structlog

logger = structlog.get_logger()


class CacheError(Exception):
    """Base exception for prefix cache errors."""
    code = "CacheError"


class DeadHandleError(CacheError):
    """Raised when an operation uses a released or consumed handle."""
    code = "DeadHandle"


class DoubleReleaseError(CacheError):
    """Raised when a handle is released twice."""
    code = "DoubleRelease"


class NotAnExtensionError(CacheError):
    """Raised when a join branch does not extend the shared prefix."""
    code = "NotAnExtension"


@dataclass(eq=False)
class RadixNode:
    """A node of the radix tree. Identity, not value, defines equality."""

    node_id: int
    span: List[int]
    parent: Optional["RadixNode"] = None
    children: Dict[int, "RadixNode"] = field(default_factory=dict)
    refcount: int = 0
    attached: bool = True

    @property
    def physical_id(self) -> int:
        """Allocation handle of the node's token storage."""
        return self.node_id


@dataclass(eq=False)
class SequenceHandle:
    """A live reference to a logical token sequence in the store."""

    handle_id: int
    nodes: List[RadixNode]
    alive: bool = True

    @property
    def logical_length(self) -> int:
        """Number of tokens the handle spells."""
        return sum(len(node.span) for node in self.nodes)

    def node_ids(self) -> List[int]:
        return [node.node_id for node in self.nodes]

    def segment_offsets(self) -> List[Tuple[int, int]]:
        """(start, length) of each contiguous radix path within the sequence.

        A new segment starts wherever a node does not continue the path of
        the node before it, which for ``join_merge`` handles is at every
        branch suffix after the first.
        """
        offsets: List[Tuple[int, int]] = []
        cursor = 0
        previous: Optional[RadixNode] = None
        for node in self.nodes:
            length = len(node.span)
            if offsets and node.parent is previous:
                start, seg_len = offsets[-1]
                offsets[-1] = (start, seg_len + length)
            else:
                offsets.append((cursor, length))
            cursor += length
            previous = node
        return offsets


@dataclass
class CacheStats:
    """Exact storage accounting for the store."""

    nodes: int = 0
    physical_tokens: int = 0
    live_handles: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {
            "nodes": self.nodes,
            "physicalTokens": self.physical_tokens,
            "liveHandles": self.live_handles,
        }


def _common_prefix_len(left: Sequence[int], right: Sequence[int]) -> int:
    size = min(len(left), len(right))
    for i in range(size):
        if left[i] != right[i]:
            return i
    return size


def _insert_upper(nodes: Sequence[RadixNode], lower: RadixNode, upper: RadixNode) -> List[RadixNode]:
    """Node list with ``upper`` placed before every occurrence of a freshly split ``lower``."""
    rewritten: List[RadixNode] = []
    for node in nodes:
        if node is lower:
            rewritten.append(upper)
        rewritten.append(node)
    return rewritten


class RadixCache:
    """Refcounted radix prefix store with zero-copy fork and join.

    Structural mutations are serialized by an internal lock; handles may be
    passed between workers.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._node_ids = itertools.count(1)
        self._handle_ids = itertools.count(1)
        self.root = RadixNode(node_id=0, span=[])
        self._handles: Dict[int, SequenceHandle] = {}
        # Counts node visits made by structural operations.
        self.op_count = 0

    # -- handle lifecycle ---------------------------------------------------

    def new_handle(self) -> SequenceHandle:
        """Create a live handle for the empty sequence."""
        with self._lock:
            return self._register([])

    def append(self, handle: SequenceHandle, tokens: Sequence[int]) -> SequenceHandle:
        """Extend ``handle`` with ``tokens``; the input handle is consumed.

        Existing spans are never copied. A tail node shared with other
        handles stays untouched and the new tokens go into a child node (or
        reuse a matching child, splitting it at the divergence point).
        """
        with self._lock:
            self._check_alive(handle)
            tokens = list(tokens)
            if not tokens:
                return handle

            tail = handle.nodes[-1] if handle.nodes else self.root
            if tail is not self.root and tail.refcount == 1 and not tail.children:
                self.op_count += 1
                tail.span.extend(tokens)
                new_nodes = list(handle.nodes)
            else:
                path = self._insert_below(tail, tokens)
                new_nodes = list(handle.nodes) + path

            extended = self._register(new_nodes)
            self._drop(handle)
            return extended

    def fork(self, handle: SequenceHandle, n: int) -> List[SequenceHandle]:
        """Create ``n`` handles sharing the content of ``handle``.

        The original handle stays live. No token storage is allocated.
        """
        if n < 1:
            raise ValueError("fork requires n >= 1")
        with self._lock:
            self._check_alive(handle)
            return [self._register(list(handle.nodes)) for _ in range(n)]

    def prefix(self, handle: SequenceHandle, length: int) -> SequenceHandle:
        """Create a handle for the first ``length`` tokens of ``handle``."""
        with self._lock:
            self._check_alive(handle)
            if length < 0 or length > handle.logical_length:
                raise ValueError(
                    f"prefix length {length} outside [0, {handle.logical_length}]"
                )
            nodes: List[RadixNode] = []
            covered = 0
            for node in list(handle.nodes):
                if covered == length:
                    break
                self.op_count += 1
                if covered + len(node.span) <= length:
                    nodes.append(node)
                    covered += len(node.span)
                else:
                    upper = self._split(node, length - covered)
                    nodes = _insert_upper(nodes, node, upper) + [upper]
                    covered = length
            return self._register(nodes)

    def join_merge(
        self, handles: Sequence[SequenceHandle], shared_prefix: SequenceHandle
    ) -> SequenceHandle:
        """Build a composite handle: shared prefix, then each branch suffix in order.

        The composite references existing nodes only; no tokens are copied and
        nothing is padded.
        """
        with self._lock:
            self._check_alive(shared_prefix)
            prefix_nodes = shared_prefix.nodes
            composite = list(prefix_nodes)
            for position, handle in enumerate(handles):
                self._check_alive(handle)
                head = handle.nodes[: len(prefix_nodes)]
                self.op_count += len(handle.nodes)
                if len(head) != len(prefix_nodes) or any(
                    a is not b for a, b in zip(head, prefix_nodes)
                ):
                    raise NotAnExtensionError(
                        f"branch {position} (handle {handle.handle_id}) does not extend "
                        f"prefix handle {shared_prefix.handle_id}"
                    )
                composite.extend(handle.nodes[len(prefix_nodes):])
            return self._register(composite)

    def compose(self, pieces: Sequence[Tuple[SequenceHandle, int, int]]) -> SequenceHandle:
        """Build a composite handle spelling token ranges ``[start, end)`` of live handles.

        Nodes are split so that every range boundary falls between nodes; the
        composite then references the existing nodes of each range in order.
        Every node must follow its parent somewhere earlier in the composite,
        otherwise NotAnExtensionError is raised.
        Joins whose branches hold a shared segment at different offsets use
        this instead of ``join_merge``.
        """
        with self._lock:
            for handle, start, end in pieces:
                self._check_alive(handle)
                if not 0 <= start <= end <= handle.logical_length:
                    raise ValueError(
                        f"range [{start}, {end}) outside handle {handle.handle_id} "
                        f"of length {handle.logical_length}"
                    )
            # Cut every boundary before collecting any range.
            for handle, start, end in pieces:
                self._cut(handle, start)
                self._cut(handle, end)
            composite: List[RadixNode] = []
            for handle, start, end in pieces:
                composite.extend(self._between(handle, start, end))
            listed: Set[int] = set()
            for node in composite:
                parent = node.parent
                if parent is not None and parent is not self.root and parent.node_id not in listed:
                    raise NotAnExtensionError(
                        f"node {node.node_id} is listed before its parent {parent.node_id}"
                    )
                listed.add(node.node_id)
            return self._register(composite)

    def release(self, handle: SequenceHandle) -> None:
        """Release a handle, reclaiming nodes no live handle references."""
        with self._lock:
            if not handle.alive:
                raise DoubleReleaseError(f"handle {handle.handle_id} already released")
            reclaimed = self._drop(handle)
            if reclaimed:
                logger.debug(f"Reclaimed {reclaimed} radix nodes after releasing handle {handle.handle_id}")

    # -- inspection -----------------------------------------------------------

    def materialize(self, handle: SequenceHandle) -> List[int]:
        """Return the logical token sequence of a live handle."""
        with self._lock:
            self._check_alive(handle)
            tokens: List[int] = []
            for node in handle.nodes:
                tokens.extend(node.span)
            return tokens

    def stats(self) -> CacheStats:
        """Node count, physical tokens held and live handles."""
        with self._lock:
            nodes = self._attached_nodes()
            return CacheStats(
                nodes=len(nodes),
                physical_tokens=sum(len(node.span) for node in nodes),
                live_handles=len(self._handles),
            )

    def dump(self) -> Dict[str, Any]:
        """JSON-ready snapshot of the tree for golden-file debugging."""
        with self._lock:
            nodes = sorted(self._attached_nodes(), key=lambda n: n.node_id)
            return {
                "nodes": [
                    {
                        "id": node.node_id,
                        "parent": node.parent.node_id if node.parent else 0,
                        "span": list(node.span),
                        "refcount": node.refcount,
                        "children": sorted(child.node_id for child in node.children.values()),
                    }
                    for node in nodes
                ],
                "handles": [
                    {"id": h.handle_id, "nodes": h.node_ids(), "length": h.logical_length}
                    for h in sorted(self._handles.values(), key=lambda h: h.handle_id)
                ],
                "stats": self.stats().to_dict(),
            }

    def check_invariants(self) -> List[str]:
        """Return a description of every broken structural invariant."""
        with self._lock:
            problems: List[str] = []
            expected: Dict[int, int] = {}
            for handle in self._handles.values():
                for node in handle.nodes:
                    expected[node.node_id] = expected.get(node.node_id, 0) + 1
                    if not node.attached:
                        problems.append(f"handle {handle.handle_id} references reclaimed node {node.node_id}")
            for node in self._attached_nodes():
                if node.refcount != expected.get(node.node_id, 0):
                    problems.append(
                        f"node {node.node_id} refcount {node.refcount} != {expected.get(node.node_id, 0)}"
                    )
                if node.refcount <= 0:
                    problems.append(f"reachable node {node.node_id} has refcount {node.refcount}")
                for key, child in node.children.items():
                    if not child.span or child.span[0] != key:
                        problems.append(f"node {child.node_id} keyed by {key} starts with {child.span[:1]}")
            for key, child in self.root.children.items():
                if not child.span or child.span[0] != key:
                    problems.append(f"node {child.node_id} keyed by {key} starts with {child.span[:1]}")
            return problems

    # -- internals ------------------------------------------------------------

    def _check_alive(self, handle: SequenceHandle) -> None:
        if not handle.alive:
            raise DeadHandleError(f"handle {handle.handle_id} is not live")

    def _register(self, nodes: List[RadixNode]) -> SequenceHandle:
        handle = SequenceHandle(handle_id=next(self._handle_ids), nodes=nodes)
        for node in nodes:
            node.refcount += 1
            self.op_count += 1
        self._handles[handle.handle_id] = handle
        return handle

    def _drop(self, handle: SequenceHandle) -> int:
        handle.alive = False
        self._handles.pop(handle.handle_id, None)
        for node in handle.nodes:
            node.refcount -= 1
            self.op_count += 1
        reclaimed = 0
        for node in reversed(handle.nodes):
            current: Optional[RadixNode] = node
            while (
                current is not None
                and current is not self.root
                and current.attached
                and current.refcount == 0
                and not current.children
            ):
                parent = current.parent
                if parent is not None:
                    parent.children.pop(current.span[0], None)
                current.attached = False
                reclaimed += 1
                current = parent
        return reclaimed

    def _new_node(self, span: List[int], parent: RadixNode) -> RadixNode:
        node = RadixNode(node_id=next(self._node_ids), span=list(span), parent=parent)
        parent.children[node.span[0]] = node
        return node

    def _insert_below(self, tail: RadixNode, tokens: List[int]) -> List[RadixNode]:
        """Return the node chain under ``tail`` spelling ``tokens``, creating it as needed."""
        path: List[RadixNode] = []
        node = tail
        i = 0
        while i < len(tokens):
            self.op_count += 1
            child = node.children.get(tokens[i])
            if child is None:
                path.append(self._new_node(tokens[i:], parent=node))
                return path
            common = _common_prefix_len(child.span, tokens[i:])
            if common < len(child.span):
                child = self._split(child, common)
            path.append(child)
            i += common
            node = child
        return path

    def _split(self, node: RadixNode, at: int) -> RadixNode:
        """Split ``node`` after ``at`` tokens and return the new upper node.

        Live handles listing ``node`` are rewritten to list the upper node
        right before it; logical content is unchanged.
        """
        parent = node.parent
        assert parent is not None and 0 < at < len(node.span)
        upper = RadixNode(
            node_id=next(self._node_ids),
            span=node.span[:at],
            parent=parent,
            refcount=node.refcount,
        )
        parent.children[upper.span[0]] = upper
        node.span = node.span[at:]
        node.parent = upper
        upper.children[node.span[0]] = node

        for handle in self._handles.values():
            if any(n is node for n in handle.nodes):
                handle.nodes = _insert_upper(handle.nodes, node, upper)
                self.op_count += len(handle.nodes)
        return upper

    def _cut(self, handle: SequenceHandle, offset: int) -> None:
        """Make ``offset`` fall on a node boundary of ``handle``."""
        cursor = 0
        for node in handle.nodes:
            if cursor >= offset:
                return
            self.op_count += 1
            if cursor + len(node.span) > offset:
                self._split(node, offset - cursor)
                return
            cursor += len(node.span)

    def _between(self, handle: SequenceHandle, start: int, end: int) -> List[RadixNode]:
        """Nodes of ``handle`` covering ``[start, end)``; both ends must be node boundaries."""
        nodes: List[RadixNode] = []
        cursor = 0
        for node in handle.nodes:
            if cursor >= end:
                break
            if cursor >= start:
                nodes.append(node)
            cursor += len(node.span)
        return nodes

    def _attached_nodes(self) -> List[RadixNode]:
        found: List[RadixNode] = []
        stack = list(self.root.children.values())
        while stack:
            node = stack.pop()
            found.append(node)
            stack.extend(node.children.values())
        return found
