"""DOT export of reasoning DAGs and Petri nets using Jinja2 templates."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from .models import NodeRole, PetriNet, ReasoningDag

_ROLE_SHAPES = {
    NodeRole.SOURCE: "doublecircle",
    NodeRole.HYPOTHESIS: "ellipse",
    NodeRole.CONCLUSION: "doubleoctagon",
}


def _dot_id(value: Any) -> str:
    """Quote a value as a DOT string literal."""
    return json.dumps(str(value), ensure_ascii=False)


class DotRenderer:
    """Renders DAGs and nets; node and arc order is ascending by id."""

    def __init__(self, template_dir: Optional[Path] = None):
        template_dir = template_dir or Path(__file__).parent.parent / "templates" / "dot"
        self.env = Environment(
            loader=FileSystemLoader(template_dir),
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
            undefined=StrictUndefined,
        )
        self.env.filters["dot_id"] = _dot_id

    def render_dag(self, dag: ReasoningDag, name: str = "reasoning") -> str:
        nodes: List[Dict[str, str]] = []
        for node_id in dag.node_ids():
            node = dag.nodes[node_id]
            label = f"{node_id}: {node.label}" if node.label and node.label != node_id else node_id
            nodes.append({"id": node_id, "label": label, "shape": _ROLE_SHAPES[node.role]})
        template = self.env.get_template("dag.dot.j2")
        return template.render(name=name, nodes=nodes, edges=list(dag.edges))

    def render_petri(self, net: PetriNet, name: str = "net") -> str:
        places = [
            {"id": place, "label": place, "marked": net.initial_marking.get(place) is not None}
            for place in net.places
        ]
        transitions = [
            {"id": trans_id, "label": net.transitions[trans_id].label or trans_id}
            for trans_id in net.transition_ids()
        ]
        template = self.env.get_template("petri.dot.j2")
        return template.render(name=name, places=places, transitions=transitions, arcs=sorted(net.arcs))


def render_dag_dot(dag: ReasoningDag, name: str = "reasoning") -> str:
    return DotRenderer().render_dag(dag, name=name)


def render_petri_dot(net: PetriNet, name: str = "net") -> str:
    return DotRenderer().render_petri(net, name=name)
