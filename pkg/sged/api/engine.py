"""
The modifying engine executes an edit program over a scene graph. Tokens run in reverse
emission order over a stack of attention sets (node id sets); the edit token, emitted
first, runs last against the top set. The input graph is never modified.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Set, Tuple

from sged import logger

from .dsl import FILTER_ATTRIBUTES, Opcode, Program, ProgramToken, validate_for_variant
from .exceptions import ExecutionError
from .scene import (
    GRID_CELLS,
    NULL,
    VALUE_TO_ATTRIBUTE,
    WILDCARD,
    WILDCARD_RELATION,
    EdgeLabels,
    ObjectNode,
    RelationLabel,
    SceneGraph,
    Variant,
    with_axis_label,
)

PSEUDO_NODE_ID = "added"


@dataclass
class TraceStep:
    index: int  # emission index of the token
    token: ProgramToken
    attended: Tuple[str, ...]
    delta: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "token": self.token.render(),
            "attended": list(self.attended),
            "delta": self.delta,
        }


@dataclass
class ExecutionTrace:
    steps: List[TraceStep] = field(default_factory=list)
    error: Optional[str] = None

    def __len__(self):
        return len(self.steps)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "steps": [step.to_dict() for step in self.steps],
            "error": self.error,
        }


class AttentionState:
    """
    Working state of one execution: the attention stack plus a private, mutable copy of
    the graph being edited.
    """

    def __init__(self, graph: SceneGraph, program: Program):
        self.graph = graph
        self.variant = graph.variant
        self.nodes: Dict[str, ObjectNode] = {node.id: node for node in graph.nodes}
        self.edges: Dict[Tuple[str, str], EdgeLabels] = dict(graph.edges)
        self.stack: List[Set[str]] = []
        self.pseudo_id: Optional[str] = None
        self.assigning_relates: Set[int] = set()

        edit = program.edit
        if self.variant is Variant.RELATIONAL and edit is not None and edit.opcode is Opcode.ADD:
            self.enter_add_mode(edit)
            self.assigning_relates = find_assigning_relates(program.non_pad())

    @property
    def add_mode(self) -> bool:
        return self.pseudo_id is not None

    @property
    def top(self) -> Set[str]:
        if not self.stack:
            raise ExecutionError("attention stack underflow")
        return self.stack[-1]

    def push(self, ids: Set[str]) -> None:
        self.stack.append(set(ids))

    def pop(self) -> Set[str]:
        if not self.stack:
            raise ExecutionError("attention stack underflow")
        return self.stack.pop()

    def replace_top(self, ids: Set[str]) -> None:
        self.pop()
        self.push(ids)

    def real_node_ids(self) -> Set[str]:
        return {node_id for node_id in self.nodes if node_id != self.pseudo_id}

    def enter_add_mode(self, edit: ProgramToken) -> None:
        pseudo_id = PSEUDO_NODE_ID
        n = 1
        while pseudo_id in self.nodes:
            pseudo_id = f"{PSEUDO_NODE_ID}{n}"
            n += 1

        attrs = {attribute: WILDCARD for attribute in self.graph.schema}
        attrs.update(payload_attrs(edit))

        for node_id in self.nodes:
            self.edges[(pseudo_id, node_id)] = WILDCARD_RELATION
            self.edges[(node_id, pseudo_id)] = WILDCARD_RELATION

        self.nodes[pseudo_id] = ObjectNode(id=pseudo_id, attrs=attrs)
        self.pseudo_id = pseudo_id

    def assign_pseudo_edge(self, target: str, label: RelationLabel) -> None:
        assert self.pseudo_id is not None
        key = (self.pseudo_id, target)
        reverse = (target, self.pseudo_id)
        self.edges[key] = with_axis_label(self.edges[key], label)
        self.edges[reverse] = with_axis_label(self.edges[reverse], label.inverse)

    def grid_node_at(self, cell: int) -> str:
        return list(self.nodes.keys())[cell]

    def finalize(self) -> SceneGraph:
        return SceneGraph(
            variant=self.variant,
            nodes=tuple(self.nodes.values()),
            edges=self.edges if self.variant is Variant.RELATIONAL else {},
        )


def payload_attrs(token: ProgramToken) -> Dict[str, str]:
    return {VALUE_TO_ATTRIBUTE[value]: value for value in token.args}


def find_assigning_relates(tokens: Tuple[ProgramToken, ...]) -> Set[int]:
    """
    Find the Relate tokens that fix the added node's edges: the one emitted right after
    `add`, or, when that token is an Intersect, the last Relate of each of its operand
    chains. The emitted sequence reads as a prefix expression, with an implicit Scene
    leaf at its end.
    """

    ends: Dict[int, int] = {}

    def parse(i: int) -> int:
        # Returns the index after the expression starting at i
        if i >= len(tokens):
            return i
        opcode = tokens[i].opcode
        if opcode is Opcode.SCENE:
            end = i + 1
        elif opcode is Opcode.INTERSECT:
            end = parse(parse(i + 1))
        else:
            end = parse(i + 1)
        ends[i] = end
        return end

    if len(tokens) < 2:
        return set()

    parse(1)

    assigning = set()
    pending = [1]
    while pending:
        i = pending.pop()
        if i >= len(tokens):
            continue
        opcode = tokens[i].opcode
        if opcode is Opcode.RELATE:
            assigning.add(i)
        elif opcode is Opcode.INTERSECT:
            pending.append(i + 1)
            pending.append(ends.get(i + 1, len(tokens)))
    return assigning


# Token handlers
#
# Each takes (state, token, emission index) and returns a short delta description


def _scene(state: AttentionState, token: ProgramToken, index: int) -> str:
    state.push(state.real_node_ids())
    return ""


def _filter(state: AttentionState, token: ProgramToken, index: int) -> str:
    attribute = FILTER_ATTRIBUTES[token.opcode]
    value = token.args[0]
    state.replace_top(
        {
            node_id
            for node_id in state.top
            if state.nodes[node_id].get(attribute) in (value, WILDCARD)
        },
    )
    return ""


def _location(state: AttentionState, token: ProgramToken, index: int) -> str:
    if state.variant is not Variant.GRID:
        raise ExecutionError(f"token {index} ({token.render()}): location needs a grid scene")

    cell = GRID_CELLS.index(token.args[0])
    state.replace_top({state.grid_node_at(cell)})
    return ""


def _relate(state: AttentionState, token: ProgramToken, index: int) -> str:
    if state.variant is not Variant.RELATIONAL:
        raise ExecutionError(f"token {index} ({token.render()}): relate needs relations")

    top = state.top
    if len(top) != 1:
        raise ExecutionError(
            "token {0} ({1}): relate needs exactly one attended object (got {2})".format(
                index,
                token.render(),
                len(top),
            ),
        )

    (anchor,) = top
    label = RelationLabel(token.args[0])

    if state.add_mode and index in state.assigning_relates:
        state.assign_pseudo_edge(anchor, label)
        state.replace_top({state.pseudo_id})  # type: ignore[arg-type]
        return f"{state.pseudo_id} {label.value} of {anchor}"

    state.replace_top(
        {
            node_id
            for node_id in state.real_node_ids()
            if node_id != anchor and label in state.edges.get((node_id, anchor), ())
        },
    )
    return ""


def _intersect(state: AttentionState, token: ProgramToken, index: int) -> str:
    if len(state.stack) < 2:
        raise ExecutionError(f"token {index} ({token.render()}): attention stack underflow")

    first = state.pop()
    second = state.pop()
    state.push(first & second)
    return ""


def _remove(state: AttentionState, token: ProgramToken, index: int) -> str:
    removed = sorted(state.top, key=list(state.nodes.keys()).index)

    if state.variant is Variant.GRID:
        for node_id in removed:
            node = state.nodes[node_id]
            state.nodes[node_id] = ObjectNode(
                id=node.id,
                attrs={attribute: NULL for attribute in node.attrs},
            )
        return "cleared {0}".format(", ".join(removed))

    for node_id in removed:
        del state.nodes[node_id]

    state.edges = {
        (src, dst): labels
        for (src, dst), labels in state.edges.items()
        if src not in state.top and dst not in state.top
    }
    return "removed {0}".format(", ".join(removed))


def _make(state: AttentionState, token: ProgramToken, index: int) -> str:
    value = token.args[0]
    attribute = VALUE_TO_ATTRIBUTE[value]

    changed = []
    for node_id in sorted(state.top, key=list(state.nodes.keys()).index):
        state.nodes[node_id] = state.nodes[node_id].with_attrs(**{attribute: value})
        changed.append(node_id)

    return "set {0}={1} on {2}".format(attribute, value, ", ".join(changed))


def _add(state: AttentionState, token: ProgramToken, index: int) -> str:
    if state.variant is Variant.RELATIONAL:
        return f"added {state.pseudo_id}"

    (node_id,) = state.top
    attrs = {attribute: WILDCARD for attribute in state.graph.schema}
    attrs.update(payload_attrs(token))
    state.nodes[node_id] = ObjectNode(id=node_id, attrs=attrs)
    return "wrote {0} into {1}".format(
        " ".join(f"{key}={value}" for key, value in attrs.items()),
        node_id,
    )


TOKEN_HANDLERS: Dict[Opcode, Callable[[AttentionState, ProgramToken, int], str]] = {
    Opcode.SCENE: _scene,
    Opcode.FILTER_SHAPE: _filter,
    Opcode.FILTER_SIZE: _filter,
    Opcode.FILTER_COLOR: _filter,
    Opcode.FILTER_MATERIAL: _filter,
    Opcode.LOCATION: _location,
    Opcode.RELATE: _relate,
    Opcode.INTERSECT: _intersect,
    Opcode.REMOVE: _remove,
    Opcode.MAKE: _make,
    Opcode.ADD: _add,
}


def _edit_error(state: AttentionState, token: ProgramToken) -> Optional[str]:
    attended = state.top

    if token.opcode is Opcode.ADD and state.variant is Variant.RELATIONAL:
        # Without a relation the added object is placed unconstrained
        if state.assigning_relates and state.pseudo_id not in attended:
            return f"{token.render()}: the added object is not attended"
        return None

    if not attended:
        return f"{token.render()}: nothing is attended"

    if token.opcode is Opcode.ADD and len(attended) != 1:
        return f"{token.render()}: add needs exactly one attended cell (got {len(attended)})"

    return None


def execute(program: Program, graph: SceneGraph) -> Tuple[SceneGraph, ExecutionTrace]:
    """
    Execute ``program`` over ``graph``, returning the edited graph and the trace.

    An edit whose attended set is empty (or, for add, unusable) leaves the graph
    unmodified and sets ``trace.error``; malformed programs raise ``ExecutionError``.
    """

    validate_for_variant(program, graph.variant)

    tokens = program.non_pad()
    trace = ExecutionTrace()

    if not tokens:
        return graph, trace

    state = AttentionState(graph, program)
    state.push(state.real_node_ids())

    for index in reversed(range(len(tokens))):
        token = tokens[index]

        if token.is_edit:
            error = _edit_error(state, token)
            if error:
                logger.debug("Edit not applied: %s", error)
                trace.steps.append(TraceStep(index, token, tuple(sorted(state.top))))
                trace.error = error
                return graph, trace

        delta = TOKEN_HANDLERS[token.opcode](state, token, index)

        attended = tuple(sorted(state.stack[-1])) if state.stack else ()
        trace.steps.append(TraceStep(index, token, attended, delta))
        logger.debug("Executed %s -> %s %s", token.render(), attended, delta)

    if program.edit is None:
        return graph, trace

    return state.finalize(), trace
