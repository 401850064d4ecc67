"""
Scene graphs are the symbolic form of a rendered scene: one attributed node per object
and, for relational scenes, a pair of spatial relation labels on every ordered pair of
objects. Grid scenes instead carry a fixed 3x3 set of slots and no edges at all.

Scenes are read from and written to a small JSON document (see ``serialize_scene``).
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from itertools import permutations
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from sged import logger

from .exceptions import SceneError, SceneVariantError, SceneVocabularyError

NULL = "null"
WILDCARD = "*"

SHAPES = ("cube", "sphere", "cylinder")
SIZES = ("small", "large")
COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
MATERIALS = ("metal", "rubber")

VOCABULARIES: Dict[str, Tuple[str, ...]] = {
    "shape": SHAPES,
    "size": SIZES,
    "color": COLORS,
    "material": MATERIALS,
}

# The vocabularies are disjoint, so a value names its attribute
VALUE_TO_ATTRIBUTE = {value: attr for attr, values in VOCABULARIES.items() for value in values}

GRID_SCHEMA = ("shape", "size", "color")
RELATIONAL_SCHEMA = ("shape", "size", "color", "material")

# Grid split boundaries in scene units: columns along x, rows along y
GRID_X_BOUNDS = (-0.99, 0.86)
GRID_Y_BOUNDS = (-0.47, 2.35)
GRID_SIZE = 9
GRID_CELLS = ("TL", "TM", "TR", "ML", "MM", "MR", "BL", "BM", "BR")

Position = Tuple[float, float, float]


class Variant(str, Enum):
    GRID = "grid"
    RELATIONAL = "relational"

    @property
    def schema(self) -> Tuple[str, ...]:
        if self is Variant.GRID:
            return GRID_SCHEMA
        return RELATIONAL_SCHEMA


class RelationLabel(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    FRONT = "front"
    BEHIND = "behind"

    @property
    def inverse(self) -> "RelationLabel":
        return _INVERSE_LABELS[self]

    @property
    def axis(self) -> str:
        if self in (RelationLabel.LEFT, RelationLabel.RIGHT):
            return "horizontal"
        return "depth"


_INVERSE_LABELS = {
    RelationLabel.LEFT: RelationLabel.RIGHT,
    RelationLabel.RIGHT: RelationLabel.LEFT,
    RelationLabel.FRONT: RelationLabel.BEHIND,
    RelationLabel.BEHIND: RelationLabel.FRONT,
}

RELATION_AXES = ("horizontal", "depth")

# An edge carries at most one label per axis; a missing axis matches any label
EdgeLabels = FrozenSet[RelationLabel]
WILDCARD_RELATION: EdgeLabels = frozenset()


def invert_labels(labels: EdgeLabels) -> EdgeLabels:
    return frozenset(label.inverse for label in labels)


def axis_label(labels: EdgeLabels, axis: str) -> Optional[RelationLabel]:
    for label in labels:
        if label.axis == axis:
            return label
    return None


def with_axis_label(labels: EdgeLabels, label: RelationLabel) -> EdgeLabels:
    """
    Return ``labels`` with the axis of ``label`` set to ``label``.
    """

    return frozenset(
        [existing for existing in labels if existing.axis != label.axis] + [label],
    )


@dataclass(frozen=True)
class ObjectNode:
    id: str
    attrs: Mapping[str, str]
    position: Optional[Position] = None

    def __post_init__(self):
        # Private copy so callers can't mutate a node through the mapping they passed in
        object.__setattr__(self, "attrs", dict(self.attrs))
        if self.position is not None:
            object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    def get(self, attribute: str) -> str:
        return self.attrs.get(attribute, NULL)

    @property
    def is_empty(self) -> bool:
        return all(value == NULL for value in self.attrs.values())

    @property
    def has_wildcard(self) -> bool:
        return any(value == WILDCARD for value in self.attrs.values())

    def with_attrs(self, position=False, **updates: str) -> "ObjectNode":
        attrs = dict(self.attrs)
        attrs.update(updates)
        return ObjectNode(
            id=self.id,
            attrs=attrs,
            position=self.position if position is False else position,
        )

    def describe(self) -> str:
        bits = [
            self.attrs[key] for key in ("size", "color", "material", "shape") if key in self.attrs
        ]
        return "{0}({1})".format(self.id, " ".join(bits))


@dataclass(frozen=True)
class SceneGraph:
    variant: Variant
    nodes: Tuple[ObjectNode, ...]
    edges: Mapping[Tuple[str, str], EdgeLabels] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(
            self,
            "edges",
            {key: frozenset(labels) for key, labels in sorted(self.edges.items())},
        )
        check_graph(self)

    def __len__(self):
        return len(self.nodes)

    @property
    def schema(self) -> Tuple[str, ...]:
        return self.variant.schema

    @property
    def node_ids(self) -> List[str]:
        return [node.id for node in self.nodes]

    def node(self, node_id: str) -> ObjectNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise SceneError(f"No node with id: {node_id}")

    def index(self, node_id: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.id == node_id:
                return i
        raise SceneError(f"No node with id: {node_id}")

    def edge(self, src: str, dst: str) -> EdgeLabels:
        return self.edges.get((src, dst), WILDCARD_RELATION)

    @property
    def is_wildcard_free(self) -> bool:
        if any(node.has_wildcard for node in self.nodes):
            return False
        if self.variant is Variant.RELATIONAL:
            return all(len(labels) == len(RELATION_AXES) for labels in self.edges.values())
        return True

    @property
    def object_count(self) -> int:
        return sum(1 for node in self.nodes if not node.is_empty)

    def canonical_key(self) -> str:
        return serialize_scene(self)


def check_graph(graph: SceneGraph) -> None:
    schema = graph.schema
    seen_ids = set()

    for i, node in enumerate(graph.nodes):
        if node.id in seen_ids:
            raise SceneError(f"nodes[{i}].id: duplicate node id: {node.id}")
        seen_ids.add(node.id)

        if set(node.attrs.keys()) != set(schema):
            raise SceneVariantError(
                "nodes[{0}]: {1} scenes use attributes {2} (got {3})".format(
                    i,
                    graph.variant.value,
                    ", ".join(schema),
                    ", ".join(sorted(node.attrs.keys())),
                ),
            )

        for attribute in schema:
            check_attribute_value(attribute, node.attrs[attribute], f"nodes[{i}].{attribute}")

    if graph.variant is Variant.GRID:
        if len(graph.nodes) != GRID_SIZE:
            raise SceneVariantError(
                f"grid scenes have exactly {GRID_SIZE} nodes (got {len(graph.nodes)})",
            )
        if graph.edges:
            raise SceneVariantError("grid scenes have no edges")
        for i, node in enumerate(graph.nodes):
            if node.position is not None and grid_cell(node.position) != i:
                raise SceneVariantError(
                    "nodes[{0}].position: {1} falls in cell {2}, not {3}".format(
                        i,
                        list(node.position),
                        GRID_CELLS[grid_cell(node.position)],
                        GRID_CELLS[i],
                    ),
                )
        return

    for src, dst in permutations(graph.node_ids, 2):
        if (src, dst) not in graph.edges:
            raise SceneVariantError(f"edges: missing edge {src} -> {dst}")

        labels = graph.edges[(src, dst)]
        for axis in RELATION_AXES:
            if sum(1 for label in labels if label.axis == axis) > 1:
                raise SceneVariantError(f"edges: {src} -> {dst} has two {axis} labels")

        if graph.edges.get((dst, src)) != invert_labels(labels):
            raise SceneVariantError(f"edges: {dst} -> {src} is not the inverse of {src} -> {dst}")

    for src, dst in graph.edges:
        if src == dst or src not in seen_ids or dst not in seen_ids:
            raise SceneVariantError(f"edges: invalid edge {src} -> {dst}")


def check_attribute_value(attribute: str, value: str, location: str) -> None:
    if value in (NULL, WILDCARD):
        return

    vocabulary = VOCABULARIES.get(attribute)
    if vocabulary is None:
        raise SceneVocabularyError(f"{location}: unknown attribute: {attribute}")

    if value not in vocabulary:
        raise SceneVocabularyError(
            "{0}: unknown {1} {2!r} (expected one of: {3})".format(
                location,
                attribute,
                value,
                ", ".join(vocabulary),
            ),
        )


def grid_cell(position: Sequence[float]) -> int:
    """
    Map a position to its 3x3 grid cell (0..8, row-major from top-left). Boundary values
    belong to the middle band; larger y is the top row.
    """

    x, y = position[0], position[1]
    low_x, high_x = GRID_X_BOUNDS
    low_y, high_y = GRID_Y_BOUNDS

    if x < low_x:
        column = 0
    elif x <= high_x:
        column = 1
    else:
        column = 2

    if y > high_y:
        row = 0
    elif y >= low_y:
        row = 1
    else:
        row = 2

    return 3 * row + column


def empty_node(node_id: str, schema: Sequence[str]) -> ObjectNode:
    return ObjectNode(id=node_id, attrs={attribute: NULL for attribute in schema})


def build_grid_graph(objects: Iterable[ObjectNode]) -> SceneGraph:
    objects = list(objects)
    if len(objects) > GRID_SIZE:
        raise SceneVariantError(
            f"grid scenes hold at most {GRID_SIZE} objects (got {len(objects)})",
        )

    cells: List[Optional[ObjectNode]] = [None] * GRID_SIZE

    for obj in objects:
        if obj.position is None:
            raise SceneError(f"object {obj.id} has no position")

        cell = grid_cell(obj.position)
        occupant = cells[cell]
        if occupant is not None:
            raise SceneVariantError(
                "objects {0} and {1} both fall in grid cell {2}".format(
                    occupant.id,
                    obj.id,
                    GRID_CELLS[cell],
                ),
            )
        cells[cell] = obj

    nodes = [
        obj if obj is not None else empty_node(f"cell{i}", GRID_SCHEMA)
        for i, obj in enumerate(cells)
    ]
    return SceneGraph(variant=Variant.GRID, nodes=tuple(nodes))


def derive_edges(nodes: Sequence[ObjectNode]) -> Dict[Tuple[str, str], EdgeLabels]:
    """
    Derive relation edges from coordinates: ``src`` is Left of ``dst`` when it has the
    smaller x and in Front when it has the smaller y.
    """

    for node in nodes:
        if node.position is None:
            raise SceneError(f"object {node.id} has no position")

    for a, b in permutations(nodes, 2):
        for axis, name in ((0, "x"), (1, "y")):
            if a.position[axis] == b.position[axis]:  # type: ignore[index]
                raise SceneError(
                    f"objects {a.id} and {b.id} share the {name} coordinate "
                    f"{a.position[axis]}",  # type: ignore[index]
                )

    edges = {}
    for a, b in permutations(nodes, 2):
        ax, ay = a.position[0], a.position[1]  # type: ignore[index]
        bx, by = b.position[0], b.position[1]  # type: ignore[index]
        horizontal = RelationLabel.LEFT if ax < bx else RelationLabel.RIGHT
        depth = RelationLabel.FRONT if ay < by else RelationLabel.BEHIND
        edges[(a.id, b.id)] = frozenset((horizontal, depth))

    return edges


def build_relational_graph(objects: Iterable[ObjectNode]) -> SceneGraph:
    nodes = tuple(objects)

    seen = set()
    for node in nodes:
        if node.id in seen:
            raise SceneError(f"duplicate node id: {node.id}")
        seen.add(node.id)

    return SceneGraph(variant=Variant.RELATIONAL, nodes=nodes, edges=derive_edges(nodes))


# Scene files
#


def scene_to_dict(graph: SceneGraph) -> Dict[str, Any]:
    nodes = []
    for node in graph.nodes:
        data: Dict[str, Any] = {"id": node.id}
        for attribute in graph.schema:
            data[attribute] = node.attrs[attribute]
        if node.position is not None:
            data["position"] = list(node.position)
        nodes.append(data)

    scene: Dict[str, Any] = {"variant": graph.variant.value, "nodes": nodes}

    # Edges are derived on load; only graphs holding an unplaced node (an added
    # pseudo-node) need them spelled out.
    if graph.variant is Variant.RELATIONAL and any(node.position is None for node in graph.nodes):
        scene["edges"] = [
            [src, dst, sorted(label.value for label in labels)]
            for (src, dst), labels in graph.edges.items()
        ]

    return scene


def serialize_scene(graph: SceneGraph) -> str:
    return json.dumps(scene_to_dict(graph), indent=4)


def _parse_position(value: Any, location: str) -> Position:
    if not isinstance(value, list) or len(value) != 3:
        raise SceneError(f"{location}: position must be a list of 3 numbers")

    coords = []
    for coord in value:
        if isinstance(coord, bool) or not isinstance(coord, (int, float)):
            raise SceneError(f"{location}: position must be a list of 3 numbers")
        coords.append(float(coord))
    return coords[0], coords[1], coords[2]


def scene_from_dict(data: Any, source: str = "scene") -> SceneGraph:
    if not isinstance(data, dict):
        raise SceneError(f"{source}: expected a mapping with `variant` and `nodes`")

    try:
        variant = Variant(data.get("variant"))
    except ValueError:
        raise SceneError(
            "{0}.variant: expected `grid` or `relational` (got {1!r})".format(
                source,
                data.get("variant"),
            ),
        )

    raw_nodes = data.get("nodes")
    if not isinstance(raw_nodes, list):
        raise SceneError(f"{source}.nodes: expected a list of nodes")

    if variant is Variant.GRID and len(raw_nodes) != GRID_SIZE:
        raise SceneVariantError(
            f"{source}.nodes: grid scenes have exactly {GRID_SIZE} nodes (got {len(raw_nodes)})",
        )

    nodes = []
    seen_ids = set()

    for i, raw_node in enumerate(raw_nodes):
        location = f"{source}.nodes[{i}]"
        if not isinstance(raw_node, dict):
            raise SceneError(f"{location}: expected a mapping")

        node_id = raw_node.get("id")
        if not isinstance(node_id, str) or not node_id:
            raise SceneError(f"{location}.id: expected a non-empty string")
        if node_id in seen_ids:
            raise SceneError(f"{location}.id: duplicate node id: {node_id}")
        seen_ids.add(node_id)

        unknown = set(raw_node.keys()) - set(variant.schema) - {"id", "position"}
        if unknown:
            raise SceneError(
                "{0}: unknown field(s) for {1} scenes: {2}".format(
                    location,
                    variant.value,
                    ", ".join(sorted(unknown)),
                ),
            )

        attrs = {}
        for attribute in variant.schema:
            if attribute not in raw_node:
                raise SceneError(f"{location}.{attribute}: missing attribute")
            value = raw_node[attribute]
            if value is None:
                value = NULL
            if not isinstance(value, str):
                raise SceneError(f"{location}.{attribute}: expected a string")
            check_attribute_value(attribute, value, f"{location}.{attribute}")
            attrs[attribute] = value

        position = None
        if raw_node.get("position") is not None:
            position = _parse_position(raw_node["position"], f"{location}.position")

        nodes.append(ObjectNode(id=node_id, attrs=attrs, position=position))

    if variant is Variant.GRID:
        return SceneGraph(variant=variant, nodes=tuple(nodes))

    raw_edges = data.get("edges")
    if raw_edges is None:
        return SceneGraph(variant=variant, nodes=tuple(nodes), edges=derive_edges(nodes))

    edges = {}
    for i, raw_edge in enumerate(raw_edges):
        location = f"{source}.edges[{i}]"
        try:
            src, dst, labels = raw_edge
            edges[(src, dst)] = frozenset(RelationLabel(label) for label in labels)
        except (TypeError, ValueError):
            raise SceneError(f"{location}: expected [src, dst, [labels...]]")

    return SceneGraph(variant=variant, nodes=tuple(nodes), edges=edges)


def parse_scene(text: str, source: str = "scene") -> SceneGraph:
    try:
        data = json.loads(text)
    except ValueError as e:
        raise SceneError(f"{source}: invalid scene file: {e}")

    return scene_from_dict(data, source=source)


def load_scene(filename: str) -> SceneGraph:
    logger.debug("Loading scene: %s", filename)

    with open(filename, "r", encoding="utf-8") as f:
        return parse_scene(f.read(), source=filename)


def write_scene(filename: str, graph: SceneGraph) -> None:
    with open(filename, "w", encoding="utf-8") as f:
        f.write(serialize_scene(graph))
        f.write("\n")
