"""
Synthetic datasets of (input scene, edit query, target scene) triples.

Queries follow five templates: zero to three relation hops, and a single "and" of two
relations. Each query gets a gold program, and its target scene comes from executing
that program, so a gold program always reaches its target at distance 0. Remove and
make queries are generated directly. Add queries are remove queries turned around:
the remove target becomes the add input and the original scene becomes the add target.

Counts per template are balanced so that #add = #remove = 2 x #make.
"""

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from sged import logger
from sged.progress import progress_spinner

from .dsl import (
    ATTRIBUTE_FILTERS,
    LOCATION_PHRASES,
    Opcode,
    Program,
    ProgramToken,
    make_program,
    parse_program,
)
from .engine import execute
from .exceptions import DatagenError, ProgramError, SceneError
from .ged import CostModel, graph_edit_distance
from .presets import Preset, get_cost_model
from .scene import (
    GRID_CELLS,
    GRID_X_BOUNDS,
    GRID_Y_BOUNDS,
    VOCABULARIES,
    ObjectNode,
    RelationLabel,
    SceneGraph,
    Variant,
    build_grid_graph,
    build_relational_graph,
    grid_cell,
    load_scene,
    write_scene,
)
from .util import derive_seed, get_template, make_rng, read_json, sha1_hash, write_json

if TYPE_CHECKING:
    from .state import State

# Scene extent in scene units
SCENE_X_RANGE = (-3.0, 3.0)
SCENE_Y_RANGE = (-3.0, 3.0)
# Grid scenes extend further back so the top row has room
GRID_Y_RANGE = (-3.0, 4.0)
GRID_MARGIN = 0.05
OBJECT_HEIGHTS = {"small": 0.35, "large": 0.7}

# Order attributes are mentioned in, as in "large purple metal cube"
TEXT_ORDER = ("size", "color", "material", "shape")

RELATION_PHRASES = {
    RelationLabel.LEFT: "left of",
    RelationLabel.RIGHT: "right of",
    RelationLabel.FRONT: "in front of",
    RelationLabel.BEHIND: "behind",
}

QUERY_TEMPLATES = {
    "remove": "remove the {{ target }}{{ where }}",
    "make": "make the {{ target }}{{ where }} {{ value }}",
    "add": "add {{ 'an' if target[0] in 'aeiou' else 'a' }} {{ target }}{{ where }}",
}

# Attempts at a referent chain on one scene before giving up on it
CHAIN_ATTEMPTS = 20


class Template(str, Enum):
    ZERO_HOP = "zero_hop"
    ONE_HOP = "one_hop"
    TWO_HOP = "two_hop"
    THREE_HOP = "three_hop"
    SINGLE_AND = "single_and"

    @property
    def hops(self) -> int:
        return {
            Template.ZERO_HOP: 0,
            Template.ONE_HOP: 1,
            Template.TWO_HOP: 2,
            Template.THREE_HOP: 3,
            Template.SINGLE_AND: 2,
        }[self]


class EditType(str, Enum):
    ADD = "add"
    REMOVE = "remove"
    MAKE = "make"


PRESET_TEMPLATES = {
    Preset.CSS: (Template.ZERO_HOP,),
    Preset.CRIR: tuple(Template),
}


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    gold: Program
    input_scene_id: str
    target_scene_id: str
    template: Template
    edit_type: EditType

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.query_id,
            "text": self.text,
            "gold": self.gold.render(),
            "input": self.input_scene_id,
            "target": self.target_scene_id,
            "template": self.template.value,
            "edit_type": self.edit_type.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], program_length: int) -> "QueryRecord":
        try:
            return cls(
                query_id=data["id"],
                text=data["text"],
                gold=parse_program(data["gold"], length=program_length),
                input_scene_id=data["input"],
                target_scene_id=data["target"],
                template=Template(data["template"]),
                edit_type=EditType(data["edit_type"]),
            )
        except (KeyError, ValueError) as e:
            raise DatagenError(f"Invalid query record: {e}")


@dataclass
class DatasetManifest:
    seed: int
    preset: Preset
    split: str
    program_length: int
    counts: Dict[str, Dict[str, int]]
    scene_ids: List[str]
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "preset": self.preset.value,
            "split": self.split,
            "program_length": self.program_length,
            "counts": self.counts,
            "scene_ids": self.scene_ids,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetManifest":
        try:
            return cls(
                seed=data["seed"],
                preset=Preset(data["preset"]),
                split=data["split"],
                program_length=data["program_length"],
                counts=data["counts"],
                scene_ids=data["scene_ids"],
                config=data.get("config", {}),
            )
        except (KeyError, ValueError) as e:
            raise DatagenError(f"Invalid dataset manifest: {e}")


@dataclass
class Dataset:
    manifest: DatasetManifest
    scenes: Dict[str, SceneGraph]
    queries: List[QueryRecord]

    def database(self) -> List[Tuple[str, SceneGraph]]:
        return list(self.scenes.items())

    def write(self, directory: str) -> None:
        scene_directory = os.path.join(directory, "scenes")
        os.makedirs(scene_directory, exist_ok=True)

        write_json(os.path.join(directory, "manifest.json"), self.manifest.to_dict())

        for scene_id, graph in self.scenes.items():
            write_scene(os.path.join(scene_directory, f"{scene_id}.json"), graph)

        with open(os.path.join(directory, "queries.jsonl"), "w", encoding="utf-8") as f:
            for record in self.queries:
                f.write(_dump_line(record.to_dict()))

        logger.info(
            "Wrote {0} scenes and {1} queries to {2}".format(
                len(self.scenes),
                len(self.queries),
                directory,
            ),
        )

    @classmethod
    def load(cls, directory: str) -> "Dataset":
        manifest_filename = os.path.join(directory, "manifest.json")
        if not os.path.exists(manifest_filename):
            raise DatagenError(f"No dataset manifest found in: {directory}")

        manifest = DatasetManifest.from_dict(read_json(manifest_filename))

        scenes = {}
        for scene_id in manifest.scene_ids:
            filename = os.path.join(directory, "scenes", f"{scene_id}.json")
            try:
                scenes[scene_id] = load_scene(filename)
            except IOError as e:
                raise DatagenError(f"Missing scene file: {filename} ({e})")

        queries = []
        with open(os.path.join(directory, "queries.jsonl"), "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    queries.append(
                        QueryRecord.from_dict(_load_line(line), manifest.program_length),
                    )

        for record in queries:
            for scene_id in (record.input_scene_id, record.target_scene_id):
                if scene_id not in scenes:
                    raise DatagenError(
                        f"Query {record.query_id} references unknown scene: {scene_id}",
                    )

        return cls(manifest=manifest, scenes=scenes, queries=queries)


def _dump_line(data: Dict[str, Any]) -> str:
    return json.dumps(data) + "\n"


def _load_line(line: str) -> Dict[str, Any]:
    try:
        return json.loads(line)
    except ValueError as e:
        raise DatagenError(f"Invalid query line: {e}")


# Scenes
#


def _sample_attrs(rng: np.random.Generator, schema: Sequence[str]) -> Dict[str, str]:
    return {
        attribute: VOCABULARIES[attribute][int(rng.integers(len(VOCABULARIES[attribute])))]
        for attribute in schema
    }


def _grid_cell_bounds(cell: int) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    row, column = divmod(cell, 3)
    x_edges = (SCENE_X_RANGE[0], GRID_X_BOUNDS[0], GRID_X_BOUNDS[1], SCENE_X_RANGE[1])
    # Rows run top (large y) to bottom
    y_edges = (GRID_Y_RANGE[1], GRID_Y_BOUNDS[1], GRID_Y_BOUNDS[0], GRID_Y_RANGE[0])
    x_range = (x_edges[column] + GRID_MARGIN, x_edges[column + 1] - GRID_MARGIN)
    y_range = (y_edges[row + 1] + GRID_MARGIN, y_edges[row] - GRID_MARGIN)
    return x_range, y_range


def generate_scene(
    seed,
    n_objects: Tuple[int, int],
    preset: Preset,
    min_separation: float = 0.5,
    max_retries: int = 100,
) -> SceneGraph:
    """
    Sample a random scene with between ``n_objects[0]`` and ``n_objects[1]`` objects.
    Relational objects get pairwise distinct x and y coordinates at least
    ``min_separation`` apart; grid objects go to distinct random cells.
    """

    low, high = n_objects
    if low > high:
        raise DatagenError(f"Invalid object count range: {low}..{high}")
    if preset is Preset.CRIR and low < 4:
        raise DatagenError(f"Relational scenes need at least 4 objects (got {low})")
    if preset is Preset.CSS and high > len(GRID_CELLS):
        raise DatagenError(
            f"Grid scenes hold at most {len(GRID_CELLS)} objects (requested up to {high})",
        )

    rng = np.random.default_rng(seed)
    count = int(rng.integers(low, high + 1))
    schema = preset.variant.schema

    objects = []

    if preset is Preset.CSS:
        cells = rng.choice(len(GRID_CELLS), size=count, replace=False)
        for i, cell in enumerate(cells):
            attrs = _sample_attrs(rng, schema)
            x_range, y_range = _grid_cell_bounds(int(cell))
            position = (
                round(float(rng.uniform(*x_range)), 3),
                round(float(rng.uniform(*y_range)), 3),
                OBJECT_HEIGHTS[attrs["size"]],
            )
            assert grid_cell(position) == cell
            objects.append(ObjectNode(id=f"obj{i}", attrs=attrs, position=position))

        return build_grid_graph(objects)

    placed: List[Tuple[float, float]] = []

    for i in range(count):
        attrs = _sample_attrs(rng, schema)

        for _ in range(max_retries):
            x = round(float(rng.uniform(*SCENE_X_RANGE)), 3)
            y = round(float(rng.uniform(*SCENE_Y_RANGE)), 3)
            if all(
                x != px and y != py and (x - px) ** 2 + (y - py) ** 2 >= min_separation**2
                for px, py in placed
            ):
                break
        else:
            raise DatagenError(
                f"Could not place object {i} of {count} after {max_retries} retries",
            )

        placed.append((x, y))
        objects.append(
            ObjectNode(id=f"obj{i}", attrs=attrs, position=(x, y, OBJECT_HEIGHTS[attrs["size"]])),
        )

    return build_relational_graph(objects)


# Referring expressions
#


@dataclass(frozen=True)
class Description:
    node_id: str
    attrs: Dict[str, str]

    def filters(self) -> List[ProgramToken]:
        # Filters run in reverse emission order, so emit them reversed from the text
        return [
            ProgramToken(ATTRIBUTE_FILTERS[attribute], (self.attrs[attribute],))
            for attribute in reversed(TEXT_ORDER)
            if attribute in self.attrs
        ]

    def values(self) -> Tuple[str, ...]:
        return tuple(self.attrs[attribute] for attribute in TEXT_ORDER if attribute in self.attrs)

    def text(self) -> str:
        bits = list(self.values())
        if "shape" not in self.attrs:
            bits.append("object")
        return " ".join(bits)


def describe(
    node: ObjectNode,
    candidates: Sequence[ObjectNode],
    rng: np.random.Generator,
) -> Optional[Description]:
    """
    Pick one of the smallest attribute subsets that tells ``node`` apart from every other
    candidate, or ``None`` if the candidates include an identical object.
    """

    others = [candidate for candidate in candidates if candidate.id != node.id]
    attributes = [attribute for attribute in TEXT_ORDER if attribute in node.attrs]

    for size in range(len(attributes) + 1):
        options = [
            subset
            for subset in combinations(attributes, size)
            if all(any(other.get(a) != node.get(a) for a in subset) for other in others)
        ]
        if options:
            subset = options[int(rng.integers(len(options)))]
            return Description(node.id, {attribute: node.attrs[attribute] for attribute in subset})

    return None


def _related(graph: SceneGraph, anchor: str, label: RelationLabel) -> List[ObjectNode]:
    return [
        node
        for node in graph.nodes
        if node.id != anchor and label in graph.edge(node.id, anchor)
    ]


@dataclass
class _Referent:
    """
    A way of singling out one object: its description plus the program tail and text
    that locate it.
    """

    target: ObjectNode
    description: Description
    tail: List[ProgramToken]
    where: str
    location: Optional[str] = None


def _zero_hop_referent(
    graph: SceneGraph,
    rng: np.random.Generator,
    location_rate: float,
) -> Optional[_Referent]:
    objects = [node for node in graph.nodes if not node.is_empty]
    if not objects:
        return None

    target = objects[int(rng.integers(len(objects)))]

    if graph.variant is Variant.GRID and rng.random() < location_rate:
        cell = GRID_CELLS[graph.index(target.id)]
        attributes = list(graph.schema)
        size = int(rng.integers(1, len(attributes) + 1))
        subset = sorted(
            rng.choice(len(attributes), size=size, replace=False).tolist(),
        )
        description = Description(
            target.id,
            {attributes[i]: target.attrs[attributes[i]] for i in subset},
        )
        return _Referent(
            target=target,
            description=description,
            tail=[ProgramToken(Opcode.LOCATION, (cell,))],
            where=f" at the {LOCATION_PHRASES[cell]}",
            location=cell,
        )

    description = describe(target, graph.nodes, rng)
    if description is None:
        return None

    return _Referent(
        target=target,
        description=description,
        tail=[ProgramToken(Opcode.SCENE)],
        where="",
    )


def _hop_referent(graph: SceneGraph, hops: int, rng: np.random.Generator) -> Optional[_Referent]:
    if len(graph.nodes) < hops + 1:
        return None

    order = rng.permutation(len(graph.nodes))[: hops + 1]
    chain = [graph.nodes[int(i)] for i in order]

    labels = []
    for near, far in zip(chain, chain[1:]):
        options = sorted(graph.edge(near.id, far.id), key=lambda label: label.value)
        labels.append(options[int(rng.integers(len(options)))])

    # Describe from the anchor (deepest) back to the target
    descriptions: List[Description] = []
    candidates = list(graph.nodes)
    for i in reversed(range(hops + 1)):
        description = describe(chain[i], candidates, rng)
        if description is None:
            return None
        descriptions.insert(0, description)
        if i:
            candidates = _related(graph, chain[i].id, labels[i - 1])

    tail: List[ProgramToken] = []
    where = ""
    for label, description in zip(labels, descriptions[1:]):
        tail.append(ProgramToken(Opcode.RELATE, (label.value,)))
        tail.extend(description.filters())
        where += f" {RELATION_PHRASES[label]} the {description.text()}"

    return _Referent(target=chain[0], description=descriptions[0], tail=tail, where=where)


def _and_referent(graph: SceneGraph, rng: np.random.Generator) -> Optional[_Referent]:
    if len(graph.nodes) < 3:
        return None

    order = rng.permutation(len(graph.nodes))[:3]
    target, first, second = (graph.nodes[int(i)] for i in order)

    labels = []
    for anchor in (first, second):
        options = sorted(graph.edge(target.id, anchor.id), key=lambda label: label.value)
        labels.append(options[int(rng.integers(len(options)))])

    first_description = describe(first, graph.nodes, rng)
    second_description = describe(second, graph.nodes, rng)
    if first_description is None or second_description is None:
        return None

    first_ids = {node.id for node in _related(graph, first.id, labels[0])}
    candidates = [
        node for node in _related(graph, second.id, labels[1]) if node.id in first_ids
    ]
    description = describe(target, candidates, rng)
    if description is None:
        return None

    tail = (
        [ProgramToken(Opcode.INTERSECT), ProgramToken(Opcode.RELATE, (labels[0].value,))]
        + first_description.filters()
        + [ProgramToken(Opcode.SCENE), ProgramToken(Opcode.RELATE, (labels[1].value,))]
        + second_description.filters()
    )
    where = " {0} the {1} and {2} the {3}".format(
        RELATION_PHRASES[labels[0]],
        first_description.text(),
        RELATION_PHRASES[labels[1]],
        second_description.text(),
    )
    return _Referent(target=target, description=description, tail=tail, where=where)


def _find_referent(
    template: Template,
    graph: SceneGraph,
    rng: np.random.Generator,
    location_rate: float,
) -> Optional[_Referent]:
    if template is Template.ZERO_HOP:
        return _zero_hop_referent(graph, rng, location_rate)

    if graph.variant is Variant.GRID:
        raise DatagenError(f"Grid scenes only support {Template.ZERO_HOP.value} queries")

    if template is Template.SINGLE_AND:
        return _and_referent(graph, rng)
    return _hop_referent(graph, template.hops, rng)


# Queries
#


@dataclass
class GeneratedQuery:
    """
    A query before it gets its dataset id, carrying its input and target graphs.
    """

    template: Template
    edit_type: EditType
    text: str
    gold: Program
    input_graph: SceneGraph
    target_graph: SceneGraph
    input_scene_id: str
    target_scene_id: Optional[str] = None
    referent: Optional[_Referent] = None

    def to_record(self, query_id: str) -> QueryRecord:
        assert self.target_scene_id is not None
        return QueryRecord(
            query_id=query_id,
            text=self.text,
            gold=self.gold,
            input_scene_id=self.input_scene_id,
            target_scene_id=self.target_scene_id,
            template=self.template,
            edit_type=self.edit_type,
        )


def derived_scene_id(scene_id: str, graph: SceneGraph) -> str:
    """
    Id of a scene derived from ``scene_id`` by an edit, stable across runs.
    """

    return "{0}-{1}".format(scene_id, sha1_hash(graph.canonical_key())[:8])


def _render(edit_type: EditType, **context) -> str:
    return get_template(QUERY_TEMPLATES[edit_type.value]).render(**context)


def _self_check(query: GeneratedQuery, m: CostModel, expected: Optional[Set[str]]) -> None:
    modified, trace = execute(query.gold, query.input_graph)

    if trace.error:
        raise DatagenError(f"Gold program {query.gold} failed: {trace.error}")

    if expected is not None and set(trace.steps[-1].attended) != expected:
        raise DatagenError(
            "Gold program {0} attends {1}, expected {2}".format(
                query.gold,
                sorted(trace.steps[-1].attended),
                sorted(expected),
            ),
        )

    if graph_edit_distance(modified, query.target_graph, m, upper_bound=0) is None:
        raise DatagenError(f"Gold program {query.gold} does not reach its target")


def generate_query(
    template: Template,
    edit_type: EditType,
    scene: SceneGraph,
    seed,
    scene_id: str = "scene",
    m: Optional[CostModel] = None,
    location_rate: float = 0.85,
    program_length: int = 12,
) -> GeneratedQuery:
    """
    Generate one query of ``template``/``edit_type`` on ``scene``. Remove and make queries
    use ``scene`` as their input; an add query is a remove query turned around, so
    ``scene`` is its target and the input is ``scene`` minus the object.

    Raises ``DatagenError`` if no uniquely described referent chain fits the scene.
    """

    rng = np.random.default_rng(seed)
    if m is None:
        m = Preset.CSS.cost_model if scene.variant is Variant.GRID else Preset.CRIR.cost_model

    for _ in range(CHAIN_ATTEMPTS):
        referent = _find_referent(template, scene, rng, location_rate)
        if referent is None:
            continue

        filters = referent.description.filters()

        if edit_type is EditType.MAKE:
            attribute = scene.schema[int(rng.integers(len(scene.schema)))]
            current = referent.target.attrs[attribute]
            values = [value for value in VOCABULARIES[attribute] if value != current]
            value = values[int(rng.integers(len(values)))]
            edit = ProgramToken(Opcode.MAKE, (value,))
            text = _render(
                edit_type,
                target=referent.description.text(),
                where=referent.where,
                value=value,
            )
        else:
            edit = ProgramToken(Opcode.REMOVE)
            text = _render(
                EditType.REMOVE,
                target=referent.description.text(),
                where=referent.where,
            )

        try:
            gold = make_program([edit] + filters + referent.tail, length=program_length)
        except ProgramError:
            # Too long for the program length, try another chain
            continue

        target_graph, _ = execute(gold, scene)
        query = GeneratedQuery(
            template=template,
            edit_type=EditType.MAKE if edit_type is EditType.MAKE else EditType.REMOVE,
            text=text,
            gold=gold,
            input_graph=scene,
            target_graph=target_graph,
            input_scene_id=scene_id,
            referent=referent,
        )
        try:
            _self_check(query, m, {referent.target.id})
        except DatagenError as e:
            logger.debug("Skipping referent: %s", e)
            continue

        if edit_type is EditType.ADD:
            converted = convert_to_add(query, m, program_length=program_length)
            if converted is None:
                continue
            return converted

        return query

    raise DatagenError(
        f"No uniquely described {template.value} referent in scene {scene_id}",
    )


def convert_to_add(
    query: GeneratedQuery,
    m: CostModel,
    program_length: int = 12,
) -> Optional[GeneratedQuery]:
    """
    Turn a remove query around: add the removed object (mentioning the attributes the
    remove query mentioned) to the remove query's target scene.
    """

    referent = query.referent
    if referent is None or query.edit_type is not EditType.REMOVE:
        raise DatagenError("Only generated remove queries can be turned into add queries")

    if query.target_graph.object_count != query.input_graph.object_count - 1:
        return None

    description = referent.description

    if query.input_graph.variant is Variant.GRID:
        cell = GRID_CELLS[query.input_graph.index(referent.target.id)]
        tail = [ProgramToken(Opcode.LOCATION, (cell,))]
        where = f" to the {LOCATION_PHRASES[cell]}"
    else:
        if referent.tail and referent.tail[0].opcode is Opcode.SCENE:
            tail = referent.tail[1:]
        else:
            tail = list(referent.tail)
        where = referent.where

    try:
        gold = make_program(
            [ProgramToken(Opcode.ADD, description.values())] + tail,
            length=program_length,
        )
    except ProgramError:
        return None

    text = _render(EditType.ADD, target=description.text(), where=where)

    add_query = GeneratedQuery(
        template=query.template,
        edit_type=EditType.ADD,
        text=text,
        gold=gold,
        input_graph=query.target_graph,
        target_graph=query.input_graph,
        input_scene_id=(
            query.target_scene_id or derived_scene_id(query.input_scene_id, query.target_graph)
        ),
        target_scene_id=query.input_scene_id,
    )

    try:
        _self_check(add_query, m, None)
    except DatagenError as e:
        logger.debug("Skipping add candidate: %s", e)
        return None

    return add_query


def find_tie(
    graph: SceneGraph,
    target_id: str,
    database: Dict[str, SceneGraph],
    m: CostModel,
) -> Optional[str]:
    """
    Id of a ``database`` scene other than ``target_id`` at distance 0 from ``graph``.
    Wildcards in an added object make these ties possible.
    """

    # With every edit priced, differing object counts can't be a tie
    priced = min(m.node_delete_cost, m.node_insert_cost, m.attr_cost) > 0

    for scene_id, other in database.items():
        if scene_id == target_id:
            continue
        if priced and other.object_count != graph.object_count:
            continue
        if graph_edit_distance(graph, other, m, upper_bound=0) is not None:
            return scene_id
    return None


# Datasets
#


def _split_counts(n_queries: int, n_templates: int) -> Tuple[int, int, int]:
    if n_queries % (5 * n_templates):
        raise DatagenError(
            f"Query count {n_queries} must be a multiple of {5 * n_templates} "
            f"({n_templates} templates, 2 add : 2 remove : 1 make)",
        )
    make = n_queries // n_templates // 5
    return 2 * make, 2 * make, make


def build_dataset(state: "State", split: str = "test") -> Dataset:
    """
    Generate a full dataset split: base scenes, balanced queries and their targets.
    """

    config = state.config
    preset = state.preset
    m = get_cost_model(config)
    templates = PRESET_TEMPLATES[preset]
    n_add, n_remove, n_make = _split_counts(config.N_QUERIES, len(templates))
    seed = config.SEED

    logger.info(
        "Generating {0} {1} dataset ({2} scenes, {3} queries)".format(
            split,
            preset.value,
            config.N_SCENES,
            config.N_QUERIES,
        ),
    )

    def make_scene(index: int) -> SceneGraph:
        return generate_scene(
            derive_seed(seed, split, "scene", index),
            (config.MIN_OBJECTS, config.MAX_OBJECTS),
            preset,
            min_separation=config.MIN_SEPARATION,
            max_retries=config.MAX_RETRIES,
        )

    with progress_spinner(config.N_SCENES, prefix_message="generating scenes") as progress:

        def make_scene_with_progress(index):
            scene = make_scene(index)
            progress()
            return scene

        base_graphs = state.map(make_scene_with_progress, range(config.N_SCENES))

    base_scenes = [(f"s{index:04d}", graph) for index, graph in enumerate(base_graphs)]

    stored: Dict[str, SceneGraph] = dict(base_scenes)
    key_to_id: Dict[str, str] = {graph.canonical_key(): scene_id for scene_id, graph in base_scenes}

    def store(scene_id: str, graph: SceneGraph) -> str:
        key = graph.canonical_key()
        if key not in key_to_id:
            new_id = derived_scene_id(scene_id, graph)
            key_to_id[key] = new_id
            stored[new_id] = graph
        return key_to_id[key]

    def generate_many(template: Template, edit_type: EditType, count: int, tag: str):
        queries: List[GeneratedQuery] = []
        attempt = 0
        max_attempts = max(count, 1) * config.MAX_RETRIES

        while len(queries) < count:
            if attempt >= max_attempts:
                raise DatagenError(
                    f"Could not generate {count} {template.value}/{edit_type.value} queries "
                    f"after {attempt} attempts",
                )

            rng = make_rng(seed, split, template.value, tag, attempt)
            attempt += 1
            scene_id, scene = base_scenes[int(rng.integers(len(base_scenes)))]

            try:
                query = generate_query(
                    template,
                    edit_type,
                    scene,
                    derive_seed(seed, split, template.value, tag, attempt, "query"),
                    scene_id=scene_id,
                    m=m,
                    location_rate=config.CSS_LOCATION_RATE,
                    program_length=config.PROGRAM_LENGTH,
                )
            except DatagenError as e:
                logger.debug("Resampling scene: %s", e)
                continue

            queries.append(query)

        return queries

    edits: Dict[Template, List[GeneratedQuery]] = {}
    pools: Dict[Template, List[GeneratedQuery]] = {}

    with progress_spinner(len(templates), prefix_message="generating queries") as progress:
        for template in templates:
            removes = generate_many(template, EditType.REMOVE, n_remove, "remove")
            makes = generate_many(template, EditType.MAKE, n_make, "make")
            extra = generate_many(template, EditType.REMOVE, 2 * n_add, "candidate")

            for query in removes + makes:
                query.target_scene_id = store(query.input_scene_id, query.target_graph)

            edits[template] = removes + makes
            pools[template] = removes + extra
            progress()

    # Adds go last so their wildcard ties are checked against every stored scene
    accepted: List[Tuple[SceneGraph, str]] = []

    def accept_add(candidate: GeneratedQuery) -> Optional[GeneratedQuery]:
        key = candidate.target_graph.canonical_key()
        input_id = key_to_id.get(key) or derived_scene_id(
            candidate.input_scene_id,
            candidate.target_graph,
        )
        add_query = convert_to_add(
            replace(candidate, target_scene_id=input_id),
            m,
            program_length=config.PROGRAM_LENGTH,
        )
        if add_query is None:
            return None

        edited, _ = execute(add_query.gold, add_query.input_graph)
        database = dict(stored)
        database[input_id] = candidate.target_graph

        tied = find_tie(edited, add_query.target_scene_id, database, m)
        if tied is not None:
            logger.debug("Skipping add candidate tied with scene %s", tied)
            return None

        # A new input scene must not tie with an add accepted earlier
        if key not in key_to_id:
            for previous, target_id in accepted:
                new_scene = {input_id: candidate.target_graph}
                if find_tie(previous, target_id, new_scene, m) is not None:
                    return None
            store(candidate.input_scene_id, candidate.target_graph)

        accepted.append((edited, add_query.target_scene_id))
        return add_query

    with progress_spinner(len(templates), prefix_message="generating add queries") as progress:
        for template in templates:
            candidates = pools[template]
            rng = make_rng(seed, split, template.value, "add")
            adds: List[GeneratedQuery] = []

            for index in rng.permutation(len(candidates)):
                if len(adds) == n_add:
                    break
                add_query = accept_add(candidates[int(index)])
                if add_query is not None:
                    adds.append(add_query)

            if len(adds) < n_add:
                raise DatagenError(
                    f"Only {len(adds)} of {n_add} add candidates for {template.value}, "
                    "increase the scene count",
                )

            edits[template] = adds + edits[template]
            progress()

    generated = [query for template in templates for query in edits[template]]

    records = [
        query.to_record(f"{split}-{index:05d}") for index, query in enumerate(generated)
    ]

    referenced = {scene_id for scene_id, _ in base_scenes}
    for record in records:
        referenced.add(record.input_scene_id)
        referenced.add(record.target_scene_id)
    scenes = {scene_id: graph for scene_id, graph in stored.items() if scene_id in referenced}

    counts: Dict[str, Dict[str, int]] = {}
    for record in records:
        counts.setdefault(record.template.value, {edit.value: 0 for edit in EditType})
        counts[record.template.value][record.edit_type.value] += 1

    check_counts(counts)

    manifest = DatasetManifest(
        seed=seed,
        preset=preset,
        split=split,
        program_length=config.PROGRAM_LENGTH,
        counts=counts,
        scene_ids=list(scenes.keys()),
        config=config.to_dict(),
    )
    return Dataset(manifest=manifest, scenes=scenes, queries=records)


def check_counts(counts: Dict[str, Dict[str, int]]) -> None:
    """
    Raise unless every template has the same count and #add = #remove = 2 x #make.
    """

    totals = {sum(edits.values()) for edits in counts.values()}
    if len(totals) > 1:
        raise DatagenError(f"Templates have unequal query counts: {counts}")

    for template, edits in counts.items():
        add, remove, make = edits["add"], edits["remove"], edits["make"]
        if add != remove or remove != 2 * make:
            raise DatagenError(
                f"{template}: expected add = remove = 2 x make (got {add}/{remove}/{make})",
            )


def verify_dataset(dataset: Dataset, m: CostModel) -> int:
    """
    Re-run every gold program and check it reaches its target at distance 0. Returns
    the number of records checked.
    """

    for record in dataset.queries:
        try:
            modified, trace = execute(record.gold, dataset.scenes[record.input_scene_id])
        except (ProgramError, SceneError) as e:
            raise DatagenError(f"Query {record.query_id}: {e}")

        distance = graph_edit_distance(
            modified,
            dataset.scenes[record.target_scene_id],
            m,
            upper_bound=0,
        )
        if trace.error or distance is None:
            raise DatagenError(
                f"Query {record.query_id}: gold program does not reach its target",
            )

    return len(dataset.queries)
