import json
from fractions import Fraction
from io import open
from os import listdir, path
from typing import Dict, Optional

from sged.api.ged import CostModel, labels_mismatch, node_substitution_cost
from sged.api.scene import (
    GRID_CELLS,
    ObjectNode,
    SceneGraph,
    build_grid_graph,
    build_relational_graph,
    scene_from_dict,
)
from sged.api.util import make_rng

# Centre of each grid cell, row-major from top-left
CELL_CENTRES = {
    "TL": (-2.0, 3.0),
    "TM": (0.0, 3.0),
    "TR": (2.0, 3.0),
    "ML": (-2.0, 1.0),
    "MM": (0.0, 1.0),
    "MR": (2.0, 1.0),
    "BL": (-2.0, -2.0),
    "BM": (0.0, -2.0),
    "BR": (2.0, -2.0),
}


def make_object(
    node_id: str,
    shape: str = "cube",
    size: str = "large",
    color: str = "gray",
    material: Optional[str] = "metal",
    x: float = 0.0,
    y: float = 0.0,
) -> ObjectNode:
    attrs = {"shape": shape, "size": size, "color": color}
    if material is not None:
        attrs["material"] = material
    return ObjectNode(id=node_id, attrs=attrs, position=(x, y, 0.7))


def relational_scene(*objects: ObjectNode) -> SceneGraph:
    return build_relational_graph(objects)


def grid_scene(cells: Dict[str, Dict[str, str]]) -> SceneGraph:
    """
    Build a grid scene from ``{cell: {"shape": ..., "size": ..., "color": ...}}``.
    """

    objects = []
    for cell, attrs in cells.items():
        x, y = CELL_CENTRES[cell]
        objects.append(ObjectNode(id=f"obj_{cell}", attrs=dict(attrs), position=(x, y, 0.7)))
    return build_grid_graph(objects)


def empty_grid() -> SceneGraph:
    return build_grid_graph([])


def random_relational_scene(seed: int, n_objects: int, *keys) -> SceneGraph:
    rng = make_rng(seed, "random-scene", n_objects, *keys)
    xs = rng.permutation(20)[:n_objects]
    ys = rng.permutation(20)[:n_objects]

    objects = []
    for i in range(n_objects):
        objects.append(
            make_object(
                f"n{i}",
                shape=("cube", "sphere", "cylinder")[int(rng.integers(3))],
                size=("small", "large")[int(rng.integers(2))],
                color=("red", "blue", "green")[int(rng.integers(3))],
                material=("metal", "rubber")[int(rng.integers(2))],
                x=float(xs[i]) / 4 - 2.5,
                y=float(ys[i]) / 4 - 2.5,
            ),
        )
    return relational_scene(*objects)


def random_grid_scene(seed: int, *keys) -> SceneGraph:
    rng = make_rng(seed, "random-grid", *keys)
    cells = {}
    for cell in GRID_CELLS:
        if rng.random() < 0.5:
            cells[cell] = {
                "shape": ("cube", "sphere", "cylinder")[int(rng.integers(3))],
                "size": ("small", "large")[int(rng.integers(2))],
                "color": ("red", "blue", "green")[int(rng.integers(3))],
            }
    return grid_scene(cells)


def load_json_scene(data) -> SceneGraph:
    return scene_from_dict(data, source="test")


def networkx_ged(g1: SceneGraph, g2: SceneGraph, m: CostModel) -> float:
    """
    Independent distance through ``networkx.graph_edit_distance``. Each ordered edge
    carries half the edge cost; relational graphs are inverse-consistent, so a pair
    whose relations disagree costs the full edge cost.

    Edge deletion and insertion are priced at half the edge cost too, which keeps
    networkx from swapping a substitution for a delete plus insert. Incident edges of
    deleted nodes are free in sged but not here, so the two only agree when no node is
    deleted or inserted (equal sizes, node edits priced out).
    """

    import networkx as nx

    def to_networkx(graph: SceneGraph):
        nx_graph = nx.DiGraph()
        for node in graph.nodes:
            nx_graph.add_node(node.id, node=node)
        for (src, dst), labels in graph.edges.items():
            nx_graph.add_edge(src, dst, labels=labels)
        return nx_graph

    half_edge = float(m.edge_cost) / 2

    return nx.graph_edit_distance(
        to_networkx(g1),
        to_networkx(g2),
        node_subst_cost=lambda a, b: float(node_substitution_cost(a["node"], b["node"], m)),
        node_del_cost=lambda a: float(m.node_delete_cost),
        node_ins_cost=lambda a: float(m.node_insert_cost),
        edge_subst_cost=lambda a, b: half_edge if labels_mismatch(a["labels"], b["labels"]) else 0,
        edge_del_cost=lambda a: half_edge,
        edge_ins_cost=lambda a: half_edge,
    )


def parse_fraction(value) -> Fraction:
    return Fraction(str(value))


class JsonTest(type):
    def __new__(cls, name, bases, attrs):
        # Get the JSON files
        files = listdir(attrs["jsontest_files"])
        files = sorted(f for f in files if f.endswith(".json"))

        test_prefix = attrs.get("jsontest_prefix", "test_")

        def gen_test(test_name, filename):
            def test(self):
                test_data = json.loads(
                    open(
                        path.join(attrs["jsontest_files"], filename),
                        encoding="utf-8",
                    ).read(),
                )
                self.jsontest_function(test_name, test_data)

            return test

        # Loop them and create class methods to call the jsontest_function
        for filename in files:
            test_name = filename[:-5]

            # Attach the method
            method_name = "{0}{1}".format(test_prefix, test_name)
            attrs[method_name] = gen_test(test_name, filename)

        return type.__new__(cls, name, bases, attrs)
