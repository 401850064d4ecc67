"""
Graph edit distance between scene graphs.

The distance is the cheapest error-correcting matching: every node of the first graph is
substituted by a distinct node of the second or deleted, and unmatched nodes of the
second graph are inserted. Substitutions cost the differing attributes, plus the edge
substitution cost for each matched pair of nodes whose relations disagree. Edges incident
to deleted or inserted nodes are free.

All costs are exact ``Fraction`` values. ``ged_astar`` searches in integer cost units
(the least common multiple of the cost denominators) so its comparisons are exact too.
"""

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from itertools import combinations
from math import gcd
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from sged import logger

from .exceptions import GEDError, GEDSizeError
from .scene import (
    NULL,
    RELATION_AXES,
    WILDCARD,
    EdgeLabels,
    ObjectNode,
    SceneGraph,
    Variant,
    axis_label,
)

BRUTEFORCE_MAX_NODES = 6

HEURISTICS = ("greedy", "assignment", "zero")


@dataclass(frozen=True)
class CostModel:
    node_delete_cost: Fraction
    node_insert_cost: Fraction
    attr_cost: Fraction
    edge_cost: Fraction
    # Wildcard matches any concrete value (or another wildcard) for free, never NULL
    wildcard: bool = True

    def __post_init__(self):
        for name in ("node_delete_cost", "node_insert_cost", "attr_cost", "edge_cost"):
            value = Fraction(getattr(self, name))
            if value < 0:
                raise GEDError(f"{name} must be nonnegative (got {value})")
            object.__setattr__(self, name, value)

    def replace(self, **overrides) -> "CostModel":
        values = {
            "node_delete_cost": self.node_delete_cost,
            "node_insert_cost": self.node_insert_cost,
            "attr_cost": self.attr_cost,
            "edge_cost": self.edge_cost,
            "wildcard": self.wildcard,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return CostModel(**values)

    @property
    def scale(self) -> int:
        """
        Smallest integer that turns every cost into a whole number.
        """

        denominators = (
            self.node_delete_cost.denominator,
            self.node_insert_cost.denominator,
            self.attr_cost.denominator,
            self.edge_cost.denominator,
        )
        return reduce(lambda a, b: a * b // gcd(a, b), denominators)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "node_delete_cost": str(self.node_delete_cost),
            "node_insert_cost": str(self.node_insert_cost),
            "attr_cost": str(self.attr_cost),
            "edge_cost": str(self.edge_cost),
            "wildcard": self.wildcard,
        }


# Grid node insertion/deletion never beats a substitution (at most 3 x 1/3), so grid
# distances come from the slot alignment alone.
CSS_COSTS = CostModel(
    node_delete_cost=Fraction(1),
    node_insert_cost=Fraction(1),
    attr_cost=Fraction(1, 3),
    edge_cost=Fraction(1, 16),
)

CRIR_COSTS = CostModel(
    node_delete_cost=Fraction(1),
    node_insert_cost=Fraction(1),
    attr_cost=Fraction(1, 4),
    edge_cost=Fraction(1, 16),
)


@dataclass
class Matching:
    pairs: Dict[str, str]
    deleted: Tuple[str, ...]
    inserted: Tuple[str, ...]
    total_cost: Fraction = field(default=Fraction(0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pairs": [[src, dst] for src, dst in self.pairs.items()],
            "deleted": list(self.deleted),
            "inserted": list(self.inserted),
            "total_cost": str(self.total_cost),
        }


# Elementary costs
#


def attr_cost(a: str, b: str, m: CostModel) -> Fraction:
    if a == b:
        return Fraction(0)
    if m.wildcard and WILDCARD in (a, b) and NULL not in (a, b):
        return Fraction(0)
    return m.attr_cost


def node_substitution_cost(u: ObjectNode, v: ObjectNode, m: CostModel) -> Fraction:
    if set(u.attrs) != set(v.attrs):
        raise GEDError(
            "Cannot compare {0} and {1}: attribute schemas differ ({2} vs {3})".format(
                u.id,
                v.id,
                ", ".join(sorted(u.attrs)),
                ", ".join(sorted(v.attrs)),
            ),
        )
    return sum((attr_cost(u.attrs[key], v.attrs[key], m) for key in u.attrs), Fraction(0))


def labels_mismatch(e1: EdgeLabels, e2: EdgeLabels) -> bool:
    # Labels clash only on an axis assigned in both sets
    for axis in RELATION_AXES:
        a = axis_label(e1, axis)
        b = axis_label(e2, axis)
        if a is not None and b is not None and a != b:
            return True
    return False


def edge_substitution_cost(e1: EdgeLabels, e2: EdgeLabels, m: CostModel) -> Fraction:
    if labels_mismatch(e1, e2):
        return m.edge_cost
    return Fraction(0)


def _check_comparable(g1: SceneGraph, g2: SceneGraph) -> None:
    if g1.variant is not g2.variant:
        raise GEDError(
            f"Cannot compare a {g1.variant.value} graph with a {g2.variant.value} graph",
        )
    if g1.schema != g2.schema:
        raise GEDError("Cannot compare graphs with different attribute schemas")


def _compatible(g1: SceneGraph, i: int, j: int) -> bool:
    # Grid slots are rigid: a cell can only be matched to the same cell
    return g1.variant is not Variant.GRID or i == j


def recompute_cost(
    g1: SceneGraph,
    g2: SceneGraph,
    pairs: Dict[str, str],
    m: CostModel,
) -> Fraction:
    """
    Cost of the edit path induced by an explicit node matching ``pairs`` (G1 id -> G2 id).
    """

    _check_comparable(g1, g2)

    if len(set(pairs.values())) != len(pairs):
        raise GEDError("Matching is not injective")

    ids1 = set(g1.node_ids)
    ids2 = set(g2.node_ids)
    for src, dst in pairs.items():
        if src not in ids1 or dst not in ids2:
            raise GEDError(f"Matching pair {src} -> {dst} names an unknown node")

    cost = Fraction(0)
    for src, dst in pairs.items():
        cost += node_substitution_cost(g1.node(src), g2.node(dst), m)

    cost += m.node_delete_cost * (len(ids1) - len(pairs))
    cost += m.node_insert_cost * (len(ids2) - len(pairs))

    if g1.variant is Variant.RELATIONAL:
        matched = [node_id for node_id in g1.node_ids if node_id in pairs]
        for a, b in combinations(matched, 2):
            if labels_mismatch(g1.edge(a, b), g2.edge(pairs[a], pairs[b])) or labels_mismatch(
                g1.edge(b, a),
                g2.edge(pairs[b], pairs[a]),
            ):
                cost += m.edge_cost

    return cost


def _make_matching(
    g1: SceneGraph,
    g2: SceneGraph,
    assignment: Sequence[int],
    cost: Fraction,
) -> Matching:
    pairs = {
        g1.nodes[i].id: g2.nodes[j].id for i, j in enumerate(assignment) if j >= 0
    }
    matched = set(pairs.values())
    return Matching(
        pairs=pairs,
        deleted=tuple(node.id for node in g1.nodes if node.id not in pairs),
        inserted=tuple(node.id for node in g2.nodes if node.id not in matched),
        total_cost=cost,
    )


# Grid graphs
#


def ged_aligned(g1: SceneGraph, g2: SceneGraph, m: CostModel) -> Fraction:
    """
    Grid distance: the sum of slot-by-slot substitution costs.
    """

    if g1.variant is not Variant.GRID or g2.variant is not Variant.GRID:
        raise GEDError("ged_aligned compares grid graphs only")

    return sum(
        (node_substitution_cost(u, v, m) for u, v in zip(g1.nodes, g2.nodes)),
        Fraction(0),
    )


# Exact search
#


class _CostTables:
    """
    Integer cost tables shared by the A* search and its heuristics.
    """

    def __init__(self, g1: SceneGraph, g2: SceneGraph, m: CostModel):
        self.n1 = len(g1.nodes)
        self.n2 = len(g2.nodes)
        self.scale = m.scale

        def units(cost: Fraction) -> int:
            return int(cost * self.scale)

        self.delete = units(m.node_delete_cost)
        self.insert = units(m.node_insert_cost)
        self.edge = units(m.edge_cost)

        # None marks a pair that may not be matched
        self.substitute: List[List[Optional[int]]] = [
            [
                units(node_substitution_cost(u, v, m)) if _compatible(g1, i, j) else None
                for j, v in enumerate(g2.nodes)
            ]
            for i, u in enumerate(g1.nodes)
        ]

        self.relational = g1.variant is Variant.RELATIONAL
        ids1 = g1.node_ids
        ids2 = g2.node_ids
        self.edges1 = [[g1.edge(a, b) for b in ids1] for a in ids1]
        self.edges2 = [[g2.edge(a, b) for b in ids2] for a in ids2]

    def pair_cost(self, i: int, j: int, k: int, l: int) -> int:
        """
        Edge cost of matching i -> j given k -> l is already matched.
        """

        if not self.relational:
            return 0
        if labels_mismatch(self.edges1[i][k], self.edges2[j][l]) or labels_mismatch(
            self.edges1[k][i],
            self.edges2[l][j],
        ):
            return self.edge
        return 0


def _heuristic_zero(tables: _CostTables, depth: int, used: int) -> int:
    return 0


def _heuristic_greedy(tables: _CostTables, depth: int, used: int) -> int:
    """
    Every unassigned G1 node costs at least its cheapest free substitution or a deletion,
    and free G2 nodes beyond the unassigned G1 nodes must be inserted.
    """

    free = [j for j in range(tables.n2) if not used & (1 << j)]
    total = 0

    for i in range(depth, tables.n1):
        best = tables.delete
        for j in free:
            cost = tables.substitute[i][j]
            if cost is not None and cost < best:
                best = cost
        total += best

    surplus = len(free) - (tables.n1 - depth)
    if surplus > 0:
        total += surplus * tables.insert
    return total


ASSIGNMENT_MAX_COST = int(np.iinfo(np.int64).max)


def _heuristic_assignment(tables: _CostTables, depth: int, used: int) -> int:
    """
    Optimal node-only completion cost, a linear sum assignment over the square
    substitute/delete/insert matrix.
    """

    rows = list(range(depth, tables.n1))
    cols = [j for j in range(tables.n2) if not used & (1 << j)]
    r, c = len(rows), len(cols)
    if r == 0:
        return c * tables.insert
    if c == 0:
        return r * tables.delete

    forbidden = (r + c) * (tables.delete + tables.insert + tables.edge + 1) + sum(
        cost or 0 for row in tables.substitute for cost in row
    )

    # Costs scaled past int64 (fine-grained fractional costs) fall back to the node-wise bound
    if forbidden * (r + c) > ASSIGNMENT_MAX_COST:
        return _heuristic_greedy(tables, depth, used)

    matrix = np.full((r + c, r + c), forbidden, dtype=np.int64)
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            cost = tables.substitute[i][j]
            if cost is not None:
                matrix[a, b] = cost
        matrix[a, c + a] = tables.delete
    for b in range(c):
        matrix[r + b, b] = tables.insert
    matrix[r:, c:] = 0

    row_index, col_index = linear_sum_assignment(matrix)
    return int(matrix[row_index, col_index].sum())


HEURISTIC_FUNCTIONS = {
    "zero": _heuristic_zero,
    "greedy": _heuristic_greedy,
    "assignment": _heuristic_assignment,
}


def ged_lower_bound(
    g1: SceneGraph,
    g2: SceneGraph,
    m: CostModel,
    heuristic: str = "greedy",
) -> Fraction:
    """
    Admissible lower bound on the distance: the search heuristic at the root.
    """

    _check_comparable(g1, g2)
    tables = _CostTables(g1, g2, m)
    return Fraction(HEURISTIC_FUNCTIONS[heuristic](tables, 0, 0), tables.scale)


def ged_astar(
    g1: SceneGraph,
    g2: SceneGraph,
    m: CostModel,
    heuristic: str = "greedy",
    upper_bound: Optional[Fraction] = None,
) -> Optional[Tuple[Fraction, Matching]]:
    """
    Exact graph edit distance by best-first search over partial node assignments.

    G1 nodes are assigned in graph order, each to an unused G2 node or to deletion; a
    complete assignment inserts the remaining G2 nodes. Frontier ties break on fewer
    unassigned nodes, then insertion order. With ``upper_bound`` set, any branch costing
    more is pruned and ``None`` is returned if nothing fits.
    """

    _check_comparable(g1, g2)

    if heuristic not in HEURISTIC_FUNCTIONS:
        raise GEDError(
            "Unknown heuristic: {0} (expected one of {1})".format(
                heuristic,
                ", ".join(HEURISTICS),
            ),
        )

    estimate = HEURISTIC_FUNCTIONS[heuristic]
    tables = _CostTables(g1, g2, m)
    n1, n2 = tables.n1, tables.n2

    limit: Optional[Fraction] = None
    if upper_bound is not None:
        limit = Fraction(upper_bound) * tables.scale

    def within_limit(f: int) -> bool:
        return limit is None or f <= limit

    counter = 0
    expanded = 0
    # (f, unassigned, counter, g, complete, assignment, used)
    frontier: List[Tuple[int, int, int, int, bool, Tuple[int, ...], int]] = []

    def push(g: int, assignment: Tuple[int, ...], used: int) -> None:
        nonlocal counter
        depth = len(assignment)

        if depth == n1:
            inserted = n2 - bin(used).count("1")
            total = g + inserted * tables.insert
            if within_limit(total):
                heapq.heappush(frontier, (total, 0, counter, total, True, assignment, used))
                counter += 1
            return

        f = g + estimate(tables, depth, used)
        if within_limit(f):
            heapq.heappush(frontier, (f, n1 - depth, counter, g, False, assignment, used))
            counter += 1

    push(0, (), 0)

    while frontier:
        _, _, _, g, complete, assignment, used = heapq.heappop(frontier)

        if complete:
            distance = Fraction(g, tables.scale)
            logger.debug(
                "A* distance %s after %d expansions (%d nodes vs %d)",
                distance,
                expanded,
                n1,
                n2,
            )
            return distance, _make_matching(g1, g2, assignment, distance)

        expanded += 1
        i = len(assignment)

        for j in range(n2):
            if used & (1 << j):
                continue
            cost = tables.substitute[i][j]
            if cost is None:
                continue

            step = cost
            for k, l in enumerate(assignment):
                if l >= 0:
                    step += tables.pair_cost(i, j, k, l)
            push(g + step, assignment + (j,), used | (1 << j))

        push(g + tables.delete, assignment + (-1,), used)

    logger.debug("A* exceeded upper bound %s after %d expansions", upper_bound, expanded)
    return None


def ged_bruteforce(g1: SceneGraph, g2: SceneGraph, m: CostModel) -> Fraction:
    """
    Exact distance by enumerating every injective partial map from G1 to G2.
    """

    _check_comparable(g1, g2)

    if len(g1) > BRUTEFORCE_MAX_NODES or len(g2) > BRUTEFORCE_MAX_NODES:
        raise GEDSizeError(
            f"Brute force GED is limited to {BRUTEFORCE_MAX_NODES} nodes per graph "
            f"(got {len(g1)} and {len(g2)})",
        )

    ids1 = g1.node_ids
    ids2 = g2.node_ids
    best: Optional[Fraction] = None

    def search(i: int, pairs: Dict[str, str]) -> None:
        nonlocal best
        if i == len(ids1):
            cost = recompute_cost(g1, g2, pairs, m)
            if best is None or cost < best:
                best = cost
            return

        taken = set(pairs.values())
        for j, dst in enumerate(ids2):
            if dst in taken or not _compatible(g1, i, j):
                continue
            pairs[ids1[i]] = dst
            search(i + 1, pairs)
            del pairs[ids1[i]]

        search(i + 1, pairs)

    search(0, {})
    assert best is not None
    return best


def graph_edit_distance(
    g1: SceneGraph,
    g2: SceneGraph,
    m: CostModel,
    heuristic: str = "greedy",
    upper_bound: Optional[Fraction] = None,
) -> Optional[Fraction]:
    """
    The distance used everywhere downstream: slot alignment for grid graphs, A* for
    relational graphs. Returns ``None`` when ``upper_bound`` is given and exceeded.
    """

    _check_comparable(g1, g2)

    if g1.variant is Variant.GRID:
        distance = ged_aligned(g1, g2, m)
        if upper_bound is not None and distance > upper_bound:
            return None
        return distance

    result = ged_astar(g1, g2, m, heuristic=heuristic, upper_bound=upper_bound)
    if result is None:
        return None
    return result[0]
