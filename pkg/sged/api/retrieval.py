"""
Retrieval by graph edit distance: rank a database of scene graphs against the edited
query graph and score recall at rank K.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from sged import logger
from sged.progress import progress_spinner

from .dsl import Program
from .engine import execute
from .exceptions import ExecutionError, ProgramError, RetrievalError
from .ged import CostModel, ged_lower_bound, graph_edit_distance
from .scene import SceneGraph, Variant
from .util import derive_int_seed

if TYPE_CHECKING:
    from .datagen import QueryRecord
    from .state import State

Seed = Union[int, np.random.SeedSequence]


@dataclass
class RetrievalResult:
    query_id: str
    ranked_ids: List[str]
    distances: List[Fraction]

    def rank_of(self, scene_id: str) -> Optional[int]:
        """
        1-based rank of ``scene_id``, ``None`` if it isn't in the (possibly truncated) list.
        """

        try:
            return self.ranked_ids.index(scene_id) + 1
        except ValueError:
            return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "query_id": self.query_id,
            "ranked_ids": list(self.ranked_ids),
            "distances": [str(distance) for distance in self.distances],
        }


def _check_database(query: SceneGraph, database: Sequence[Tuple[str, SceneGraph]]) -> None:
    for scene_id, graph in database:
        if graph.variant is not query.variant or graph.schema != query.schema:
            raise RetrievalError(
                "Database scene {0} is a {1} graph, the query is a {2} graph".format(
                    scene_id,
                    graph.variant.value,
                    query.variant.value,
                ),
            )


def rank_by_ged(
    query: SceneGraph,
    database: Sequence[Tuple[str, SceneGraph]],
    m: CostModel,
    seed: Seed = 0,
    query_id: str = "query",
    limit: Optional[int] = None,
    heuristic: str = "greedy",
) -> RetrievalResult:
    """
    Rank ``database`` by ascending distance to ``query``. Exact ties are ordered by a
    seeded uniform permutation.

    With ``limit`` only the exact top-``limit`` prefix is computed: candidates are
    visited in lower-bound order and the scan stops once the next lower bound exceeds
    the current ``limit``-th distance.
    """

    _check_database(query, database)

    rng = np.random.default_rng(seed)
    # tie_rank[i] is the position of database entry i in the shuffled order
    tie_rank = np.empty(len(database), dtype=np.int64)
    tie_rank[rng.permutation(len(database))] = np.arange(len(database))

    scored: List[Tuple[Fraction, int, str]] = []

    if limit is None or query.variant is Variant.GRID:
        for i, (scene_id, graph) in enumerate(database):
            distance = graph_edit_distance(query, graph, m, heuristic=heuristic)
            assert distance is not None
            scored.append((distance, int(tie_rank[i]), scene_id))

    else:
        bounds = sorted(
            (ged_lower_bound(query, graph, m, heuristic=heuristic), int(tie_rank[i]), i)
            for i, (_, graph) in enumerate(database)
        )

        for bound, tie, i in bounds:
            kth = scored[limit - 1][0] if len(scored) >= limit else None
            if kth is not None and bound > kth:
                break

            scene_id, graph = database[i]
            distance = graph_edit_distance(
                query,
                graph,
                m,
                heuristic=heuristic,
                upper_bound=kth,
            )
            if distance is None:
                continue

            scored.append((distance, tie, scene_id))
            scored.sort()

        logger.debug(
            "Top-%d scan of %s computed %d/%d distances",
            limit,
            query_id,
            len(scored),
            len(database),
        )

    scored.sort()
    if limit is not None:
        scored = scored[:limit]

    return RetrievalResult(
        query_id=query_id,
        ranked_ids=[scene_id for _, _, scene_id in scored],
        distances=[distance for distance, _, _ in scored],
    )


def recall_at_k(
    results: Sequence[RetrievalResult],
    targets: Mapping[str, str],
    k: int,
) -> float:
    """
    Fraction of queries whose target scene is within the first ``k`` ranked ids.
    """

    if k < 1:
        raise RetrievalError(f"k must be at least 1 (got {k})")

    if not results:
        raise RetrievalError("No retrieval results to score")

    hits = 0
    for result in results:
        if result.query_id not in targets:
            raise RetrievalError(f"No target scene for query: {result.query_id}")
        if targets[result.query_id] in result.ranked_ids[:k]:
            hits += 1

    return hits / len(results)


@dataclass
class EvaluationReport:
    k: int
    overall: float
    by_template: Dict[str, float]
    by_edit_type: Dict[str, float]
    counts: Dict[str, Dict[str, int]]
    results: List[RetrievalResult] = field(default_factory=list)
    execution_errors: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "overall": self.overall,
            "by_template": self.by_template,
            "by_edit_type": self.by_edit_type,
            "counts": self.counts,
            "execution_errors": self.execution_errors,
        }


def edited_graph(program: Program, graph: SceneGraph) -> Tuple[SceneGraph, Optional[str]]:
    """
    Execute ``program``, falling back to the unmodified graph (plus the error message)
    when the program can't run.
    """

    try:
        modified, trace = execute(program, graph)
    except (ProgramError, ExecutionError) as e:
        return graph, str(e)
    return modified, trace.error


def evaluate(
    state: "State",
    records: Sequence["QueryRecord"],
    scenes: Mapping[str, SceneGraph],
    programs: Mapping[str, Program],
    k: Optional[int] = None,
    seed: Optional[int] = None,
) -> EvaluationReport:
    """
    Execute each query's program on its input scene, rank every scene in ``scenes``
    and report recall@k overall, per template and per edit type.
    """

    k = k or state.config.K
    seed = state.config.SEED if seed is None else seed
    database = list(scenes.items())

    def evaluate_one(record: "QueryRecord") -> Tuple[RetrievalResult, bool]:
        if record.query_id not in programs:
            raise RetrievalError(f"No program for query: {record.query_id}")

        modified, error = edited_graph(programs[record.query_id], scenes[record.input_scene_id])
        if error:
            logger.debug("Query %s: %s", record.query_id, error)

        result = rank_by_ged(
            modified,
            database,
            state.cost_model,
            seed=derive_int_seed(seed, "rank", record.query_id),
            query_id=record.query_id,
            limit=k,
            heuristic=state.config.HEURISTIC,
        )
        return result, error is not None

    with progress_spinner(len(records), prefix_message="ranking queries") as progress:

        def evaluate_with_progress(record):
            outcome = evaluate_one(record)
            progress()
            return outcome

        outcomes = state.map(evaluate_with_progress, records)

    results = [result for result, _ in outcomes]
    errors = sum(1 for _, errored in outcomes if errored)
    targets = {record.query_id: record.target_scene_id for record in records}

    grouped_template: Dict[str, List[RetrievalResult]] = defaultdict(list)
    grouped_edit: Dict[str, List[RetrievalResult]] = defaultdict(list)
    counts: Dict[str, Dict[str, int]] = defaultdict(lambda: defaultdict(int))

    for record, result in zip(records, results):
        grouped_template[record.template.value].append(result)
        grouped_edit[record.edit_type.value].append(result)
        counts[record.template.value][record.edit_type.value] += 1

    report = EvaluationReport(
        k=k,
        overall=recall_at_k(results, targets, k),
        by_template={
            name: recall_at_k(group, targets, k) for name, group in grouped_template.items()
        },
        by_edit_type={name: recall_at_k(group, targets, k) for name, group in grouped_edit.items()},
        counts={name: dict(edits) for name, edits in counts.items()},
        results=results,
        execution_errors=errors,
    )

    logger.info(
        "Recall@%d: %.4f over %d queries (%d execution errors)",
        k,
        report.overall,
        len(results),
        errors,
    )
    return report
