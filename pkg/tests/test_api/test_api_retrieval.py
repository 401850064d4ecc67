from fractions import Fraction
from unittest import TestCase

from sged.api.config import Config
from sged.api.datagen import EditType, QueryRecord, Template
from sged.api.dsl import parse_program
from sged.api.exceptions import RetrievalError
from sged.api.ged import CRIR_COSTS, HEURISTICS
from sged.api.retrieval import (
    RetrievalResult,
    edited_graph,
    evaluate,
    rank_by_ged,
    recall_at_k,
)
from sged.api.state import State

from ..util import empty_grid, make_object, random_relational_scene, relational_scene


def _scenes():
    red = make_object("red", color="red", x=-1, y=0)
    blue = make_object("blue", color="blue", shape="sphere", x=0, y=1)
    green = make_object("green", color="green", shape="cylinder", x=1, y=-1)

    return {
        "s0": relational_scene(red, blue, green),
        "s1": relational_scene(blue, green),
        "s2": relational_scene(red.with_attrs(color="blue"), blue, green),
        "s3": relational_scene(
            make_object("a", size="small", x=0, y=0),
            make_object("b", material="rubber", x=2, y=2),
        ),
    }


def _record(query_id, gold, target, edit_type=EditType.REMOVE):
    return QueryRecord(
        query_id=query_id,
        text="",
        gold=parse_program(gold),
        input_scene_id="s0",
        target_scene_id=target,
        template=Template.ZERO_HOP,
        edit_type=edit_type,
    )


class TestRankByGED(TestCase):
    def test_rank_order(self):
        scenes = _scenes()
        result = rank_by_ged(scenes["s0"], list(scenes.items()), CRIR_COSTS, query_id="q")

        assert result.query_id == "q"
        assert result.ranked_ids[0] == "s0"
        assert result.distances[0] == 0
        assert result.distances == sorted(result.distances)
        assert result.rank_of("s0") == 1
        assert result.rank_of("missing") is None

        assert result.distances[result.ranked_ids.index("s2")] == Fraction(1, 4)
        assert result.distances[result.ranked_ids.index("s1")] == 1

    def test_ties_break_by_seed(self):
        graph = _scenes()["s1"]
        database = [("first", graph), ("second", graph), ("third", graph)]

        leaders = set()
        for seed in range(30):
            result = rank_by_ged(graph, database, CRIR_COSTS, seed=seed)
            assert result == rank_by_ged(graph, database, CRIR_COSTS, seed=seed)
            assert result.distances == [0, 0, 0]
            leaders.add(result.ranked_ids[0])

        assert leaders == {"first", "second", "third"}

    def test_limit_matches_full_ranking(self):
        query = random_relational_scene(0, 4, "query")
        database = [(f"s{i}", random_relational_scene(i, 4, "database")) for i in range(10)]
        full = rank_by_ged(query, database, CRIR_COSTS, seed=7)

        for heuristic in HEURISTICS:
            for limit in (1, 3):
                top = rank_by_ged(
                    query,
                    database,
                    CRIR_COSTS,
                    seed=7,
                    limit=limit,
                    heuristic=heuristic,
                )
                assert top.ranked_ids == full.ranked_ids[:limit]
                assert top.distances == full.distances[:limit]

    def test_mixed_variants_rejected(self):
        scenes = _scenes()
        with self.assertRaises(RetrievalError):
            rank_by_ged(scenes["s0"], [("grid", empty_grid())], CRIR_COSTS)

    def test_result_to_dict(self):
        result = RetrievalResult("q", ["a", "b"], [Fraction(0), Fraction(1, 16)])
        assert result.to_dict()["distances"] == ["0", "1/16"]


class TestRecall(TestCase):
    def test_recall_at_k(self):
        results = [
            RetrievalResult("q0", ["a", "b", "c"], [Fraction(0)] * 3),
            RetrievalResult("q1", ["b", "c", "a"], [Fraction(0)] * 3),
        ]
        targets = {"q0": "a", "q1": "a"}

        assert recall_at_k(results, targets, 1) == 0.5
        assert recall_at_k(results, targets, 2) == 0.5
        assert recall_at_k(results, targets, 3) == 1.0

    def test_recall_errors(self):
        results = [RetrievalResult("q0", ["a"], [Fraction(0)])]

        with self.assertRaises(RetrievalError):
            recall_at_k(results, {"q0": "a"}, 0)

        with self.assertRaises(RetrievalError):
            recall_at_k([], {}, 1)

        with self.assertRaises(RetrievalError):
            recall_at_k(results, {}, 1)


class TestEvaluate(TestCase):
    def test_edited_graph_falls_back(self):
        graph = _scenes()["s0"]
        modified, error = edited_graph(parse_program("remove, location[TL]"), graph)
        assert modified is graph
        assert "relational scenes have no grid locations" in error

    def test_evaluate(self):
        scenes = _scenes()
        records = [
            _record("q0", "remove, filter_color[red]", "s1"),
            _record("q1", "make[blue], filter_color[red]", "s2", EditType.MAKE),
        ]
        programs = {
            "q0": records[0].gold,
            # Attends nothing, so the input scene is ranked as is
            "q1": parse_program("make[blue], filter_color[yellow]"),
        }

        state = State(Config(PARALLEL=2, K=1))
        report = evaluate(state, records, scenes, programs)

        assert report.k == 1
        assert report.overall == 0.5
        assert report.by_template == {"zero_hop": 0.5}
        assert report.by_edit_type == {"remove": 1.0, "make": 0.0}
        assert report.counts == {"zero_hop": {"remove": 1, "make": 1}}
        assert report.execution_errors == 1
        assert report.results[0].ranked_ids == ["s1"]
        assert report.results[1].ranked_ids == ["s0"]
        assert report.to_dict()["execution_errors"] == 1

    def test_evaluate_larger_k(self):
        scenes = _scenes()
        records = [_record("q1", "make[blue], filter_color[red]", "s2", EditType.MAKE)]
        programs = {"q1": parse_program("make[blue], filter_color[yellow]")}

        report = evaluate(State(Config(PARALLEL=1)), records, scenes, programs, k=2)

        # s2 is one attribute away from the unedited input
        assert report.overall == 1.0

    def test_missing_program(self):
        scenes = _scenes()
        records = [_record("q0", "remove, filter_color[red]", "s1")]

        with self.assertRaises(RetrievalError):
            evaluate(State(Config(PARALLEL=1)), records, scenes, {})
