import math
import shutil
import warnings
from fractions import Fraction
from itertools import product
from os import path
from tempfile import mkdtemp
from unittest import TestCase
from unittest.mock import patch

import numpy as np
import torch

from sged.api.config import Config
from sged.api.datagen import EditType, QueryRecord, Template, generate_query, generate_scene
from sged.api.dsl import NULL_TOKEN, make_program, parse_program, parse_token, tokenize_query
from sged.api.engine import execute
from sged.api.exceptions import DatagenError, PolicyError
from sged.api.ged import CRIR_COSTS, CSS_COSTS
from sged.api.policy import (
    FeatureMap,
    MovingAverageBaseline,
    Policy,
    RewardScorer,
    TrainConfig,
    Trajectory,
    binary_reward,
    compare_rewards,
    decode_greedy,
    decode_programs,
    pretrain_supervised,
    program_reward,
    query_segments,
    reinforce_gradient,
    reward_from_ged,
    sample_program,
    score_program,
    split_queries,
    to_program,
    train_policy,
)
from sged.api.presets import Preset
from sged.api.scene import Variant
from sged.api.state import BaseStateCallback, State
from sged.api.util import derive_seed

from ..util import make_object, relational_scene


def _base_scene():
    return relational_scene(
        make_object("red", color="red", x=-1, y=0),
        make_object("blue", color="blue", shape="sphere", x=0, y=1),
        make_object("green", color="green", shape="cylinder", x=1, y=-1),
    )


QUERIES = (
    ("q0", "remove the red object", "remove, filter_color[red]", EditType.REMOVE),
    ("q1", "make the red object blue", "make[blue], filter_color[red]", EditType.MAKE),
    (
        "q2",
        "remove the blue sphere",
        "remove, filter_shape[sphere], filter_color[blue]",
        EditType.REMOVE,
    ),
    ("q3", "remove the green object", "remove, filter_color[green]", EditType.REMOVE),
)


def _dataset(length=6):
    """
    Records and scenes for the queries above, targets from running the gold programs.
    """

    base = _base_scene()
    scenes = {"s0": base}
    records = []

    for query_id, text, gold, edit_type in QUERIES:
        program = parse_program(gold, length=length)
        target, _ = execute(program, base)
        scenes[f"{query_id}-target"] = target
        records.append(
            QueryRecord(
                query_id=query_id,
                text=text,
                gold=program,
                input_scene_id="s0",
                target_scene_id=f"{query_id}-target",
                template=Template.ZERO_HOP,
                edit_type=edit_type,
            ),
        )

    return records, scenes


def _bandit_policy(max_len=1, theta=None):
    vocab = [parse_token("remove"), NULL_TOKEN]
    feature_map = FeatureMap.fit([["remove", "it"]], vocab, max_len)
    return Policy(vocab, feature_map, max_len, Variant.RELATIONAL, theta=theta)


class TestRewards(TestCase):
    def test_reward_from_ged(self):
        assert reward_from_ged(0) == 1.0
        assert reward_from_ged(Fraction(1, 4)) == 0.75
        assert reward_from_ged(Fraction(1, 16)) == 0.9375
        assert reward_from_ged(1) == 0.0
        assert reward_from_ged(3) == 0.0

        with self.assertRaises(PolicyError):
            reward_from_ged(-1)

    def test_binary_reward(self):
        assert binary_reward(0) == 1.0
        assert binary_reward(Fraction(1, 16)) == 0.0

    def test_program_reward(self):
        records, scenes = _dataset()
        record = records[1]
        target = scenes[record.target_scene_id]

        assert program_reward(record.gold, scenes["s0"], target, CRIR_COSTS) == 1.0
        assert program_reward(None, scenes["s0"], target, CRIR_COSTS) == 0.0

        # Attends nothing: the unedited input is one attribute off
        missing = parse_program("make[blue], filter_color[yellow]", length=6)
        assert program_reward(missing, scenes["s0"], target, CRIR_COSTS) == 0.75
        assert program_reward(missing, scenes["s0"], target, CRIR_COSTS, reward="binary") == 0.0

        # Grid-only token
        location = parse_program("remove, location[TL]", length=6)
        assert program_reward(location, scenes["s0"], target, CRIR_COSTS) == 0.0

    def test_clamp_grid(self):
        grid = {
            Fraction(0): Fraction(1),
            Fraction(1, 16): Fraction(15, 16),
            Fraction(1, 4): Fraction(3, 4),
            Fraction(1, 3): Fraction(2, 3),
            Fraction(1): Fraction(0),
            Fraction(3, 2): Fraction(0),
            Fraction(3): Fraction(0),
        }
        for d, expected in grid.items():
            assert reward_from_ged(d) == float(expected), d
            assert binary_reward(d) <= reward_from_ged(d), d

        assert reward_from_ged(1.5) == 0.0

    def test_score_program_reports_failure(self):
        records, scenes = _dataset()
        target = scenes[records[0].target_scene_id]
        anchors = parse_program("remove, relate[left], filter_size[large]", length=6)

        reward, error = score_program(anchors, scenes["s0"], target, CRIR_COSTS)
        assert reward == 0.0
        assert "exactly one attended object" in error

        assert score_program(records[0].gold, scenes["s0"], target, CRIR_COSTS) == (1.0, None)
        assert score_program(None, scenes["s0"], target, CRIR_COSTS) == (0.0, None)

    def test_scorer_counts_failures(self):
        records, scenes = _dataset()
        anchors = parse_program("remove, relate[left], filter_size[large]", length=6)
        policy = Policy.build(
            [anchors] + [record.gold for record in records],
            [record.text for record in records],
            max_len=6,
            variant=Variant.RELATIONAL,
        )
        scorer = RewardScorer(State(Config(PARALLEL=1, PROGRAM_LENGTH=6)), scenes, TrainConfig())

        rewards = scorer(
            policy,
            records[:2],
            [policy.actions_of(anchors), policy.actions_of(records[1].gold)],
        )
        assert rewards == [0.0, 1.0]
        assert scorer.scored == 2
        assert scorer.failed == 1


class TestFeatures(TestCase):
    def test_query_segments(self):
        words = "remove the cube left of the red sphere behind the cylinder".split()
        assert query_segments(words) == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2]

    def test_in_front_of(self):
        words = "make the cube in front of the sphere red".split()
        assert query_segments(words) == [0, 0, 0, 0, 0, 1, 1, 1, 1]

    def test_active_features(self):
        policy = _bandit_policy(max_len=2)
        features = policy.encode("remove it")
        names = [policy.feature_map.names[i] for i in policy.feature_map.active(features, [], 0)]

        assert "bias" in names
        assert "uni=remove" in names
        assert "bi=remove_it" in names
        assert "prev=<start>" in names
        assert "step=0" in names
        assert "seg=0&w=it" in names

        names = [policy.feature_map.names[i] for i in policy.feature_map.active(features, [0], 1)]
        assert "prev=remove" in names
        assert "seen=remove" in names

    def test_empty_query(self):
        with self.assertRaises(PolicyError):
            _bandit_policy().encode("")

    def test_unknown_words_ignored(self):
        policy = _bandit_policy()
        features = policy.encode("paint everything")
        assert [policy.feature_map.names[i] for i in features.static] == ["bias"]


class TestGradient(TestCase):
    def test_bandit_closed_form(self):
        policy = _bandit_policy()
        features = policy.encode("remove it")
        active = policy.feature_map.active(features, [], 0)

        batch = [
            Trajectory(features, [0], [0.0], reward=1.0),
            Trajectory(features, [1], [0.0], reward=0.0),
        ]
        gradient = reinforce_gradient(policy, batch)

        # Uniform policy: d log pi(a) / d theta_k = (1[k = a] - 1/2) x
        expected = torch.zeros_like(policy.theta)
        expected[0, active] = 0.25
        expected[1, active] = -0.25
        assert torch.allclose(gradient, expected)

    def test_baseline_cancels_constant_reward(self):
        policy = _bandit_policy()
        features = policy.encode("remove it")
        batch = [
            Trajectory(features, [0], [0.0], reward=1.0),
            Trajectory(features, [1], [0.0], reward=1.0),
        ]

        gradient = reinforce_gradient(policy, batch, baseline=1.0)
        assert torch.count_nonzero(gradient) == 0

    def test_discount(self):
        policy = _bandit_policy(max_len=2)
        features = policy.encode("remove it")
        batch = [Trajectory(features, [0, 1], [0.0, 0.0], reward=1.0)]

        full = reinforce_gradient(policy, batch, gamma=1.0)
        half = reinforce_gradient(policy, batch, gamma=0.5)
        assert torch.allclose(half, full * 0.5)

    def test_missing_reward(self):
        policy = _bandit_policy()
        features = policy.encode("remove it")
        with self.assertRaises(PolicyError):
            reinforce_gradient(policy, [Trajectory(features, [0], [0.0])])

        with self.assertRaises(PolicyError):
            reinforce_gradient(policy, [])

    def _two_step(self):
        generator = torch.Generator()
        generator.manual_seed(3)
        policy = _bandit_policy(max_len=2)
        theta = torch.randn(tuple(policy.theta.shape), dtype=torch.float64, generator=generator)
        policy = _bandit_policy(max_len=2, theta=theta * 0.5)

        rewards = {(0, 1): 1.0, (0, 0): 0.5, (1, 0): 0.25, (1, 1): 0.0}
        return policy, policy.encode("remove it"), rewards

    def test_exact_expectation_is_gradient(self):
        policy, features, rewards = self._two_step()

        expected_reward = sum(
            torch.exp(policy.sequence_log_prob(features, list(actions))) * reward
            for actions, reward in rewards.items()
        )
        (true_gradient,) = torch.autograd.grad(expected_reward, policy.theta)

        estimate = torch.zeros_like(policy.theta)
        for actions, reward in rewards.items():
            with torch.no_grad():
                probability = float(torch.exp(policy.sequence_log_prob(features, list(actions))))
            trajectory = Trajectory(features, list(actions), [0.0, 0.0], reward=reward)
            estimate += probability * reinforce_gradient(policy, [trajectory])

        assert torch.allclose(estimate, true_gradient, atol=1e-10)

    def test_sampled_estimate_unbiased(self):
        policy, features, rewards = self._two_step()

        expected_reward = sum(
            torch.exp(policy.sequence_log_prob(features, list(actions))) * reward
            for actions, reward in rewards.items()
        )
        (true_gradient,) = torch.autograd.grad(expected_reward, policy.theta)

        batch = []
        for seed in range(3000):
            trajectory = sample_program(policy, "remove it", seed)
            trajectory.reward = rewards[tuple(trajectory.actions)]
            batch.append(trajectory)

        estimate = reinforce_gradient(policy, batch)
        assert torch.allclose(estimate, true_gradient, atol=0.06)

    def test_three_step_finite_difference(self):
        vocab = [
            parse_token("remove"),
            parse_token("filter_color[red]"),
            parse_token("filter_color[blue]"),
            NULL_TOKEN,
        ]
        feature_map = FeatureMap.fit([["remove", "the", "red", "it"]], vocab, 3)
        generator = torch.Generator()
        generator.manual_seed(11)
        theta = torch.randn((4, len(feature_map)), dtype=torch.float64, generator=generator)
        policy = Policy(vocab, feature_map, 3, Variant.RELATIONAL, theta=theta * 0.5)
        features = policy.encode("remove the red it")

        rewards = {
            actions: ((actions[0] * 16 + actions[1] * 4 + actions[2]) * 37 % 11) / 10
            for actions in product(range(4), repeat=3)
        }

        def expected_reward() -> float:
            with torch.no_grad():
                return sum(
                    math.exp(float(policy.sequence_log_prob(features, list(actions)))) * reward
                    for actions, reward in rewards.items()
                )

        estimate = torch.zeros_like(policy.theta)
        for actions, reward in rewards.items():
            with torch.no_grad():
                probability = math.exp(float(policy.sequence_log_prob(features, list(actions))))
            trajectory = Trajectory(features, list(actions), [0.0] * 3, reward=reward)
            estimate += probability * reinforce_gradient(policy, [trajectory])

        eps = 1e-5
        finite_difference = torch.zeros_like(policy.theta)
        for index in product(range(policy.theta.shape[0]), range(policy.theta.shape[1])):
            original = policy.theta[index].item()
            with torch.no_grad():
                policy.theta[index] = original + eps
            plus = expected_reward()
            with torch.no_grad():
                policy.theta[index] = original - eps
            minus = expected_reward()
            with torch.no_grad():
                policy.theta[index] = original
            finite_difference[index] = (plus - minus) / (2 * eps)

        assert float(torch.norm(finite_difference)) > 0
        error = torch.norm(estimate - finite_difference) / torch.norm(finite_difference)
        assert float(error) <= 1e-4

    def test_moving_average_baseline(self):
        baseline = MovingAverageBaseline(decay=0.5)
        assert baseline.current([1.0, 0.0]) == 0.5

        baseline.update([1.0, 0.0])
        assert baseline.current([0.0]) == 0.5

        baseline.update([1.0, 1.0])
        assert baseline.value == 0.75


class TestSampling(TestCase):
    def test_deterministic(self):
        records, _ = _dataset()
        policy = Policy.build(
            [record.gold for record in records],
            [record.text for record in records],
            max_len=6,
            variant=Variant.RELATIONAL,
        )

        first = sample_program(policy, records[0].text, 42)
        second = sample_program(policy, records[0].text, 42)
        assert first.actions == second.actions
        assert first.logprobs == second.logprobs
        assert len(first.actions) == 6

        samples = {
            tuple(sample_program(policy, records[0].text, seed).actions) for seed in range(5)
        }
        assert len(samples) > 1

    def test_single_token_vocabulary(self):
        vocab = [NULL_TOKEN]
        policy = Policy(vocab, FeatureMap.fit([["remove", "it"]], vocab, 3), 3, Variant.RELATIONAL)

        trajectory = sample_program(policy, "remove it", 7)
        assert trajectory.actions == [0, 0, 0]
        assert trajectory.logprobs == [0.0, 0.0, 0.0]

    def test_uniform_parameters_sample_uniformly(self):
        vocab = [
            parse_token("remove"),
            parse_token("filter_color[red]"),
            parse_token("filter_color[blue]"),
            NULL_TOKEN,
        ]
        policy = Policy(vocab, FeatureMap.fit([["remove", "it"]], vocab, 3), 3, Variant.RELATIONAL)

        n = 10000
        counts = np.zeros((3, 4))
        for seed in range(n):
            trajectory = sample_program(policy, "remove it", seed)
            for step, action in enumerate(trajectory.actions):
                counts[step, action] += 1
            assert all(abs(logprob - math.log(0.25)) < 1e-12 for logprob in trajectory.logprobs)

        sigma = math.sqrt(n * 0.25 * 0.75)
        assert np.all(np.abs(counts - n / 4) <= 3 * sigma), counts

    def test_to_program(self):
        records, _ = _dataset()
        policy = Policy.build(
            [record.gold for record in records],
            [record.text for record in records],
            max_len=6,
            variant=Variant.RELATIONAL,
        )

        actions = policy.actions_of(records[0].gold)
        assert to_program(policy, actions) == records[0].gold

        # Edit token after a filter
        invalid = [actions[1], actions[0]] + actions[2:]
        assert to_program(policy, invalid) is None

    def test_unknown_token(self):
        policy = _bandit_policy()
        with self.assertRaises(PolicyError):
            policy.actions_of(parse_program("make[red]", length=1))


class TestPretraining(TestCase):
    def test_memorizes_pairs(self):
        records, _ = _dataset()
        policy = Policy.build(
            [record.gold for record in records],
            [record.text for record in records],
            max_len=6,
            variant=Variant.RELATIONAL,
        )
        cfg = TrainConfig(pretrain_learning_rate=0.1, pretrain_epochs=100)

        pretrain_supervised(policy, [(record.text, record.gold) for record in records], cfg)

        assert len(policy.pretrain_losses) == 100
        assert policy.pretrain_losses[-1] < policy.pretrain_losses[0]

        programs = decode_programs(policy, records)
        for record in records:
            assert programs[record.query_id] == record.gold

    def test_memorizes_css_pairs(self):
        pairs = {}
        counts = {edit_type: 0 for edit_type in EditType}

        for seed in range(300):
            if min(counts.values()) == 10:
                break
            scene = generate_scene(derive_seed(seed, "memorize"), (3, 6), Preset.CSS)
            for edit_type in EditType:
                if counts[edit_type] == 10:
                    continue
                try:
                    query = generate_query(
                        Template.ZERO_HOP,
                        edit_type,
                        scene,
                        derive_seed(seed, edit_type.value),
                        scene_id=f"s{seed}",
                        m=CSS_COSTS,
                    )
                except DatagenError:
                    continue
                if query.text in pairs:
                    continue
                pairs[query.text] = query.gold
                counts[edit_type] += 1

        assert list(counts.values()) == [10, 10, 10]

        policy = Policy.build(pairs.values(), pairs.keys(), max_len=12, variant=Variant.GRID)
        cfg = TrainConfig(pretrain_learning_rate=0.1, pretrain_epochs=200)
        pretrain_supervised(policy, list(pairs.items()), cfg)

        for text, gold in pairs.items():
            assert to_program(policy, decode_greedy(policy, text)) == gold, text

    def test_loss_values_are_plain_floats(self):
        records, _ = _dataset()
        policy = Policy.build(
            [record.gold for record in records],
            [record.text for record in records],
            max_len=6,
            variant=Variant.RELATIONAL,
        )

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            pretrain_supervised(
                policy,
                [(record.text, record.gold) for record in records],
                TrainConfig(pretrain_epochs=3),
            )

        assert not [warning for warning in caught if issubclass(warning.category, UserWarning)]
        assert all(type(loss) is float for loss in policy.pretrain_losses)

    def test_no_pairs(self):
        with self.assertRaises(PolicyError):
            pretrain_supervised(_bandit_policy(), [], TrainConfig())

    def test_gold_for_wrong_variant(self):
        vocab = [parse_token("remove"), parse_token("location[TL]"), NULL_TOKEN]
        policy = Policy(vocab, FeatureMap.fit([["x"]], vocab, 2), 2, Variant.RELATIONAL)

        with self.assertRaises(PolicyError):
            pretrain_supervised(
                policy,
                [("remove x", make_program(vocab[:2], length=2))],
                TrainConfig(pretrain_epochs=1),
            )


class TestPolicyFiles(TestCase):
    def setUp(self):
        self.directory = mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_save_and_load(self):
        generator = torch.Generator()
        generator.manual_seed(0)
        policy = _bandit_policy(max_len=2)
        theta = torch.randn(tuple(policy.theta.shape), dtype=torch.float64, generator=generator)
        policy = _bandit_policy(max_len=2, theta=theta)

        filename = path.join(self.directory, "model.json")
        policy.save(filename)
        loaded = Policy.load(filename)

        assert loaded.vocab == policy.vocab
        assert loaded.max_len == 2
        assert loaded.variant is Variant.RELATIONAL
        assert torch.equal(loaded.theta.detach(), policy.theta.detach())
        assert decode_greedy(loaded, "remove it") == decode_greedy(policy, "remove it")

    def test_shape_mismatch(self):
        with self.assertRaises(PolicyError):
            _bandit_policy(theta=torch.zeros((3, 3), dtype=torch.float64))

    def test_invalid_data(self):
        with self.assertRaises(PolicyError):
            Policy.from_dict({"vocab": ["teleport"]})


class CountingCallback(BaseStateCallback):
    def __init__(self):
        self.calls = []

    def iteration_end(self, state, iteration, mean_reward):
        self.calls.append(("iteration", iteration))

    def evaluation_end(self, state, iteration, validation_reward):
        self.calls.append(("evaluation", iteration))


class TestTraining(TestCase):
    def _cfg(self, **overrides):
        values = dict(
            iterations=4,
            batch_size=3,
            eval_every=2,
            patience=5,
            learning_rate=0.05,
            pretrain_learning_rate=0.1,
            pretrain_epochs=10,
            pretrain_fraction=0.34,
            validation_fraction=0.25,
        )
        values.update(overrides)
        return TrainConfig(**values)

    def test_split_queries(self):
        records, _ = _dataset()
        annotated, train, validation = split_queries(records, self._cfg())

        assert len(validation) == 1
        assert len(train) == 3
        assert len(annotated) == 1
        assert annotated[0] in train
        assert validation[0] not in train

        again = split_queries(records, self._cfg())
        assert [record.query_id for record in again[1]] == [record.query_id for record in train]

    def test_train_policy(self):
        records, scenes = _dataset()
        state = State(Config(PARALLEL=2, PROGRAM_LENGTH=6))
        callback = CountingCallback()
        state.add_callback_handler(callback)

        result = train_policy(state, records, scenes, self._cfg())

        assert len(result.curve.points) == 4
        assert [point.validation_reward is not None for point in result.curve.points] == [
            False,
            True,
            False,
            True,
        ]
        assert all(0.0 <= point.mean_reward <= 1.0 for point in result.curve.points)
        assert 0.0 <= result.finetuned_reward <= 1.0
        assert len(result.pretrain_ids) == 1
        assert len(result.validation_ids) == 1

        assert callback.calls.count(("evaluation", 2)) == 1
        assert len([call for call in callback.calls if call[0] == "iteration"]) == 4

        data = result.to_dict()
        assert set(data) == {
            "pretrain_ids",
            "validation_ids",
            "pretrain_reward",
            "finetuned_reward",
            "curve",
        }

    def test_training_is_deterministic(self):
        records, scenes = _dataset()

        def run():
            state = State(Config(PARALLEL=2, PROGRAM_LENGTH=6))
            return train_policy(state, records, scenes, self._cfg())

        first, second = run(), run()
        assert first.curve.to_dict() == second.curve.to_dict()
        assert torch.equal(first.policy.theta.detach(), second.policy.theta.detach())

    def test_early_stop(self):
        records, scenes = _dataset()
        state = State(Config(PARALLEL=1, PROGRAM_LENGTH=6))

        # Nothing to learn from a zero learning rate, so validation never improves
        result = train_policy(
            state,
            records,
            scenes,
            self._cfg(iterations=10, eval_every=1, patience=2, learning_rate=0.0),
        )

        assert result.curve.stopped_early
        assert len(result.curve.points) == 2
        assert result.curve.best_iteration == 0

    def test_vocabulary_from_training_queries(self):
        records, scenes = _dataset()
        state = State(Config(PARALLEL=1, PROGRAM_LENGTH=6))
        result = train_policy(state, records, scenes, self._cfg(iterations=1))

        train = [record for record in records if record.query_id not in result.validation_ids]
        words = {word for record in train for word in tokenize_query(record.text)}
        tokens = {token.render() for record in train for token in record.gold.tokens}

        names = result.policy.feature_map.names
        assert all(name[len("uni=") :] in words for name in names if name.startswith("uni="))
        assert {token.render() for token in result.policy.vocab} == tokens | {NULL_TOKEN.render()}

    def test_failed_programs_warn(self):
        records, scenes = _dataset()
        state = State(Config(PARALLEL=1, PROGRAM_LENGTH=6))
        failure = (0.0, "relate needs exactly one attended object")

        with patch("sged.api.policy.score_program", return_value=failure):
            with self.assertLogs("sged", level="WARNING") as logs:
                train_policy(state, records, scenes, self._cfg())

        assert any("failed to run and scored 0" in line for line in logs.output)

    def test_compare_rewards(self):
        records, scenes = _dataset()
        state = State(Config(PARALLEL=1, PROGRAM_LENGTH=6))

        comparison = compare_rewards(state, records, scenes, cfg=self._cfg())

        assert set(comparison.results) == {"ged", "binary"}
        assert sorted(comparison.ordering()) == ["binary", "ged"]
        assert all(0.0 <= reward <= 1.0 for reward in comparison.ged_rewards.values())
        assert comparison.results["ged"].validation_ids == (
            comparison.results["binary"].validation_ids
        )
        assert set(comparison.to_dict()) == {"ordering", "ged_rewards", "results"}

        with self.assertRaises(PolicyError):
            compare_rewards(state, records, scenes, rewards=("exact",), cfg=self._cfg())
