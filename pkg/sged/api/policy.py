"""
The program policy: a per-step softmax over linear scores of sparse features of the
query text and the program emitted so far. Trained by supervised pretraining on a few
annotated queries, then finetuned with REINFORCE on the distance between the edited
input scene and the target scene.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import (
    TYPE_CHECKING,
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import torch

from sged import logger
from sged.progress import progress_spinner

from .dsl import (
    NULL_TOKEN,
    Opcode,
    Program,
    ProgramToken,
    make_program,
    parse_token,
    tokenize_query,
    validate_for_variant,
)
from .engine import execute
from .exceptions import ExecutionError, PolicyError, ProgramError
from .ged import CostModel, graph_edit_distance
from .presets import Preset
from .scene import SceneGraph, Variant
from .util import derive_int_seed, make_rng, read_json, write_json

if TYPE_CHECKING:
    from .config import Config
    from .datagen import QueryRecord
    from .state import State

Distance = Union[Fraction, float, int]

START = "<start>"

# Words opening a new relation segment of the query ("left of the ...", "behind the ...")
RELATION_WORDS = ("left", "right", "front")
SEGMENT_MARKERS = ("behind",)


# Rewards
#


def reward_from_ged(d: Distance, preset: Optional[Preset] = None) -> float:
    """
    ``max(0, 1 - d)``: a distance of more than 1 earns nothing.
    """

    if d < 0:
        raise PolicyError(f"Distance must not be negative (got {d})")
    return float(max(Fraction(0), 1 - Fraction(d)))


def binary_reward(d: Distance, preset: Optional[Preset] = None) -> float:
    if d < 0:
        raise PolicyError(f"Distance must not be negative (got {d})")
    return 1.0 if d == 0 else 0.0


REWARD_FUNCTIONS: Dict[str, Callable[[Distance, Optional[Preset]], float]] = {
    "ged": reward_from_ged,
    "binary": binary_reward,
}

# Distances at or above which a reward mode pays nothing, used to prune the search
REWARD_BOUNDS = {
    "ged": Fraction(1),
    "binary": Fraction(0),
}


# Features
#


def query_segments(words: Sequence[str]) -> List[int]:
    """
    Segment index of each query word: segment 0 describes the edited object, and each
    relation phrase starts the next segment.
    """

    segments = []
    segment = 0
    for i, word in enumerate(words):
        if word in SEGMENT_MARKERS or (
            word == "of" and i > 0 and words[i - 1] in RELATION_WORDS
        ):
            segment += 1
        segments.append(segment)
    return segments


@dataclass
class QueryFeatures:
    words: Tuple[str, ...]
    static: List[int]
    by_segment: Dict[int, List[int]]


class FeatureMap:
    """
    Maps (query words, emitted prefix, step) to the indices of the active features.

    Features: a bias, the step index, the previous token, tokens already emitted in the
    current segment, query unigrams and bigrams, the first and last query words, and
    each word conjoined with its relation segment. The decoder's current segment is the
    number of relate tokens emitted so far.
    """

    def __init__(self, names: Sequence[str], vocab: Sequence[ProgramToken]):
        self.names = list(names)
        self.index = {name: i for i, name in enumerate(self.names)}
        self.vocab = list(vocab)
        self.rendered = [token.render() for token in self.vocab]
        self.is_relate = [token.opcode is Opcode.RELATE for token in self.vocab]

    def __len__(self):
        return len(self.names)

    @staticmethod
    def query_feature_names(words: Sequence[str]) -> List[str]:
        names = [f"uni={word}" for word in words]
        names.extend(f"bi={a}_{b}" for a, b in zip(words, words[1:]))
        if words:
            names.append(f"first={words[0]}")
            names.append(f"last={words[-1]}")
        names.extend(
            f"seg={segment}&w={word}" for word, segment in zip(words, query_segments(words))
        )
        return names

    @classmethod
    def fit(
        cls,
        queries: Iterable[Sequence[str]],
        vocab: Sequence[ProgramToken],
        max_len: int,
    ) -> "FeatureMap":
        names: Dict[str, None] = {"bias": None}

        for step in range(max_len):
            names[f"step={step}"] = None

        for token in [START] + [token.render() for token in vocab]:
            names[f"prev={token}"] = None
        for token in vocab:
            names[f"seen={token.render()}"] = None

        for words in queries:
            for name in cls.query_feature_names(words):
                names[name] = None

        return cls(list(names), vocab)

    def _lookup(self, names: Iterable[str]) -> List[int]:
        return [self.index[name] for name in names if name in self.index]

    def encode(self, words: Sequence[str]) -> QueryFeatures:
        static = self._lookup(
            ["bias"]
            + [f"uni={word}" for word in words]
            + [f"bi={a}_{b}" for a, b in zip(words, words[1:])]
            + ([f"first={words[0]}", f"last={words[-1]}"] if words else []),
        )

        by_segment: Dict[int, List[int]] = {}
        for word, segment in zip(words, query_segments(words)):
            by_segment.setdefault(segment, []).extend(self._lookup([f"seg={segment}&w={word}"]))

        return QueryFeatures(words=tuple(words), static=static, by_segment=by_segment)

    def active(self, query: QueryFeatures, prefix: Sequence[int], step: int) -> List[int]:
        segment = sum(1 for action in prefix if self.is_relate[action])

        # Tokens emitted since the last relate
        seen = []
        for action in reversed(prefix):
            if self.is_relate[action]:
                break
            seen.append(f"seen={self.rendered[action]}")

        previous = self.rendered[prefix[-1]] if prefix else START
        return (
            query.static
            + self._lookup([f"step={step}", f"prev={previous}"] + sorted(set(seen)))
            + query.by_segment.get(segment, [])
        )


# Policy
#


class Policy:
    """
    Linear softmax policy over a fixed token vocabulary. ``theta`` has one row of
    feature weights per vocabulary token.
    """

    def __init__(
        self,
        vocab: Sequence[ProgramToken],
        feature_map: FeatureMap,
        max_len: int,
        variant: Variant,
        theta: Optional[torch.Tensor] = None,
    ):
        if not vocab:
            raise PolicyError("Policy vocabulary is empty")

        self.vocab = list(vocab)
        self.feature_map = feature_map
        self.max_len = max_len
        self.variant = variant

        if theta is None:
            theta = torch.zeros((len(self.vocab), len(feature_map)), dtype=torch.float64)
        elif tuple(theta.shape) != (len(self.vocab), len(feature_map)):
            raise PolicyError(
                "Parameter shape {0} does not match {1} tokens x {2} features".format(
                    tuple(theta.shape),
                    len(self.vocab),
                    len(feature_map),
                ),
            )

        self.theta = theta.detach().clone().to(torch.float64).requires_grad_(True)
        self.pretrain_losses: List[float] = []

    @classmethod
    def build(
        cls,
        programs: Iterable[Program],
        queries: Iterable[str],
        max_len: int,
        variant: Variant,
    ) -> "Policy":
        """
        Build an untrained policy whose vocabulary is every token of ``programs``.
        """

        tokens = {NULL_TOKEN.render(): NULL_TOKEN}
        for program in programs:
            for token in program.tokens:
                tokens.setdefault(token.render(), token)

        vocab = [tokens[name] for name in sorted(tokens)]
        feature_map = FeatureMap.fit(
            (tokenize_query(text) for text in queries),
            vocab,
            max_len,
        )

        logger.debug(
            "Policy: %d tokens, %d features, length %d",
            len(vocab),
            len(feature_map),
            max_len,
        )
        return cls(vocab, feature_map, max_len, variant)

    def encode(self, query: Union[str, Sequence[str]]) -> QueryFeatures:
        words = tokenize_query(query) if isinstance(query, str) else list(query)
        if not words:
            raise PolicyError("Query is empty")
        return self.feature_map.encode(words)

    def step_log_probs(
        self,
        query: QueryFeatures,
        prefix: Sequence[int],
        step: int,
    ) -> torch.Tensor:
        indices = torch.tensor(
            self.feature_map.active(query, prefix, step),
            dtype=torch.long,
        )
        scores = self.theta.index_select(1, indices).sum(dim=1)
        return torch.log_softmax(scores, dim=0)

    def sequence_log_prob(self, query: QueryFeatures, actions: Sequence[int]) -> torch.Tensor:
        """
        ``sum_t log pi(a_t | s_t)`` as a differentiable scalar.
        """

        total = torch.zeros((), dtype=torch.float64)
        for step, action in enumerate(actions):
            total = total + self.step_log_probs(query, actions[:step], step)[action]
        return total

    def tokens_of(self, actions: Sequence[int]) -> List[ProgramToken]:
        return [self.vocab[action] for action in actions]

    def actions_of(self, program: Program) -> List[int]:
        rendered = {token.render(): i for i, token in enumerate(self.vocab)}
        actions = []
        for token in program.tokens:
            name = token.render()
            if name not in rendered:
                raise PolicyError(f"Token not in the policy vocabulary: {name}")
            actions.append(rendered[name])
        return actions

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant.value,
            "max_len": self.max_len,
            "vocab": [token.render() for token in self.vocab],
            "features": self.feature_map.names,
            "theta": self.theta.detach().tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Policy":
        try:
            vocab = [parse_token(name, i) for i, name in enumerate(data["vocab"])]
            return cls(
                vocab=vocab,
                feature_map=FeatureMap(data["features"], vocab),
                max_len=data["max_len"],
                variant=Variant(data["variant"]),
                theta=torch.tensor(data["theta"], dtype=torch.float64),
            )
        except (KeyError, ValueError, ProgramError) as e:
            raise PolicyError(f"Invalid policy data: {e}")

    def save(self, filename: str) -> None:
        write_json(filename, self.to_dict())

    @classmethod
    def load(cls, filename: str) -> "Policy":
        return cls.from_dict(read_json(filename))


@dataclass
class Trajectory:
    context: QueryFeatures
    actions: List[int]
    logprobs: List[float]
    reward: Optional[float] = None

    def __post_init__(self):
        assert len(self.actions) == len(self.logprobs)


def _generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed % 2**63)
    return generator


def sample_program(
    policy: Policy,
    query: Union[str, Sequence[str]],
    seed: int,
) -> Trajectory:
    """
    Sample ``policy.max_len`` tokens step by step. The same seed and parameters always
    give the same trajectory.
    """

    features = policy.encode(query)
    generator = _generator(seed)

    actions: List[int] = []
    logprobs: List[float] = []

    with torch.no_grad():
        for step in range(policy.max_len):
            log_probs = policy.step_log_probs(features, actions, step)
            action = int(torch.multinomial(log_probs.exp(), 1, generator=generator).item())
            actions.append(action)
            logprobs.append(float(log_probs[action]))

    return Trajectory(context=features, actions=actions, logprobs=logprobs)


def decode_greedy(policy: Policy, query: Union[str, Sequence[str]]) -> List[int]:
    features = policy.encode(query)
    actions: List[int] = []

    with torch.no_grad():
        for step in range(policy.max_len):
            actions.append(int(torch.argmax(policy.step_log_probs(features, actions, step))))

    return actions


def to_program(policy: Policy, actions: Sequence[int]) -> Optional[Program]:
    """
    The program spelled by ``actions``, or ``None`` if the tokens do not form one.
    """

    try:
        program = make_program(policy.tokens_of(actions), length=policy.max_len)
        validate_for_variant(program, policy.variant)
    except ProgramError:
        return None
    return program


def decode_programs(policy: Policy, records: Sequence["QueryRecord"]) -> Dict[str, Program]:
    """
    Greedy-decode every record's query. Undecodable queries get the empty program,
    which leaves the input scene unmodified.
    """

    empty = make_program([], length=policy.max_len)
    programs = {}
    for record in records:
        program = to_program(policy, decode_greedy(policy, record.text))
        programs[record.query_id] = program or empty
    return programs


# Gradients
#


class MovingAverageBaseline:
    """
    Exponential moving average of batch mean rewards. The first batch is its own
    baseline.
    """

    def __init__(self, decay: float = 0.9):
        self.decay = decay
        self.value: Optional[float] = None

    def current(self, rewards: Sequence[float]) -> float:
        if self.value is None:
            return float(np.mean(rewards))
        return self.value

    def update(self, rewards: Sequence[float]) -> None:
        mean = float(np.mean(rewards))
        if self.value is None:
            self.value = mean
        else:
            self.value = self.decay * self.value + (1 - self.decay) * mean


def reinforce_gradient(
    policy: Policy,
    batch: Sequence[Trajectory],
    gamma: float = 1.0,
    baseline: float = 0.0,
) -> torch.Tensor:
    """
    Estimate the gradient of the expected reward:
    ``mean_b gamma^(L-1) (r_b - baseline) sum_t grad log pi(a_t | s_t)``.

    The reward arrives after the last token, so with ``gamma`` = 1 the discount drops out.
    """

    if not batch:
        raise PolicyError("Empty trajectory batch")

    objective = torch.zeros((), dtype=torch.float64)
    for trajectory in batch:
        if trajectory.reward is None:
            raise PolicyError("Trajectory has no reward")
        discount = gamma ** (len(trajectory.actions) - 1)
        advantage = discount * (trajectory.reward - baseline)
        if advantage:
            objective = objective + advantage * policy.sequence_log_prob(
                trajectory.context,
                trajectory.actions,
            )

    objective = objective / len(batch)
    if not objective.requires_grad:
        return torch.zeros_like(policy.theta)

    (gradient,) = torch.autograd.grad(objective, policy.theta)
    return gradient


# Training
#


@dataclass
class TrainConfig:
    gamma: float = 1.0
    learning_rate: float = 0.02
    batch_size: int = 64
    iterations: int = 200
    patience: int = 5
    eval_every: int = 10
    baseline: str = "moving_average"
    baseline_decay: float = 0.9
    reward: str = "ged"
    pretrain_learning_rate: float = 7e-4
    pretrain_epochs: int = 300
    pretrain_fraction: float = 0.1
    validation_fraction: float = 0.1
    seed: int = 0

    @classmethod
    def from_config(cls, config: "Config", preset: Preset) -> "TrainConfig":
        return cls(
            gamma=config.GAMMA,
            learning_rate=config.LEARNING_RATE,
            batch_size=config.BATCH_SIZE,
            iterations=config.ITERATIONS,
            patience=config.PATIENCE,
            eval_every=config.EVAL_EVERY,
            baseline=config.BASELINE,
            baseline_decay=config.BASELINE_DECAY,
            reward=config.REWARD,
            pretrain_learning_rate=(
                config.PRETRAIN_LEARNING_RATE or preset.pretrain_learning_rate
            ),
            pretrain_epochs=config.PRETRAIN_EPOCHS,
            pretrain_fraction=config.PRETRAIN_FRACTION,
            validation_fraction=config.VALIDATION_FRACTION,
            seed=config.SEED,
        )


def pretrain_supervised(
    policy: Policy,
    pairs: Sequence[Tuple[str, Program]],
    cfg: TrainConfig,
) -> Policy:
    """
    Maximise ``sum_t log pi(gold_t | s_t)`` over the annotated pairs with Adam, one full
    batch per epoch. The per-epoch loss is kept in ``policy.pretrain_losses``.
    """

    if not pairs:
        raise PolicyError("No annotated pairs to pretrain on")

    examples = []
    for text, program in pairs:
        try:
            validate_for_variant(program, policy.variant)
        except ProgramError as e:
            raise PolicyError(f"Invalid gold program for {text!r}: {e}")
        examples.append((policy.encode(text), policy.actions_of(program)))

    optimizer = torch.optim.Adam([policy.theta], lr=cfg.pretrain_learning_rate)
    policy.pretrain_losses = []

    for epoch in range(cfg.pretrain_epochs):
        optimizer.zero_grad()
        loss = torch.zeros((), dtype=torch.float64)
        for features, actions in examples:
            loss = loss - policy.sequence_log_prob(features, actions)
        loss = loss / len(examples)
        loss.backward()
        optimizer.step()

        policy.pretrain_losses.append(loss.item())
        logger.debug("Pretrain epoch %d: loss %.6f", epoch, policy.pretrain_losses[-1])

    if policy.pretrain_losses:
        logger.info(
            "Pretrained on {0} pairs: loss {1:.4f} -> {2:.4f}".format(
                len(examples),
                policy.pretrain_losses[0],
                policy.pretrain_losses[-1],
            ),
        )
    return policy


def score_program(
    program: Optional[Program],
    input_graph: SceneGraph,
    target_graph: SceneGraph,
    m: CostModel,
    reward: str = "ged",
    heuristic: str = "greedy",
) -> Tuple[float, Optional[str]]:
    """
    Reward of running ``program`` on the input graph, plus the execution error if the
    program failed to run. Invalid programs and programs that fail to run score 0.
    """

    if program is None:
        return 0.0, None

    try:
        modified, trace = execute(program, input_graph)
    except (ProgramError, ExecutionError) as e:
        logger.debug("Program %s failed: %s", program, e)
        return 0.0, str(e)

    if trace.error:
        # The edit attended nothing, so the unmodified graph is scored
        logger.debug("Program %s: %s", program, trace.error)

    distance = graph_edit_distance(
        modified,
        target_graph,
        m,
        heuristic=heuristic,
        upper_bound=REWARD_BOUNDS[reward],
    )
    if distance is None:
        return 0.0, None
    return REWARD_FUNCTIONS[reward](distance, None), None


def program_reward(
    program: Optional[Program],
    input_graph: SceneGraph,
    target_graph: SceneGraph,
    m: CostModel,
    reward: str = "ged",
    heuristic: str = "greedy",
) -> float:
    return score_program(program, input_graph, target_graph, m, reward, heuristic)[0]


@dataclass
class CurvePoint:
    iteration: int
    mean_reward: float
    validation_reward: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "mean_reward": self.mean_reward,
            "validation_reward": self.validation_reward,
        }


@dataclass
class LearningCurve:
    points: List[CurvePoint] = field(default_factory=list)
    best_iteration: int = 0
    best_validation_reward: Optional[float] = None
    stopped_early: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points": [point.to_dict() for point in self.points],
            "best_iteration": self.best_iteration,
            "best_validation_reward": self.best_validation_reward,
            "stopped_early": self.stopped_early,
        }


class RewardScorer:
    """
    Scores programs for dataset queries, running the engine and distance in the
    state's pool. Counts the programs that failed to run.
    """

    def __init__(
        self,
        state: "State",
        scenes: Mapping[str, SceneGraph],
        cfg: TrainConfig,
    ):
        self.state = state
        self.scenes = scenes
        self.cfg = cfg
        self.scored = 0
        self.failed = 0

    def __call__(
        self,
        policy: Policy,
        records: Sequence["QueryRecord"],
        action_lists: Sequence[Sequence[int]],
    ) -> List[float]:
        for record in records:
            for scene_id in (record.input_scene_id, record.target_scene_id):
                if scene_id not in self.scenes:
                    raise PolicyError(f"Query {record.query_id}: missing scene {scene_id}")

        def score(item):
            record, actions = item
            return score_program(
                to_program(policy, actions),
                self.scenes[record.input_scene_id],
                self.scenes[record.target_scene_id],
                self.state.cost_model,
                reward=self.cfg.reward,
                heuristic=self.state.config.HEURISTIC,
            )

        results = self.state.map(score, list(zip(records, action_lists)))
        self.scored += len(results)
        self.failed += sum(1 for _, error in results if error is not None)
        return [reward for reward, _ in results]

    def validation_reward(self, policy: Policy, records: Sequence["QueryRecord"]) -> float:
        if not records:
            return 0.0
        actions = [decode_greedy(policy, record.text) for record in records]
        return float(np.mean(self(policy, records, actions)))


def finetune(
    state: "State",
    policy: Policy,
    train: Sequence["QueryRecord"],
    validation: Sequence["QueryRecord"],
    scenes: Mapping[str, SceneGraph],
    cfg: TrainConfig,
) -> Tuple[Policy, LearningCurve]:
    """
    REINFORCE finetuning: each iteration samples a batch of queries and one program per
    query, scores the edits and takes an Adam step along the gradient estimate.
    Validation (greedy decoding) runs every ``cfg.eval_every`` iterations; training
    stops after ``cfg.patience`` evaluations without improvement and the best
    parameters are returned.
    """

    if not train:
        raise PolicyError("No training queries")

    scorer = RewardScorer(state, scenes, cfg)
    optimizer = torch.optim.Adam([policy.theta], lr=cfg.learning_rate)
    baseline = (
        MovingAverageBaseline(cfg.baseline_decay) if cfg.baseline == "moving_average" else None
    )

    curve = LearningCurve()
    best_theta = policy.theta.detach().clone()
    curve.best_validation_reward = scorer.validation_reward(policy, validation)
    bad_evaluations = 0

    with progress_spinner(cfg.iterations, prefix_message="finetuning") as progress:
        for iteration in range(1, cfg.iterations + 1):
            rng = make_rng(cfg.seed, "batch", iteration)
            picks = rng.choice(
                len(train),
                size=cfg.batch_size,
                replace=len(train) < cfg.batch_size,
            )
            records = [train[int(i)] for i in picks]

            batch = [
                sample_program(
                    policy,
                    record.text,
                    derive_int_seed(cfg.seed, "sample", iteration, i),
                )
                for i, record in enumerate(records)
            ]
            rewards = scorer(policy, records, [trajectory.actions for trajectory in batch])
            for trajectory, reward in zip(batch, rewards):
                trajectory.reward = reward

            baseline_value = baseline.current(rewards) if baseline else 0.0
            gradient = reinforce_gradient(policy, batch, cfg.gamma, baseline_value)
            if baseline:
                baseline.update(rewards)

            optimizer.zero_grad()
            # Adam minimises, so step along the negated ascent direction
            policy.theta.grad = -gradient
            optimizer.step()

            mean_reward = float(np.mean(rewards))
            point = CurvePoint(iteration=iteration, mean_reward=mean_reward)
            curve.points.append(point)
            state.trigger_callbacks("iteration_end", iteration, mean_reward)
            progress(status="reward {0:.4f}".format(mean_reward))

            if iteration % cfg.eval_every and iteration != cfg.iterations:
                continue

            point.validation_reward = scorer.validation_reward(policy, validation)
            state.trigger_callbacks("evaluation_end", iteration, point.validation_reward)

            if point.validation_reward > curve.best_validation_reward:
                curve.best_validation_reward = point.validation_reward
                curve.best_iteration = iteration
                best_theta = policy.theta.detach().clone()
                bad_evaluations = 0
                continue

            bad_evaluations += 1
            if bad_evaluations >= cfg.patience:
                curve.stopped_early = True
                state.trigger_callbacks("early_stop", iteration, curve.best_iteration)
                logger.info(
                    "Stopping early at iteration {0} (best iteration {1})".format(
                        iteration,
                        curve.best_iteration,
                    ),
                )
                break

    if scorer.failed:
        logger.warning(
            "{0} of {1} scored programs failed to run and scored 0".format(
                scorer.failed,
                scorer.scored,
            ),
        )

    with torch.no_grad():
        policy.theta.copy_(best_theta)

    return policy, curve


@dataclass
class TrainingResult:
    policy: Policy
    curve: LearningCurve
    pretrain_ids: List[str]
    validation_ids: List[str]
    pretrain_reward: float
    finetuned_reward: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pretrain_ids": self.pretrain_ids,
            "validation_ids": self.validation_ids,
            "pretrain_reward": self.pretrain_reward,
            "finetuned_reward": self.finetuned_reward,
            "curve": self.curve.to_dict(),
        }


def split_queries(
    records: Sequence["QueryRecord"],
    cfg: TrainConfig,
) -> Tuple[List["QueryRecord"], List["QueryRecord"], List["QueryRecord"]]:
    """
    Seeded split into (annotated pretraining pairs, training, validation). The
    pretraining pairs come out of the training part.
    """

    rng = make_rng(cfg.seed, "split")
    order = [records[int(i)] for i in rng.permutation(len(records))]

    n_validation = int(round(len(order) * cfg.validation_fraction))
    if cfg.validation_fraction > 0:
        n_validation = max(1, n_validation)
    validation, train = order[:n_validation], order[n_validation:]

    if not train:
        raise PolicyError(f"No training queries left after the validation split ({len(records)})")

    n_pretrain = max(1, int(round(len(train) * cfg.pretrain_fraction)))
    return train[:n_pretrain], train, validation


def train_policy(
    state: "State",
    records: Sequence["QueryRecord"],
    scenes: Mapping[str, SceneGraph],
    cfg: Optional[TrainConfig] = None,
) -> TrainingResult:
    """
    Pretrain on the annotated pairs, then finetune; reports the validation reward of
    both the pretrain-only and the finetuned policy.
    """

    cfg = cfg or TrainConfig.from_config(state.config, state.preset)
    annotated, train, validation = split_queries(records, cfg)

    policy = Policy.build(
        (record.gold for record in train),
        (record.text for record in train),
        max_len=state.config.PROGRAM_LENGTH,
        variant=state.variant,
    )
    pretrain_supervised(policy, [(record.text, record.gold) for record in annotated], cfg)

    scorer = RewardScorer(state, scenes, cfg)
    pretrain_reward = scorer.validation_reward(policy, validation)
    logger.info("Pretrain-only validation reward: {0:.4f}".format(pretrain_reward))

    policy, curve = finetune(state, policy, train, validation, scenes, cfg)
    finetuned_reward = scorer.validation_reward(policy, validation)
    logger.info("Finetuned validation reward: {0:.4f}".format(finetuned_reward))

    return TrainingResult(
        policy=policy,
        curve=curve,
        pretrain_ids=[record.query_id for record in annotated],
        validation_ids=[record.query_id for record in validation],
        pretrain_reward=pretrain_reward,
        finetuned_reward=finetuned_reward,
    )


@dataclass
class RewardComparison:
    """
    One training run per reward mode under the same seed and split. ``ged_rewards``
    scores each finetuned policy on the validation queries with the GED reward, so the
    modes compare on one scale.
    """

    results: Dict[str, TrainingResult]
    ged_rewards: Dict[str, float]

    def ordering(self) -> List[str]:
        return sorted(self.ged_rewards, key=lambda reward: (-self.ged_rewards[reward], reward))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ordering": self.ordering(),
            "ged_rewards": self.ged_rewards,
            "results": {reward: result.to_dict() for reward, result in self.results.items()},
        }


def compare_rewards(
    state: "State",
    records: Sequence["QueryRecord"],
    scenes: Mapping[str, SceneGraph],
    rewards: Sequence[str] = ("ged", "binary"),
    cfg: Optional[TrainConfig] = None,
) -> RewardComparison:
    cfg = cfg or TrainConfig.from_config(state.config, state.preset)

    results: Dict[str, TrainingResult] = {}
    ged_rewards: Dict[str, float] = {}
    ged_scorer = RewardScorer(state, scenes, replace(cfg, reward="ged"))

    for reward in rewards:
        if reward not in REWARD_FUNCTIONS:
            raise PolicyError(f"Unknown reward mode: {reward}")

        logger.info("--> Training with the {0} reward".format(reward))
        result = train_policy(state, records, scenes, replace(cfg, reward=reward))
        validation = [record for record in records if record.query_id in result.validation_ids]

        results[reward] = result
        ged_rewards[reward] = ged_scorer.validation_reward(result.policy, validation)

    return RewardComparison(results=results, ged_rewards=ged_rewards)
