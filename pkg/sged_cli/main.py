import logging
import os
from typing import Dict, Optional

import click

from sged import __version__, logger
from sged.api.config import Config, apply_env, load_config
from sged.api.datagen import build_dataset, verify_dataset
from sged.api.dsl import Program, parse_program
from sged.api.engine import execute
from sged.api.exceptions import ConfigError, SceneError
from sged.api.ged import HEURISTICS, ged_astar, graph_edit_distance
from sged.api.policy import (
    Policy,
    TrainingResult,
    compare_rewards,
    decode_programs,
    train_policy,
)
from sged.api.presets import Preset, get_cost_model
from sged.api.retrieval import evaluate
from sged.api.scene import Variant, load_scene, serialize_scene
from sged.api.state import BaseStateCallback, State
from sged.api.util import format_number, write_json

from .exceptions import CliError, CliUsageError, handle_errors
from .log import setup_logging
from .prints import curve_rows, print_curve, print_json, print_recall_table, recall_rows
from .util import MANIFEST_FILENAME, load_dataset, write_run_manifest

SPLITS = ("train", "test")

# Printed as help, not as an error
NO_ARGS_ERRORS = tuple(
    error
    for error in (getattr(click.exceptions, "NoArgsIsHelpError", None),)
    if error is not None
)

seed_option = click.option(
    "--seed",
    "command_seed",
    type=int,
    help="Random seed for this command (overrides the group --seed).",
)


def _setup_log_level(debug, quiet):
    log_level = logging.INFO
    if debug:
        log_level = logging.DEBUG
    elif quiet:
        log_level = logging.WARNING

    setup_logging(log_level)


class CliContext:
    """
    Group-level options, resolved into a ``Config`` once the subcommand is known.
    """

    def __init__(self, config_filename, seed, parallel, manifest_filename):
        self.config_filename = config_filename
        self.seed = seed
        self.parallel = parallel
        self.manifest_filename = manifest_filename

    def make_config(self, **overrides) -> Config:
        """
        Resolve the config: defaults < SGED_SEED < config file < group flags < command flags.
        """

        config = apply_env(Config())

        if self.config_filename:
            config = load_config(self.config_filename, config)

        config.update(seed=self.seed, parallel=self.parallel)
        config.update(**overrides)
        return config

    def make_state(self, **overrides) -> State:
        return State(self.make_config(**overrides))


def _write_table(filename: str, rows):
    with open(filename, "w", encoding="utf-8") as f:
        for row in rows:
            f.write("\t".join(row))
            f.write("\n")


class TrainingLogger(BaseStateCallback):
    @staticmethod
    def evaluation_end(state, iteration, validation_reward):
        logger.info(
            "Iteration {0}: validation reward {1}".format(
                iteration,
                format_number(validation_reward),
            ),
        )

    @staticmethod
    def early_stop(state, iteration, best_iteration):
        logger.info(
            "--> Early stop at iteration {0}, keeping iteration {1}".format(
                iteration,
                best_iteration,
            ),
        )


class SgedGroup(click.Group):
    """
    Re-raise click's own usage errors as ``CliUsageError``, so a bad invocation exits 2
    with the same error record as any other failure.
    """

    @staticmethod
    def _wrap(e: click.UsageError):
        if isinstance(e, (CliUsageError,) + NO_ARGS_ERRORS):
            return e
        return CliUsageError(e)

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            raise self._wrap(e)

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            raise self._wrap(e)


@click.group(cls=SgedGroup)
@click.option(
    "--config",
    "config_filename",
    type=click.Path(exists=True, dir_okay=False),
    help="YAML config file (or a run manifest to reproduce).",
)
@click.option("--seed", type=int, help="Random seed (default: $SGED_SEED or 0).")
@click.option("--parallel", type=int, help="Number of worker greenlets.")
@click.option(
    "--manifest",
    "manifest_filename",
    type=click.Path(dir_okay=False),
    help="Also write the run manifest here.",
)
@click.option(
    "--quiet",
    is_flag=True,
    default=False,
    help="Hide most sged output.",
)
@click.option(
    "--debug",
    is_flag=True,
    default=False,
    help="Print debug info.",
)
@click.version_option(
    version=__version__,
    prog_name="sged",
    message="%(prog)s: v%(version)s",
)
@click.pass_context
def cli(ctx, config_filename, seed, parallel, manifest_filename, quiet, debug):
    """
    sged edits scene graphs with programs, measures graph edit distance and retrieves
    scenes by it, and trains a query-to-program policy with a distance reward.

    \b
    # Generate train/test datasets
    sged generate data/crir --preset crir

    \b
    # Run an edit program over a scene
    sged exec scene.json "remove, filter_color[red], scene" --trace

    \b
    # Distance between two scenes
    sged ged a.json b.json --cost crir

    \b
    # Train a policy, then evaluate retrieval with it
    sged train --dataset data/crir --output runs/crir
    sged eval --dataset data/crir --programs policy:runs/crir/model.json
    """

    _setup_log_level(debug, quiet)
    ctx.obj = CliContext(config_filename, seed, parallel, manifest_filename)


def _finish(ctx_obj: CliContext, command: str, config: Config, results, output=None):
    filenames = []
    if output:
        filenames.append(os.path.join(output, MANIFEST_FILENAME))
    if ctx_obj.manifest_filename:
        filenames.append(ctx_obj.manifest_filename)

    for filename in filenames:
        write_run_manifest(filename, command, config, results)


# Generate
#


@cli.command()
@click.argument("output", type=click.Path(file_okay=False))
@click.option("--preset", type=click.Choice([preset.value for preset in Preset]))
@click.option("--scenes", "n_scenes", type=int, help="Base scenes per split.")
@click.option("--queries", "n_queries", type=int, help="Queries per split.")
@click.option("--min-objects", type=int)
@click.option("--max-objects", type=int)
@click.option(
    "--split",
    "splits",
    type=click.Choice(SPLITS),
    multiple=True,
    help="Splits to generate (default: train and test).",
)
@seed_option
@click.pass_obj
@handle_errors
def generate(
    ctx_obj,
    output,
    preset,
    n_scenes,
    n_queries,
    min_objects,
    max_objects,
    splits,
    command_seed,
):
    """
    Generate dataset splits under OUTPUT/<split>.
    """

    state = ctx_obj.make_state(
        seed=command_seed,
        preset=preset,
        n_scenes=n_scenes,
        n_queries=n_queries,
        min_objects=min_objects,
        max_objects=max_objects,
    )

    results: Dict[str, Dict] = {}
    for split in splits or SPLITS:
        dataset = build_dataset(state, split=split)
        verify_dataset(dataset, state.cost_model)

        directory = os.path.join(output, split)
        dataset.write(directory)
        results[split] = {
            "scenes": len(dataset.scenes),
            "queries": len(dataset.queries),
            "counts": dataset.manifest.counts,
        }
        click.echo("{0}\t{1}\t{2}".format(split, len(dataset.scenes), len(dataset.queries)))

    _finish(ctx_obj, "generate", state.config, results, output)


# Exec
#


def _read_program(program: str, length: int) -> Program:
    if os.path.isfile(program):
        with open(program, "r", encoding="utf-8") as f:
            program = f.read()
    return parse_program(program, length=length)


@cli.command("exec")
@click.argument("scene", type=click.Path(exists=True, dir_okay=False))
@click.argument("program")
@click.option("--trace", is_flag=True, default=False, help="Print the execution trace.")
@click.option(
    "--output",
    type=click.Path(dir_okay=False),
    help="Write the edited scene here instead of stdout.",
)
@seed_option
@click.pass_obj
@handle_errors
def exec_program(ctx_obj, scene, program, trace, output, command_seed):
    """
    Run PROGRAM (text, or a file holding it) over the SCENE file.
    """

    config = ctx_obj.make_config(seed=command_seed)
    graph = load_scene(scene)
    parsed = _read_program(program, config.PROGRAM_LENGTH)

    modified, execution_trace = execute(parsed, graph)

    if execution_trace.error:
        logger.warning("Edit not applied: {0}".format(execution_trace.error))

    if trace:
        print_json(execution_trace.to_dict(), err=True)

    if output:
        with open(output, "w", encoding="utf-8") as f:
            f.write(serialize_scene(modified))
            f.write("\n")
    else:
        click.echo(serialize_scene(modified))

    _finish(
        ctx_obj,
        "exec",
        config,
        {"program": parsed.render(), "error": execution_trace.error},
    )


# GED
#


@cli.command()
@click.argument("first", type=click.Path(exists=True, dir_okay=False))
@click.argument("second", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--cost",
    type=click.Choice([preset.value for preset in Preset]),
    help="Cost preset (default: by scene type).",
)
@click.option("--heuristic", type=click.Choice(HEURISTICS))
@click.option("--matching", is_flag=True, default=False, help="Print the optimal matching.")
@seed_option
@click.pass_obj
@handle_errors
def ged(ctx_obj, first, second, cost, heuristic, matching, command_seed):
    """
    Print the graph edit distance between two scene files.
    """

    g1 = load_scene(first)
    g2 = load_scene(second)

    if g1.variant is not g2.variant:
        raise SceneError(
            f"{first} is a {g1.variant.value} scene, {second} a {g2.variant.value} scene",
        )

    if cost is None:
        cost = Preset.CSS.value if g1.variant is Variant.GRID else Preset.CRIR.value

    config = ctx_obj.make_config(seed=command_seed, preset=cost, heuristic=heuristic)
    m = get_cost_model(config)

    distance = graph_edit_distance(g1, g2, m, heuristic=config.HEURISTIC)
    click.echo(format_number(distance))

    results = {"distance": str(distance), "costs": m.to_dict()}

    if matching:
        result = ged_astar(g1, g2, m, heuristic=config.HEURISTIC)
        assert result is not None
        print_json(result[1].to_dict(), err=True)
        results["matching"] = result[1].to_dict()

    _finish(ctx_obj, "ged", config, results)


# Train
#


def _check_preset(dataset_preset: Preset, preset: Optional[str]) -> str:
    if preset is not None and preset != dataset_preset.value:
        raise ConfigError(
            f"--preset {preset} does not match the dataset preset {dataset_preset.value}",
        )
    return dataset_preset.value


def _write_training(directory: str, result: TrainingResult) -> Dict:
    os.makedirs(directory, exist_ok=True)
    model = os.path.join(directory, "model.json")
    result.policy.save(model)
    _write_table(os.path.join(directory, "curve.tsv"), curve_rows(result.curve))
    write_json(os.path.join(directory, "training.json"), result.to_dict())

    return {
        "model": model,
        "pretrain_reward": result.pretrain_reward,
        "finetuned_reward": result.finetuned_reward,
        "best_iteration": result.curve.best_iteration,
        "stopped_early": result.curve.stopped_early,
    }


@cli.command()
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--preset", type=click.Choice([preset.value for preset in Preset]))
@click.option("--reward", type=click.Choice(["ged", "binary"]))
@click.option(
    "--compare",
    is_flag=True,
    default=False,
    help="Train once per reward mode (ged and binary) and write both curves.",
)
@click.option("--iters", "iterations", type=int, help="Finetuning iterations.")
@click.option("--batch-size", type=int)
@click.option("--learning-rate", type=float)
@click.option("--pretrain-epochs", type=int)
@click.option(
    "--output",
    type=click.Path(file_okay=False),
    default="sged-run",
    show_default=True,
    help="Directory for the model, curve and manifest.",
)
@seed_option
@click.pass_obj
@handle_errors
def train(
    ctx_obj,
    dataset,
    preset,
    reward,
    compare,
    iterations,
    batch_size,
    learning_rate,
    pretrain_epochs,
    output,
    command_seed,
):
    """
    Pretrain and finetune a policy on the train split of DATASET.
    """

    if compare and reward:
        raise CliError("--compare trains with every reward, drop --reward")

    data = load_dataset(dataset, "train")
    state = ctx_obj.make_state(
        seed=command_seed,
        preset=_check_preset(data.manifest.preset, preset),
        program_length=data.manifest.program_length,
        reward=reward,
        iterations=iterations,
        batch_size=batch_size,
        learning_rate=learning_rate,
        pretrain_epochs=pretrain_epochs,
    )
    state.add_callback_handler(TrainingLogger())

    if compare:
        comparison = compare_rewards(state, data.queries, data.scenes)
        results: Dict = {"ordering": comparison.ordering(), "rewards": {}}

        for name, result in comparison.results.items():
            results["rewards"][name] = _write_training(os.path.join(output, name), result)
            results["rewards"][name]["ged_reward"] = comparison.ged_rewards[name]
            click.echo(
                "{0}\tpretrain_reward\t{1}\tfinetuned_reward\t{2}\tged_reward\t{3}".format(
                    name,
                    format_number(result.pretrain_reward),
                    format_number(result.finetuned_reward),
                    format_number(comparison.ged_rewards[name]),
                ),
            )

        click.echo("ordering\t{0}".format(" > ".join(comparison.ordering())))
        _finish(ctx_obj, "train", state.config, results, output)
        return

    result = train_policy(state, data.queries, data.scenes)
    results = _write_training(output, result)

    print_curve(result.curve)
    click.echo(
        "pretrain_reward\t{0}\nfinetuned_reward\t{1}".format(
            format_number(result.pretrain_reward),
            format_number(result.finetuned_reward),
        ),
    )

    _finish(ctx_obj, "train", state.config, results, output)


# Eval
#


@cli.command("eval")
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option(
    "--programs",
    default="gold",
    show_default=True,
    help="`gold` or `policy:<model file>`.",
)
@click.option("--k", type=int, help="Recall cut-off (default 1).")
@click.option("--heuristic", type=click.Choice(HEURISTICS))
@click.option("--output", type=click.Path(file_okay=False), help="Directory for results.")
@seed_option
@click.pass_obj
@handle_errors
def eval_retrieval(ctx_obj, dataset, programs, k, heuristic, output, command_seed):
    """
    Execute each test query's program and score recall@k of its target scene.
    """

    data = load_dataset(dataset, "test")
    state = ctx_obj.make_state(
        seed=command_seed,
        preset=data.manifest.preset.value,
        program_length=data.manifest.program_length,
        k=k,
        heuristic=heuristic,
    )

    if programs == "gold":
        program_map = {record.query_id: record.gold for record in data.queries}
    elif programs.startswith("policy:"):
        policy = Policy.load(programs[len("policy:") :])
        if policy.variant is not state.variant:
            raise ConfigError(
                f"The policy is for {policy.variant.value} scenes, "
                f"the dataset has {state.variant.value} scenes",
            )
        program_map = decode_programs(policy, data.queries)
    else:
        raise CliError(f"Invalid --programs value: {programs} (use gold or policy:<file>)")

    report = evaluate(state, data.queries, data.scenes, program_map)
    print_recall_table(report)

    if output:
        os.makedirs(output, exist_ok=True)
        _write_table(os.path.join(output, "recall.tsv"), recall_rows(report))
        write_json(
            os.path.join(output, "rankings.json"),
            [result.to_dict() for result in report.results],
        )

    _finish(ctx_obj, "eval", state.config, {"programs": programs, **report.to_dict()}, output)

    if report.execution_errors:
        logger.warning(
            "{0} of {1} programs failed to run".format(
                report.execution_errors,
                len(report.results),
            ),
        )
