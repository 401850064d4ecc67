import json
import shutil
from os import path
from tempfile import mkdtemp
from unittest import TestCase
from unittest.mock import patch

from sged.api.scene import load_scene, serialize_scene

from ..util import empty_grid, grid_scene, make_object, relational_scene
from .util import run_cli


def _write_scene(directory, name, graph):
    filename = path.join(directory, name)
    with open(filename, "w", encoding="utf-8") as f:
        f.write(serialize_scene(graph))
    return filename


def _read_json(filename):
    with open(filename, "r", encoding="utf-8") as f:
        return json.load(f)


class TestCliEagerFlags(TestCase):
    def test_print_help(self):
        result = run_cli("--version")
        assert result.exit_code == 0, result.output
        assert result.output.startswith("sged: v")

        result = run_cli("--help")
        assert result.exit_code == 0, result.output
        assert "generate" in result.output

    def test_invalid_choice(self):
        result = run_cli("train", "--dataset", ".", "--reward", "banana")
        assert result.exit_code == 2
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"]["type"] == "BadParameter"
        assert "--reward" in record["error"]["message"]

    def test_unknown_option(self):
        result = run_cli("ged", "--colour", "red")
        assert result.exit_code == 2
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"]["type"] == "NoSuchOption"

    def test_unknown_command(self):
        result = run_cli("teleport")
        assert result.exit_code == 2
        assert '"error": {"type": "UsageError"' in result.output


class TestSceneCommands(TestCase):
    def setUp(self):
        self.directory = mkdtemp()
        self.scene = relational_scene(
            make_object("a", color="red", x=0, y=0),
            make_object("b", color="blue", shape="sphere", x=1, y=1),
        )
        self.filename = _write_scene(self.directory, "scene.json", self.scene)

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_ged_identical(self):
        result = run_cli("ged", self.filename, self.filename)
        assert result.exit_code == 0, result.output
        assert "0.0" in result.output.splitlines()

    def test_ged_attribute(self):
        recoloured = relational_scene(
            make_object("a", color="green", x=0, y=0),
            make_object("b", color="blue", shape="sphere", x=1, y=1),
        )
        other = _write_scene(self.directory, "other.json", recoloured)

        result = run_cli("ged", self.filename, other, "--matching")
        assert result.exit_code == 0, result.output
        assert "0.25" in result.output.splitlines()

    def test_ged_variant_mismatch(self):
        grid = _write_scene(self.directory, "grid.json", empty_grid())

        result = run_cli("ged", self.filename, grid)
        assert result.exit_code == 1
        assert "SceneError" in result.output

    def test_ged_grid_costs(self):
        first = _write_scene(
            self.directory,
            "first.json",
            grid_scene({"TL": {"shape": "cube", "size": "large", "color": "red"}}),
        )
        second = _write_scene(self.directory, "second.json", empty_grid())

        result = run_cli("ged", first, second)
        assert result.exit_code == 0, result.output
        assert "1.0" in result.output.splitlines()

    def test_exec(self):
        output = path.join(self.directory, "edited.json")

        result = run_cli(
            "exec",
            self.filename,
            "remove, filter_color[red], scene",
            "--trace",
            "--output",
            output,
        )
        assert result.exit_code == 0, result.output
        assert '"attended"' in result.output

        edited = load_scene(output)
        assert edited.node_ids == ["b"]

    def test_exec_program_file(self):
        program = path.join(self.directory, "program.txt")
        with open(program, "w", encoding="utf-8") as f:
            f.write("make[yellow]\nfilter_shape[sphere]\nscene\n")

        result = run_cli("exec", self.filename, program)
        assert result.exit_code == 0, result.output
        assert '"yellow"' in result.output

    def test_exec_bad_program(self):
        result = run_cli("exec", self.filename, "remove, teleport[left]")
        assert result.exit_code == 1
        assert "ProgramParseError" in result.output

    def test_manifest(self):
        manifest = path.join(self.directory, "run", "manifest.json")

        result = run_cli("--seed", "3", "--manifest", manifest, "ged", self.filename, self.filename)
        assert result.exit_code == 0, result.output

        data = _read_json(manifest)
        assert data["command"] == "ged"
        assert data["config"]["seed"] == 3
        assert data["results"]["distance"] == "0"

    def test_seed_precedence(self):
        config = path.join(self.directory, "config.yaml")
        with open(config, "w", encoding="utf-8") as f:
            f.write("seed: 5\n")
        manifest = path.join(self.directory, "manifest.json")

        with patch.dict("os.environ", {"SGED_SEED": "2"}):
            result = run_cli(
                "--config",
                config,
                "--manifest",
                manifest,
                "ged",
                self.filename,
                self.filename,
            )
        assert result.exit_code == 0, result.output
        assert _read_json(manifest)["config"]["seed"] == 5

        with patch.dict("os.environ", {"SGED_SEED": "2"}):
            result = run_cli(
                "--config",
                config,
                "--seed",
                "8",
                "--manifest",
                manifest,
                "ged",
                self.filename,
                self.filename,
            )
        assert result.exit_code == 0, result.output
        assert _read_json(manifest)["config"]["seed"] == 8

        with patch.dict("os.environ", {"SGED_SEED": "2"}):
            result = run_cli(
                "--config",
                config,
                "--seed",
                "8",
                "--manifest",
                manifest,
                "ged",
                self.filename,
                self.filename,
                "--seed",
                "9",
            )
        assert result.exit_code == 0, result.output
        assert _read_json(manifest)["config"]["seed"] == 9


class TestDatasetCommands(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.directory = mkdtemp()
        cls.dataset = path.join(cls.directory, "data")

        cls.generate_result = run_cli(
            "--seed",
            "5",
            "--parallel",
            "2",
            "generate",
            cls.dataset,
            "--preset",
            "css",
            "--scenes",
            "12",
            "--queries",
            "10",
            "--min-objects",
            "2",
            "--max-objects",
            "5",
        )

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.directory)

    def test_generate(self):
        result = self.generate_result
        assert result.exit_code == 0, result.output

        lines = result.output.splitlines()
        assert any(line.startswith("train\t") and line.endswith("\t10") for line in lines)
        assert any(line.startswith("test\t") and line.endswith("\t10") for line in lines)

        for split in ("train", "test"):
            assert path.exists(path.join(self.dataset, split, "queries.jsonl"))

        manifest = _read_json(path.join(self.dataset, "manifest.json"))
        assert manifest["command"] == "generate"
        assert manifest["config"]["preset"] == "css"
        assert manifest["results"]["test"]["queries"] == 10

    def test_eval_gold(self):
        output = path.join(self.directory, "eval-gold")

        result = run_cli(
            "eval",
            "--dataset",
            self.dataset,
            "--programs",
            "gold",
            "--k",
            "1",
            "--seed",
            "7",
            "--output",
            output,
        )
        assert result.exit_code == 0, result.output
        overall = [line for line in result.output.splitlines() if line.startswith("overall\t")]
        assert float(overall[0].split("\t")[2]) == 1.0
        assert _read_json(path.join(output, "manifest.json"))["config"]["seed"] == 7

        assert path.exists(path.join(output, "recall.tsv"))
        rankings = _read_json(path.join(output, "rankings.json"))
        assert len(rankings) == 10

    def test_eval_split_directory(self):
        result = run_cli("eval", "--dataset", path.join(self.dataset, "test"), "--k", "3")
        assert result.exit_code == 0, result.output
        assert "group\tname\trecall@3\tqueries" in result.output.splitlines()

    def test_eval_bad_programs(self):
        result = run_cli("eval", "--dataset", self.dataset, "--programs", "oracle")
        assert result.exit_code == 1
        assert "Invalid --programs value" in result.output

    def test_missing_dataset(self):
        result = run_cli("eval", "--dataset", self.directory)
        assert result.exit_code == 1
        assert "No dataset found" in result.output

    def test_train_preset_mismatch(self):
        result = run_cli("train", "--dataset", self.dataset, "--preset", "crir")
        assert result.exit_code == 1
        assert "does not match the dataset preset" in result.output

    def test_train_and_eval_policy(self):
        output = path.join(self.directory, "run")

        result = run_cli(
            "train",
            "--dataset",
            self.dataset,
            "--iters",
            "2",
            "--batch-size",
            "4",
            "--pretrain-epochs",
            "5",
            "--seed",
            "7",
            "--output",
            output,
        )
        assert result.exit_code == 0, result.output
        assert any(line.startswith("finetuned_reward\t") for line in result.output.splitlines())

        for filename in ("model.json", "curve.tsv", "training.json", "manifest.json"):
            assert path.exists(path.join(output, filename)), filename

        manifest = _read_json(path.join(output, "manifest.json"))
        assert manifest["config"]["iterations"] == 2
        assert manifest["config"]["seed"] == 7

        model = path.join(output, "model.json")
        result = run_cli("eval", "--dataset", self.dataset, "--programs", f"policy:{model}")
        assert result.exit_code == 0, result.output
        assert any(line.startswith("overall\tall\t") for line in result.output.splitlines())

    def test_train_compare_rewards(self):
        output = path.join(self.directory, "compare")

        result = run_cli(
            "train",
            "--dataset",
            self.dataset,
            "--compare",
            "--iters",
            "2",
            "--batch-size",
            "4",
            "--pretrain-epochs",
            "5",
            "--output",
            output,
        )
        assert result.exit_code == 0, result.output

        lines = result.output.splitlines()
        assert any(line.startswith("ged\tpretrain_reward\t") for line in lines)
        assert any(line.startswith("binary\tpretrain_reward\t") for line in lines)
        assert any(line.startswith("ordering\t") for line in lines)

        for reward in ("ged", "binary"):
            assert path.exists(path.join(output, reward, "curve.tsv")), reward

        manifest = _read_json(path.join(output, "manifest.json"))
        assert set(manifest["results"]["rewards"]) == {"ged", "binary"}
        assert sorted(manifest["results"]["ordering"]) == ["binary", "ged"]

    def test_train_compare_with_reward(self):
        result = run_cli("train", "--dataset", self.dataset, "--compare", "--reward", "ged")
        assert result.exit_code == 1
        assert "--compare trains with every reward" in result.output
