import shutil
from os import path
from tempfile import mkdtemp
from unittest import TestCase

from click.testing import CliRunner

from sged.api.scene import serialize_scene
from sged_cli.exceptions import CliError
from sged_cli.main import cli

from ..util import make_object, relational_scene


class TestCliExceptions(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.test_cli = CliRunner()
        cls.old_cli_show = CliError.show
        cls.directory = mkdtemp()

        cls.scene = path.join(cls.directory, "scene.json")
        with open(cls.scene, "w", encoding="utf-8") as f:
            f.write(serialize_scene(relational_scene(make_object("a", color="red"))))

    @classmethod
    def tearDownClass(cls):
        CliError.show = cls.old_cli_show
        shutil.rmtree(cls.directory)

    def setUp(self):
        self.exception = None
        CliError.show = lambda e: self.capture_cli_error(e)

    def capture_cli_error(self, e):
        self.exception = e
        type(self).old_cli_show(e)

    def assert_cli_exception(self, args, message, error_type=None):
        self.test_cli.invoke(cli, args)

        self.assertIsInstance(self.exception, CliError)
        assert self.exception.message == message
        if error_type:
            assert self.exception.error_type == error_type

    def test_unknown_opcode(self):
        self.assert_cli_exception(
            ["exec", self.scene, "remove, teleport[left]"],
            "token 1: unknown opcode: 'teleport'",
            "ProgramParseError",
        )

    def test_location_in_relational_scene(self):
        self.assert_cli_exception(
            ["exec", self.scene, "remove, location[TL]"],
            "token 1 (location[TL]): relational scenes have no grid locations",
            "ProgramVariantError",
        )

    def test_no_dataset(self):
        self.assert_cli_exception(
            ["eval", "--dataset", self.directory],
            f"No dataset found at {self.directory} (looked for test/manifest.json)",
        )

    def test_bad_config_key(self):
        config = path.join(self.directory, "config.yaml")
        with open(config, "w", encoding="utf-8") as f:
            f.write("colour: red\n")

        self.test_cli.invoke(cli, ["--config", config, "ged", self.scene, self.scene])

        self.assertIsInstance(self.exception, CliError)
        assert self.exception.error_type == "ConfigError"
        assert "colour" in self.exception.message
