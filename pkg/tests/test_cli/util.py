from os import chdir, getcwd

from click.testing import CliRunner

import sged
from sged_cli.main import cli


def run_cli(*arguments):
    cwd = getcwd()
    sged.is_cli = True
    runner = CliRunner()
    result = runner.invoke(cli, arguments)
    sged.is_cli = False
    chdir(cwd)
    return result
