import json
import sys
from functools import wraps
from traceback import format_exception, format_tb

import click

from sged import logger
from sged.api.exceptions import SgedError

DEBUG_LOG_FILENAME = "sged-debug.log"


def error_record(name: str, message: str) -> str:
    return json.dumps({"error": {"type": name, "message": message}})


class CliError(SgedError, click.ClickException):
    def __init__(self, message, error_type="SgedError"):
        super().__init__(message)
        self.error_type = error_type

    def show(self):
        name = "unknown error"

        if isinstance(self, SgedError):
            name = "sged error"

        elif isinstance(self, IOError):
            name = "local IO error"

        sys.stderr.write(
            "--> {0}: ".format(click.style(name, "red", bold=True)),
        )

        logger.warning(self)
        click.echo(error_record(self.error_type, self.format_message()), err=True)


class CliUsageError(click.UsageError):
    """
    A click usage error (an unknown option or a bad value) that also prints the
    JSON error record.
    """

    def __init__(self, e: click.UsageError):
        super().__init__(e.format_message(), ctx=e.ctx)
        self.error_type = e.__class__.__name__

    def show(self, file=None):
        super().show(file)
        click.echo(error_record(self.error_type, self.format_message()), err=True)


class UnexpectedInternalError(click.ClickException):
    """
    Any non-sged exception raised by a command. Shows the innermost frame and writes the
    full traceback to ``sged-debug.log``.
    """

    def __init__(self, e):
        self.e = e
        self.traceback_lines = format_tb(sys.exc_info()[2])
        super().__init__(str(e))

    @property
    def exception(self) -> str:
        return "".join(format_exception(self.e.__class__, self.e, None))

    def show(self):
        click.echo(
            "--> {0}:\n".format(click.style("An internal exception occurred", "red", bold=True)),
            err=True,
        )

        if self.traceback_lines:
            sys.stderr.write(self.traceback_lines[-1])
        click.echo(self.exception, err=True)

        traceback = "".join(self.traceback_lines)
        with open(DEBUG_LOG_FILENAME, "w", encoding="utf-8") as f:
            f.write(traceback)
            f.write(self.exception)

        logger.debug(traceback)

        click.echo(
            "--> The full traceback has been written to {0}".format(
                click.style(DEBUG_LOG_FILENAME, bold=True),
            ),
            err=True,
        )
        click.echo(error_record(self.e.__class__.__name__, str(self.e)), err=True)


def handle_errors(func):
    """
    Re-raise library errors as ``CliError`` and anything unexpected as
    ``UnexpectedInternalError``, both of which click prints and exits 1 on.
    """

    @wraps(func)
    def decorated(*args, **kwargs):
        try:
            return func(*args, **kwargs)

        except SgedError as e:
            if isinstance(e, click.ClickException):
                raise
            message = getattr(e, "message", e.args[0] if e.args else str(e))
            raise CliError(message, error_type=e.__class__.__name__)

        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise

        except IOError as e:
            raise CliError(str(e), error_type="IOError")

        except Exception as e:
            raise UnexpectedInternalError(e)

    return decorated
