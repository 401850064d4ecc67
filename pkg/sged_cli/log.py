import logging
from typing import Callable, Dict

import click

from sged import logger

STYLES: Dict[int, Callable[[str], str]] = {
    logging.DEBUG: lambda s: click.style(s, "green"),
    logging.WARNING: lambda s: click.style(s, "yellow"),
    logging.ERROR: lambda s: click.style(s, "red"),
    logging.CRITICAL: lambda s: click.style(s, "red", bold=True),
}


class LogHandler(logging.Handler):
    """
    Writes sged log records to stderr through click, so stdout only carries command
    output (distances, scenes, recall tables).
    """

    def emit(self, record):
        try:
            click.echo(self.format(record), err=True)
        except Exception:
            self.handleError(record)


class LogFormatter(logging.Formatter):
    @staticmethod
    def module_name(record) -> str:
        start = record.pathname.rfind("sged")
        if start < 0:
            return record.name
        return record.pathname[start:-3].replace("/", ".")

    def format(self, record):
        if not isinstance(record.msg, str):
            return super().format(record)

        message = record.getMessage()

        if record.levelno == logging.DEBUG:
            message = "[{0}] {1}".format(self.module_name(record), message)

        # Headline lines start with `-->`, everything else is indented under them
        if "-->" not in message:
            message = "    {0}".format(message)

        style = STYLES.get(record.levelno)
        return style(message) if style else message


def setup_logging(log_level):
    logger.setLevel(log_level)

    # Repeated invocations (tests) share the package logger
    for handler in list(logger.handlers):
        if isinstance(handler, LogHandler):
            logger.removeHandler(handler)

    handler = LogHandler()
    handler.setFormatter(LogFormatter())
    logger.addHandler(handler)
