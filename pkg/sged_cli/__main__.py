import signal
import sys

import click
import gevent

import sged

from .main import cli


def _handle_interrupt(signum, frame):
    click.echo("Exiting upon user request!")
    sys.exit(0)


def execute_sged():
    # Set CLI mode
    sged.is_cli = True

    # Kill any greenlets on ctrl+c
    gevent.signal_handler(signal.SIGINT, gevent.kill)
    signal.signal(signal.SIGINT, _handle_interrupt)  # print the message and exit main

    cli()


if __name__ == "__main__":
    execute_sged()
