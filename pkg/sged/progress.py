import os
import platform
import sys
from contextlib import contextmanager
from itertools import cycle
from threading import Event, Thread
from time import monotonic, sleep
from typing import Callable, Iterator, Optional

import sged

IS_WINDOWS = platform.system() == "Windows"

WAIT_TIME = 1 / 5
WAIT_CHARS = ("-", "/", "|", "\\")

IS_TTY = sys.stdout.isatty() and sys.stderr.isatty()

Advance = Callable[..., None]


class ProgressLine:
    """
    Counts finished items (scenes, queries, iterations) and renders the status line:
    ``37% (74/200) - finetuning - reward 0.8125 - 12.3/s``.
    """

    def __init__(self, total: int, prefix_message: Optional[str] = None):
        self.total = total
        self.prefix_message = prefix_message
        self.complete = 0
        self.status: Optional[str] = None
        self.started = monotonic()

    def advance(self, status: Optional[str] = None) -> None:
        self.complete += 1
        if status is not None:
            self.status = status

    def render(self) -> str:
        bits = []

        if self.total > 1:
            bits.append(
                "{0}% ({1}/{2})".format(
                    self.complete * 100 // self.total,
                    self.complete,
                    self.total,
                ),
            )

        if self.prefix_message:
            bits.append(self.prefix_message)

        if self.status:
            bits.append(self.status)

        elapsed = monotonic() - self.started
        if self.complete and elapsed > 1:
            bits.append("{0:.1f}/s".format(self.complete / elapsed))

        return " - ".join(bits)


def _print_spinner(stop_event: Event, line: ProgressLine) -> None:
    if not IS_TTY or os.environ.get("SGED_PROGRESS") == "off":
        return

    for char in cycle(WAIT_CHARS):
        if stop_event.is_set():
            break

        sys.stderr.write("    {0} {1}\r".format(char, line.render()))
        sys.stderr.flush()

        # Clear the line on the next write, so log output overwrites the spinner
        if not IS_WINDOWS:
            sys.stderr.write("\033[K")

        sleep(WAIT_TIME)


@contextmanager
def progress_spinner(total_items: int, prefix_message=None) -> Iterator[Advance]:
    """
    Show a spinner with ``complete/total`` while the block runs. Yields
    ``advance(status=None)`` to mark one item complete, optionally replacing the status
    text. A noop outside the CLI.
    """

    if not sged.is_cli:
        yield lambda status=None: None
        return

    line = ProgressLine(total_items, prefix_message)
    stop_event = Event()

    spinner_thread = Thread(target=_print_spinner, args=(stop_event, line))
    spinner_thread.daemon = True
    spinner_thread.start()

    try:
        yield line.advance
    finally:
        stop_event.set()
        spinner_thread.join()
