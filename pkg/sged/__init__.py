"""
Welcome to sged.
"""

import logging

# Global flag set True by `sged_cli.__main__`
is_cli = False

# Global sged logger
logger = logging.getLogger("sged")

# Setup package level version
from .version import __version__  # noqa
