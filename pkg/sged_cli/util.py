import os
from dataclasses import asdict, is_dataclass
from enum import Enum
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Dict, Optional

from sged import __version__, logger
from sged.api.datagen import Dataset
from sged.api.util import write_json

from .exceptions import CliError

if TYPE_CHECKING:
    from sged.api.config import Config

MANIFEST_FILENAME = "manifest.json"


def json_encode(obj):
    # sged types
    if hasattr(obj, "to_dict"):
        return obj.to_dict()

    # Python types
    if isinstance(obj, Fraction):
        return str(obj)

    if isinstance(obj, Enum):
        return obj.value

    if isinstance(obj, (set, frozenset)):
        return sorted(obj)

    if is_dataclass(obj) and not isinstance(obj, type):
        return asdict(obj)

    raise TypeError("Cannot serialize: {0} ({1})".format(type(obj), obj))


def resolve_dataset_dir(path: str, split: str) -> str:
    """
    ``--dataset`` names either one split directory or a directory of splits; for the
    latter ``split`` is picked.
    """

    split_path = os.path.join(path, split)
    if os.path.exists(os.path.join(split_path, MANIFEST_FILENAME)):
        return split_path

    if os.path.exists(os.path.join(path, MANIFEST_FILENAME)):
        return path

    raise CliError(f"No dataset found at {path} (looked for {split}/{MANIFEST_FILENAME})")


def load_dataset(path: str, split: str) -> Dataset:
    directory = resolve_dataset_dir(path, split)
    logger.info("Loading dataset: {0}".format(directory))
    return Dataset.load(directory)


def write_run_manifest(
    filename: str,
    command: str,
    config: "Config",
    results: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write the run manifest: the command, the fully resolved config and any results.
    Passing it back with ``--config`` reproduces the run.
    """

    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)

    manifest = {
        "sged_version": __version__,
        "command": command,
        "config": config.to_dict(),
        "results": results or {},
    }

    write_json(filename, _encode(manifest))

    logger.debug("Wrote run manifest: %s", filename)


def _encode(data):
    if isinstance(data, dict):
        return {str(key): _encode(value) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [_encode(value) for value in data]
    if isinstance(data, (str, int, float, bool)) or data is None:
        return data
    return _encode(json_encode(data))
