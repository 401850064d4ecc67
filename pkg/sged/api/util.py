import json
from hashlib import sha1
from typing import Any, Dict, Union

import numpy as np
from jinja2 import Environment, StrictUndefined

# Template cache
TEMPLATES: Dict[str, Any] = {}


def sha1_hash(string: str) -> str:
    """
    Return the SHA1 of the input string.
    """

    hasher = sha1()
    hasher.update(string.encode("utf-8"))
    return hasher.hexdigest()


def get_template(template_string: str):
    """
    Gets a jinja2 ``Template`` object for the input string, cached on its SHA1.
    """

    cache_key = sha1_hash(template_string)
    if cache_key in TEMPLATES:
        return TEMPLATES[cache_key]

    template = Environment(
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
    ).from_string(template_string)

    TEMPLATES[cache_key] = template
    return template


def _seed_key(key: Union[int, str]) -> int:
    if isinstance(key, int):
        return key
    return int(sha1_hash(key)[:8], 16)


def derive_seed(seed: int, *keys: Union[int, str]) -> np.random.SeedSequence:
    """
    Derive an independent seed sequence for ``keys`` (split, scene index, ...) from the
    master seed, so each draw is fixed regardless of the order work is done in.
    """

    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(_seed_key(key) for key in keys))


def make_rng(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


def derive_int_seed(seed: int, *keys: Union[int, str]) -> int:
    return int(derive_seed(seed, *keys).generate_state(1, dtype=np.uint64)[0])


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=4)


def write_json(filename: str, data: Any) -> None:
    with open(filename, "w", encoding="utf-8") as f:
        f.write(dump_json(data))
        f.write("\n")


def read_json(filename: str) -> Any:
    with open(filename, "r", encoding="utf-8") as f:
        return json.load(f)


def format_number(value) -> str:
    """
    Render a distance or reward for tables: exact fractions as floats, 4 places max.
    """

    value = float(value)
    if value == int(value):
        return "{0:.1f}".format(value)
    return "{0:.4f}".format(value).rstrip("0")
