import os
from fractions import Fraction
from typing import Any, Dict, Optional

import yaml

from sged import logger

from .exceptions import ConfigError


class ConfigDefaults:
    # Dataset preset: `css` (3x3 grid scenes) or `crir` (relational scenes)
    PRESET = "crir"
    # Master seed, every random draw in a run derives from this
    SEED = 0
    # Gevent pool size (0 = one worker per CPU)
    PARALLEL = 0
    # Fixed program length, shorter programs are padded with NULL
    PROGRAM_LENGTH = 12
    # Edit cost overrides (None = use the preset's costs)
    NODE_DELETE_COST = None
    NODE_INSERT_COST = None
    ATTR_COST = None
    EDGE_COST = None
    # A* heuristic: greedy, assignment or zero
    HEURISTIC = "greedy"
    # Dataset generation
    N_SCENES = 300
    N_QUERIES = 250
    MIN_OBJECTS = 4
    MAX_OBJECTS = 6
    MIN_SEPARATION = 0.5
    MAX_RETRIES = 100
    CSS_LOCATION_RATE = 0.85
    # Training
    REWARD = "ged"
    GAMMA = 1.0
    PRETRAIN_LEARNING_RATE = None  # None = preset default
    PRETRAIN_EPOCHS = 300
    PRETRAIN_FRACTION = 0.1
    LEARNING_RATE = 0.02
    BATCH_SIZE = 64
    ITERATIONS = 200
    VALIDATION_FRACTION = 0.1
    EVAL_EVERY = 10
    PATIENCE = 5
    BASELINE = "moving_average"
    BASELINE_DECAY = 0.9
    # Retrieval
    K = 1


config_defaults = {key: value for key, value in ConfigDefaults.__dict__.items() if key.isupper()}


def _check_choice(*choices):
    def checker(key, value):
        if value not in choices:
            raise ConfigError(
                "{0}: expected one of {1} (got {2!r})".format(
                    key.lower(),
                    ", ".join(str(choice) for choice in choices),
                    value,
                ),
            )
        return value

    return checker


def _check_int(minimum):
    def checker(key, value):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key.lower()}: expected an integer (got {value!r})")
        if value < minimum:
            raise ConfigError(f"{key.lower()}: must be at least {minimum} (got {value})")
        return value

    return checker


def _check_float(minimum, maximum=None, allow_none=False):
    def checker(key, value):
        if value is None and allow_none:
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key.lower()}: expected a number (got {value!r})")
        if value < minimum or (maximum is not None and value > maximum):
            bounds = f"[{minimum}, {maximum}]" if maximum is not None else f">= {minimum}"
            raise ConfigError(f"{key.lower()}: must be {bounds} (got {value})")
        return float(value)

    return checker


def parse_cost(key: str, value) -> Optional[Fraction]:
    """
    Costs are held exactly: ints, floats and fraction strings ("1/16") all become
    ``Fraction`` values.
    """

    if value is None:
        return None

    if isinstance(value, bool):
        raise ConfigError(f"{key.lower()}: expected a number or fraction (got {value!r})")

    try:
        if isinstance(value, float):
            cost = Fraction(value).limit_denominator(10**6)
        else:
            cost = Fraction(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(f"{key.lower()}: expected a number or fraction (got {value!r})")

    if cost < 0:
        raise ConfigError(f"{key.lower()}: costs must be nonnegative (got {value})")
    return cost


def _check_seed(key, value):
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        value = int(value)
    _check_int(0)(key, value)
    if value >= 2**64:
        raise ConfigError(f"{key.lower()}: must fit in 64 bits (got {value})")
    return value


config_checkers = {
    "PRESET": _check_choice("css", "crir"),
    "SEED": _check_seed,
    "PARALLEL": _check_int(0),
    "PROGRAM_LENGTH": _check_int(1),
    "NODE_DELETE_COST": parse_cost,
    "NODE_INSERT_COST": parse_cost,
    "ATTR_COST": parse_cost,
    "EDGE_COST": parse_cost,
    "HEURISTIC": _check_choice("greedy", "assignment", "zero"),
    "N_SCENES": _check_int(1),
    "N_QUERIES": _check_int(5),
    "MIN_OBJECTS": _check_int(1),
    "MAX_OBJECTS": _check_int(1),
    "MIN_SEPARATION": _check_float(0),
    "MAX_RETRIES": _check_int(1),
    "CSS_LOCATION_RATE": _check_float(0, 1),
    "REWARD": _check_choice("ged", "binary"),
    "GAMMA": _check_float(0, 1),
    "PRETRAIN_LEARNING_RATE": _check_float(0, allow_none=True),
    "PRETRAIN_EPOCHS": _check_int(0),
    "PRETRAIN_FRACTION": _check_float(0, 1),
    "LEARNING_RATE": _check_float(0),
    "BATCH_SIZE": _check_int(1),
    "ITERATIONS": _check_int(0),
    "VALIDATION_FRACTION": _check_float(0, 1),
    "EVAL_EVERY": _check_int(1),
    "PATIENCE": _check_int(1),
    "BASELINE": _check_choice("none", "moving_average"),
    "BASELINE_DECAY": _check_float(0, 1),
    "K": _check_int(1),
}


class Config(ConfigDefaults):
    """
    The resolved configuration for one sged run.
    """

    def __init__(self, **kwargs):
        config = config_defaults.copy()

        for key, value in kwargs.items():
            if key not in config:
                raise ConfigError(f"Unknown config key: {key.lower()}")
            config[key] = value

        for key, value in config.items():
            setattr(self, key, value)

    def __setattr__(self, key, value):
        if key not in config_defaults:
            raise ConfigError(f"Unknown config key: {key.lower()}")

        checker = config_checkers.get(key)
        if checker:
            value = checker(key, value)

        super().__setattr__(key, value)

    def get_current_state(self):
        return [(key, getattr(self, key)) for key in config_defaults.keys()]

    def set_current_state(self, config_state):
        for key, value in config_state:
            setattr(self, key, value)

    def copy(self) -> "Config":
        return Config(**dict(self.get_current_state()))

    def update(self, **kwargs):
        """
        Apply overrides, ignoring ``None`` values (unset CLI flags).
        """

        for key, value in kwargs.items():
            if value is not None:
                setattr(self, key.upper(), value)

        if self.MIN_OBJECTS > self.MAX_OBJECTS:
            raise ConfigError(
                f"min_objects ({self.MIN_OBJECTS}) is larger than max_objects "
                f"({self.MAX_OBJECTS})",
            )

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for key, value in self.get_current_state():
            if isinstance(value, Fraction):
                value = str(value)
            data[key.lower()] = value
        return data


def apply_env(config: Config) -> Config:
    seed = os.environ.get("SGED_SEED")
    if seed:
        logger.debug("Using SGED_SEED from environment: %s", seed)
        try:
            config.SEED = seed
        except ConfigError as e:
            raise ConfigError(f"SGED_SEED: {e}")
    return config


def load_config(filename: str, config: Optional[Config] = None) -> Config:
    """
    Load a YAML config file (lowercase keys) over ``config`` (or the defaults). A run
    manifest is accepted as well, in which case its ``config`` section is used.
    """

    if config is None:
        config = Config()

    logger.debug("Loading config: %s", filename)

    try:
        with open(filename, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"{filename}{line}: invalid config file: {e}")
    except IOError as e:
        raise ConfigError(f"{filename}: could not read config file: {e}")

    if data is None:
        return config

    if not isinstance(data, dict):
        raise ConfigError(f"{filename}: expected a mapping of config keys")

    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]

    unknown = [key for key in data if str(key).upper() not in config_defaults]
    if unknown:
        raise ConfigError(
            "{0}: unknown config key(s): {1}".format(filename, ", ".join(map(str, unknown))),
        )

    try:
        config.update(**{str(key): value for key, value in data.items() if value is not None})
        for key, value in data.items():
            if value is None:
                setattr(config, str(key).upper(), None)
    except ConfigError as e:
        raise ConfigError(f"{filename}: {e}")

    return config
