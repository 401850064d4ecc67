from .config import Config  # noqa: F401 # pragma: no cover
from .dsl import Program, ProgramToken, make_program, parse_program  # noqa: F401
from .engine import ExecutionTrace, execute  # noqa: F401 # pragma: no cover
from .exceptions import SgedError  # noqa: F401 # pragma: no cover
from .ged import CostModel, ged_astar, graph_edit_distance  # noqa: F401
from .presets import Preset  # noqa: F401 # pragma: no cover
from .scene import ObjectNode, SceneGraph, Variant, load_scene  # noqa: F401
from .state import BaseStateCallback, State  # noqa: F401 # pragma: no cover
