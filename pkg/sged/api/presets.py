"""
Dataset presets pair a graph variant with its edit costs and training defaults.
"""

from enum import Enum
from typing import TYPE_CHECKING

from .ged import CRIR_COSTS, CSS_COSTS, CostModel
from .scene import Variant

if TYPE_CHECKING:
    from .config import Config


class Preset(str, Enum):
    CSS = "css"
    CRIR = "crir"

    @property
    def variant(self) -> Variant:
        if self is Preset.CSS:
            return Variant.GRID
        return Variant.RELATIONAL

    @property
    def cost_model(self) -> CostModel:
        if self is Preset.CSS:
            return CSS_COSTS
        return CRIR_COSTS

    @property
    def pretrain_learning_rate(self) -> float:
        if self is Preset.CSS:
            return 6e-4
        return 7e-4


def get_preset(config: "Config") -> Preset:
    return Preset(config.PRESET)


def get_cost_model(config: "Config") -> CostModel:
    """
    The preset's costs with any overrides from the config applied.
    """

    return get_preset(config).cost_model.replace(
        node_delete_cost=config.NODE_DELETE_COST,
        node_insert_cost=config.NODE_INSERT_COST,
        attr_cost=config.ATTR_COST,
        edge_cost=config.EDGE_COST,
    )
