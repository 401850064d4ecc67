from multiprocessing import cpu_count
from typing import Callable, Iterable, List, Optional, TypeVar

from gevent.pool import Pool

from sged import logger

from .config import Config
from .ged import CostModel
from .presets import Preset, get_cost_model

T = TypeVar("T")
R = TypeVar("R")


class BaseStateCallback:
    # Training callbacks
    #

    @staticmethod
    def iteration_end(state: "State", iteration: int, mean_reward: float):
        pass

    @staticmethod
    def evaluation_end(state: "State", iteration: int, validation_reward: float):
        pass

    @staticmethod
    def early_stop(state: "State", iteration: int, best_iteration: int):
        pass


class State:
    """
    Manages state for a sged run: the resolved config, cost model and worker pool.
    """

    config: Config
    preset: Preset
    cost_model: CostModel

    # Main gevent pool
    pool: Pool

    def __init__(self, config: Optional[Config] = None):
        # If no config, create one using the defaults
        if config is None:
            config = Config()

        if not config.PARALLEL:
            config.PARALLEL = cpu_count()

        self.callback_handlers: List[BaseStateCallback] = []

        self.pool = Pool(config.PARALLEL)

        self.config = config
        self.preset = Preset(config.PRESET)
        self.cost_model = get_cost_model(config)

        logger.debug(
            "Initialised state (preset=%s, parallel=%d, costs=%s)",
            self.preset.value,
            config.PARALLEL,
            self.cost_model.to_dict(),
        )

    @property
    def variant(self):
        return self.preset.variant

    def add_callback_handler(self, handler):
        if not isinstance(handler, BaseStateCallback):
            raise TypeError(
                ("{0} is not a valid callback handler (use `BaseStateCallback`)").format(handler),
            )
        self.callback_handlers.append(handler)

    def trigger_callbacks(self, method_name: str, *args, **kwargs):
        for handler in self.callback_handlers:
            func = getattr(handler, method_name)
            func(self, *args, **kwargs)

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """
        Run ``func`` over ``items`` on the pool, results in input order.
        """

        return list(self.pool.imap(func, items))
