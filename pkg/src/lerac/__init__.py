"""Learning-rate curriculum (LeRaC) training engine and regime-comparison harness."""

from .errors import (ConfigError, DatasetEmptyError, DimensionError, FormatError,
                     LeracError, NumericError, StateError, ValidationError)
from .network import Network, init_weights
from .schedulers import (CBSConfig, LeRaCConfig, PlateauPolicy, RateSchedule,
                         assign_initial_rates, cbs_sigma_at, plateau_step, rate_at)

__version__ = "0.1.0"
