"""Size-targeted compression of Gaussian splat models."""
import os

# the TBB layer is not installed here; pick one that is without a warning
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .errors import (CorruptContainerError, CorruptStreamError, GSBudgetError, InfeasibleError,  # noqa: E402
                     InstanceTooLargeError, InvalidBudgetError, InvalidInputError, InvalidPartitionError,
                     MalformedInputError, SchemaError)
from .model import GaussianModel, load_model, parse_schema, save_model  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "GaussianModel", "load_model", "save_model", "parse_schema",
    "GSBudgetError", "MalformedInputError", "SchemaError", "InvalidInputError", "InvalidBudgetError",
    "InvalidPartitionError", "InfeasibleError", "InstanceTooLargeError", "CorruptStreamError",
    "CorruptContainerError",
]
