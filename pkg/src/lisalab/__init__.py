"""lisalab: a desk-scale lab for layerwise importance-sampled AdamW.

Trains a tiny decoder-only transformer with three methods sharing one loop
and one log schema: full-parameter AdamW, LoRA adapters, and periodic random
layer freezing (embedding and head always active, a sampled subset of middle
blocks trainable per period), with layerwise weight-norm instrumentation and
analytic memory accounting.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    DomainError,
    ShapeError,
)
from .model import LayeredModel, LayerGroup, ModelConfig, build_model  # noqa: F401
from .optim import AdamWConfig, AdamWState, adamw_step, set_trainable_mask  # noqa: F401
from .scheduler import ActiveMask, FreezeSchedule, sample_mask  # noqa: F401
from .lora import LoRAConfig, attach_adapters, merge  # noqa: F401
from .tensor import Tape, Tensor  # noqa: F401
