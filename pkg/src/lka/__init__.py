"""Large-kernel adapter fine-tuning micro-toolkit."""

from .adapters import AdapterParams, LkaConfig, adapter_forward, adapter_param_count, init_adapter, lka_conv
from .backbone import (
    Model,
    ModelConfig,
    MODES,
    PLACEMENTS,
    build_model,
    block_forward,
    make_config,
    model_features,
    model_forward,
    trainable_params,
)
from .tensor import Tensor, backward, finite_diff_check, no_grad, zero_grad

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "LkaConfig",
    "MODES",
    "Model",
    "ModelConfig",
    "PLACEMENTS",
    "Tensor",
    "adapter_forward",
    "adapter_param_count",
    "backward",
    "build_model",
    "block_forward",
    "finite_diff_check",
    "init_adapter",
    "lka_conv",
    "make_config",
    "model_features",
    "model_forward",
    "no_grad",
    "trainable_params",
    "zero_grad",
    "__version__",
]
