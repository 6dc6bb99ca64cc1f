"""LaverNet: lightweight all-in-one video restoration on a small numpy autodiff core."""

__version__ = "0.1.0"

from .model import ModelConfig, ParamStore, init_params, lavernet_forward, lavernet_step, restore  # noqa: E402
from .tensor import Tensor, no_grad  # noqa: E402

__all__ = ["ModelConfig", "ParamStore", "Tensor", "init_params", "lavernet_forward", "lavernet_step",
           "no_grad", "restore", "__version__"]
