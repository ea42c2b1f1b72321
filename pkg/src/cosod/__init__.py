"""Self-supervised co-salient object detection over frozen ViT patch features."""

from .errors import ConfigurationError, ContractError, FormatError, NumericError

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "FormatError",
    "NumericError",
    "__version__",
]
