"""Intrinsic-reward GRPO at toy scale plus the entropy-trajectory diagnostics."""

from manifold_rl.errors import InvalidInputError, MissingClusterError, NotFoundError

__version__ = "0.1.0"

__all__ = ["InvalidInputError", "MissingClusterError", "NotFoundError", "__version__"]
