"""Desk-scale detection transformer with pattern-composed dynamic queries.

The compiled extension provides the full surface; this package re-exports it.
Installed wheels place the extension inside the package; in-tree test runs
put it on sys.path next to the package instead.
"""

try:
    from ._paqdet import *  # noqa: F401,F403
    from ._paqdet import __doc__ as _core_doc
except ImportError:
    from _paqdet import *  # noqa: F401,F403
    from _paqdet import __doc__ as _core_doc

__version__ = "0.1.0"
__all__ = [
    "Box",
    "DatasetConfig",
    "Detection",
    "Detector",
    "GtInstance",
    "ModelConfig",
    "class_names",
    "compute_map",
    "count_flops",
    "count_params",
    "generate_dataset",
    "generate_scene",
    "gini",
    "giou",
    "hungarian",
    "iou",
]
