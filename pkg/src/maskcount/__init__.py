"""maskcount: exemplar-conditioned counting with pseudo-labeled segmentation masks.

The pipeline trains a small single-class counting model on synthetic scenes,
derives binary pseudo segmentation masks by clustering patch embeddings with
an exemplar, selects the cluster count that minimizes the counting loss,
trains an exemplar-based segmentation model on those masks, and evaluates
masked vs. unmasked counting on synthetic multi-class scenes.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    MaskCountError,
    MissingArtifactError,
    NumericError,
    ParseError,
    PlacementError,
)

__all__ = [
    "ConfigError",
    "MaskCountError",
    "MissingArtifactError",
    "NumericError",
    "ParseError",
    "PlacementError",
    "__version__",
]
