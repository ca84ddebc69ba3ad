"""Two-site feature embedding estimation with group-structured transfer.

The estimator lives in :mod:`transnest.pipeline`; benchmarks, the simulation
generator, evaluation metrics and the command-line interface sit alongside.
"""

from .catalog import Feature, FeatureCatalog, SiteMatrix, site_matrix
from .embeddings import EmbeddingSet
from .errors import ConfigError, NumericalError, StageError, TransNESTError
from .pipeline import PipelineConfig, PipelineResult, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EmbeddingSet",
    "Feature",
    "FeatureCatalog",
    "NumericalError",
    "PipelineConfig",
    "PipelineResult",
    "SiteMatrix",
    "StageError",
    "TransNESTError",
    "run_pipeline",
    "site_matrix",
]
