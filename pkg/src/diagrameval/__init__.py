"""Evaluation toolkit for generated scientific diagrams.

Metrics on vector documents and their rasters, a step-aware quality score,
difficulty-balanced cohort sampling and a seasonal corpus registry.
"""

__version__ = "0.1.0"

from .content import ContentSets, precision, recall  # noqa: E402
from .document import (  # noqa: E402
    BBox,
    DiagramElement,
    RasterGrid,
    VectorDocument,
    extract_text_set,
    load_document,
    normalize_text,
    parse_document,
    rasterize,
)
from .layout import alignment_score, blank_score, estimate_blank  # noqa: E402
from .perceptual import (  # noqa: E402
    assess_readability,
    design_score,
    detect_design_errors,
    readability_score,
)
from .sampler import CohortResult, monte_carlo_validate, sample_cohort  # noqa: E402
from .scoring import (  # noqa: E402
    DEFAULT_WEIGHTS,
    EQUAL_WEIGHTS,
    MetricVector,
    ScoreRecord,
    SeasonParams,
    TraceLog,
    WeightProfile,
    base_score,
    count_steps,
    dqs,
    fit_season_params,
)

__all__ = [
    "BBox",
    "CohortResult",
    "ContentSets",
    "DEFAULT_WEIGHTS",
    "DiagramElement",
    "EQUAL_WEIGHTS",
    "MetricVector",
    "RasterGrid",
    "ScoreRecord",
    "SeasonParams",
    "TraceLog",
    "VectorDocument",
    "WeightProfile",
    "alignment_score",
    "assess_readability",
    "base_score",
    "blank_score",
    "count_steps",
    "design_score",
    "detect_design_errors",
    "dqs",
    "estimate_blank",
    "extract_text_set",
    "fit_season_params",
    "load_document",
    "monte_carlo_validate",
    "normalize_text",
    "parse_document",
    "precision",
    "rasterize",
    "readability_score",
    "recall",
    "sample_cohort",
]
