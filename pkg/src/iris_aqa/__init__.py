"""Rubric-informed action quality assessment on window embeddings.

Segments a performance into Jump/Spin/StepSequence/Transition runs, scores
each planned element's GOE and the five program components, and composes a
score sheet whose totals add up exactly.
"""

from .errors import (
    ConstantInputError,
    DatasetError,
    DimensionError,
    DivergenceError,
    IrisError,
    LabelError,
    MetricError,
    ModelFormatError,
    ScoreSheetError,
    VariantError,
    ZeroVarianceError,
)
from .rubric import ActionType, Judgment, ScoreSheet, Segment, compose_judgment, parse_score_sheet

__version__ = "0.1.0"

__all__ = [
    "ActionType",
    "ConstantInputError",
    "DatasetError",
    "DimensionError",
    "DivergenceError",
    "IrisError",
    "Judgment",
    "LabelError",
    "MetricError",
    "ModelFormatError",
    "ScoreSheet",
    "ScoreSheetError",
    "Segment",
    "VariantError",
    "ZeroVarianceError",
    "compose_judgment",
    "parse_score_sheet",
]
