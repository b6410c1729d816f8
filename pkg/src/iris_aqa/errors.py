"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class IrisError(Exception):
    """Base class for all errors raised by iris_aqa."""


class DimensionError(IrisError, ValueError):
    """Array shapes do not agree with a layer or record geometry."""


class ScoreSheetError(IrisError, ValueError):
    """A score sheet failed validation.

    ``kind`` is a stable machine-readable tag (``missing_field``,
    ``component_count``, ``goe_range``, ``pcs_factor``, ``duplicate_seq``,
    ``sequence_gap``, ``bad_value``, ``totals_mismatch``, ``syntax``) and
    ``where`` names the offending field or line.
    """

    def __init__(self, kind: str, message: str, where: str | None = None):
        self.kind = kind
        self.where = where
        loc = f" [{where}]" if where else ""
        super().__init__(f"{kind}{loc}: {message}")


class DatasetError(IrisError, ValueError):
    """A dataset directory or record on disk is inconsistent."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class LabelError(IrisError, ValueError):
    """Label indices outside the class range, or mismatched labelings."""


class MetricError(IrisError, ValueError):
    """A metric is undefined for the supplied sample."""


class ConstantInputError(MetricError):
    """Rank correlation requested on a side with a single distinct value."""


class ZeroVarianceError(MetricError):
    """Product-moment correlation requested on a side with zero variance."""


class DivergenceError(IrisError, ArithmeticError):
    """Training produced a non-finite loss."""


class VariantError(IrisError, ValueError):
    """The requested operation is not supported by the model variant."""


class ModelFormatError(IrisError, ValueError):
    """A serialized model file is truncated, corrupt or of an unknown version."""
