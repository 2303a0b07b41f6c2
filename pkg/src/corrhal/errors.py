"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` that the CLI puts in
its error JSON.
"""


class CorrhalError(Exception):
    code = "error"

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context


class NonPositiveDepth(CorrhalError):
    code = "non_positive_depth"


class NonFiniteInput(CorrhalError):
    code = "non_finite_input"


class NonFiniteCost(CorrhalError):
    code = "non_finite_cost"


class InvalidConfig(CorrhalError):
    code = "invalid_config"


class UncoveredFrustum(CorrhalError):
    code = "uncovered_frustum"


class ShapeMismatch(CorrhalError):
    code = "shape_mismatch"


class DegenerateConfiguration(CorrhalError):
    code = "degenerate_configuration"


class EmptyBatch(CorrhalError):
    code = "empty_batch"


class EmptyDataset(CorrhalError):
    code = "empty_dataset"


class FormatError(CorrhalError):
    code = "format_error"
