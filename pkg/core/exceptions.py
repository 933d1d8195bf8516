"""
Domain errors.

Every error is a ``ValidationError`` carrying a stable ``code`` and the
``params`` needed to locate the offending input (row index, class id, line
number, ...). Messages use ``%(name)s`` placeholders filled from ``params``.
"""

from django.core.exceptions import ValidationError


class AgcmError(ValidationError):
    default_code = "invalid"
    default_message = "Invalid input."

    def __init__(self, message=None, code=None, params=None):
        super().__init__(
            message or self.default_message,
            code=code or self.default_code,
            params=params,
        )

    def __str__(self):
        return "; ".join(self.messages)


class NonFiniteInput(AgcmError):
    default_code = "non_finite"
    default_message = "Input contains NaN or Inf values."


class ShapeMismatch(AgcmError):
    default_code = "shape_mismatch"
    default_message = "Array shapes do not match."


class DegenerateNorm(AgcmError):
    default_code = "degenerate_norm"
    default_message = "Vector norm is below the degeneracy threshold (row %(row)s)."


class DegenerateVariance(AgcmError):
    default_code = "degenerate_variance"
    default_message = "Vector has no variance across coordinates (row %(row)s)."


class UnknownPrimitive(AgcmError):
    default_code = "unknown_primitive"
    default_message = "No vector-Jacobian rule is registered for %(op)s."


class InvalidLabel(AgcmError):
    default_code = "invalid_label"
    default_message = "Label %(label)s is outside the class range [0, %(n_classes)s)."


class InvalidConfig(AgcmError):
    default_code = "invalid_config"
    default_message = "Invalid configuration."


class EmptyBatch(AgcmError):
    default_code = "empty_batch"
    default_message = "Batch contains no proposals."


class EmptyDataset(AgcmError):
    default_code = "empty_dataset"
    default_message = "Dataset contains no samples."


class ShotCountMismatch(AgcmError):
    default_code = "shot_count_mismatch"
    default_message = "Class %(label)s has %(count)s samples, expected %(k)s."


class InfeasibleSeparation(AgcmError):
    default_code = "infeasible_separation"
    default_message = (
        "Could not place %(n_classes)s class means %(min_angle_deg)s degrees apart "
        "in dimension %(d)s after %(attempts)s attempts."
    )


class DatasetFormatError(AgcmError):
    default_code = "dataset_format"
    default_message = "Malformed dataset file %(path)s at line %(line)s."


class CheckpointFormatError(AgcmError):
    default_code = "checkpoint_format"
    default_message = "Malformed checkpoint file %(path)s."


class EmptyMatrix(AgcmError):
    default_code = "empty_matrix"
    default_message = "Confusion matrix has no counts."


class EmptyClass(AgcmError):
    default_code = "empty_class"
    default_message = "At least two non-empty classes are required."


class ForgettingUndefined(AgcmError):
    default_code = "forgetting_undefined"
    default_message = "Base accuracy before adaptation must be positive, got %(acc_before)s."
