"""
Continual Learning Errors
=========================
Exception hierarchy shared by every module in the library.

Each class also derives from the closest builtin so callers that only
know about ValueError / RuntimeError keep working.
"""


class ContinualLearningError(Exception):
    """Base class for all library errors"""


class ConfigurationError(ContinualLearningError, ValueError):
    """Invalid construction parameters or experiment configuration"""


class ShapeError(ContinualLearningError, ValueError):
    """Array or parameter vector with the wrong shape or length"""


class InputError(ContinualLearningError, ValueError):
    """Well-shaped input with invalid content (labels out of range, etc.)"""


class UsageError(ContinualLearningError, RuntimeError):
    """API called in the wrong order or with out-of-range bookkeeping"""


class FormatError(ContinualLearningError, ValueError):
    """Malformed file contents (IDX files, buffer snapshots)"""


class NumericalError(ContinualLearningError, FloatingPointError):
    """NaN or Inf produced by a loss or gradient evaluation"""
