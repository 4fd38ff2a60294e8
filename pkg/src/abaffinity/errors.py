"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to, so error
classes stay distinguishable from the shell (see README for the table).
"""


class AffinityError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ShapeError(AffinityError):
    """Tensor dimensions incompatible with the requested operation."""

    exit_code = 6


class ContractError(AffinityError):
    """An operation precondition was violated (e.g. non-scalar loss)."""

    exit_code = 6


class ConfigError(AffinityError):
    """Invalid or mismatched configuration (widths, variants, keys)."""

    exit_code = 6


class NonFiniteError(AffinityError):
    """NaN or Inf detected where finite values are required."""

    exit_code = 8


class RecordRejectedError(AffinityError):
    """A data record failed cleaning/validation and was rejected."""

    exit_code = 4


class DomainError(AffinityError):
    """Numeric argument outside the mathematical domain (e.g. kd <= 0)."""

    exit_code = 4


class DegenerateScalerError(AffinityError):
    """Standardization impossible: constant or insufficient values."""

    exit_code = 4


class SplitInfeasibleError(AffinityError):
    """Dataset cannot be partitioned into three disjoint splits."""

    exit_code = 5


class EmptySequenceError(AffinityError):
    """A masked reduction received a mask with no active positions."""

    exit_code = 4


class FormatError(AffinityError):
    """A binary file failed magic/version/structure validation."""

    exit_code = 3


class InputError(AffinityError):
    """An input file is missing or unreadable."""

    exit_code = 3


class ZeroRetainedError(AffinityError):
    """Preprocessing dropped every input record."""

    exit_code = 4


class MissingEmbeddingError(AffinityError):
    """An embedding lookup failed for a known sequence id."""

    exit_code = 7


class TrainingDivergedError(AffinityError):
    """Loss became non-finite during optimization."""

    exit_code = 8


class UndefinedMetricError(AffinityError):
    """A metric is undefined for the given inputs (constant/single-class)."""

    exit_code = 4
