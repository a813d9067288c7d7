"""Exception hierarchy shared by all modules.

The CLI maps these onto its exit-code contract, so new error conditions
should reuse an existing class (or subclass one) rather than raising bare
ValueErrors.
"""


class WeightprovError(Exception):
    """Base class for all errors raised by this package."""


class ContainerFormatError(WeightprovError):
    """The container header is malformed or uses an unsupported layout."""


class ContainerCorruptionError(WeightprovError):
    """Tensor offsets overlap, overrun the file, or disagree with shapes."""


class ValidationError(WeightprovError):
    """Stored values violate a data invariant (e.g. NaN/Inf in a tensor)."""


class ManifestError(WeightprovError):
    """A manifest role is missing or resolves to a wrong-shaped tensor."""


class DimensionError(WeightprovError):
    """Operands have inconsistent shapes for the requested operation."""


class DomainError(WeightprovError):
    """An argument is outside the mathematical domain of the function."""


class ParameterError(WeightprovError):
    """A transform parameter violates its constraints (e.g. zero scale)."""


class ArchitectureMismatchError(WeightprovError):
    """The two models are incompatible for the chosen statistic."""


class TrainingError(WeightprovError):
    """A training run diverged (non-finite loss)."""
