"""Exception hierarchy shared by every stage of the pipeline."""


class GSBudgetError(Exception):
    """Base class for all errors raised by this package."""


class MalformedInputError(GSBudgetError, ValueError):
    """An input file could not be parsed."""


class SchemaError(GSBudgetError, ValueError):
    """Channel schema is inconsistent with the data it describes."""


class InvalidInputError(GSBudgetError, ValueError):
    """Arguments violate a documented precondition."""


class InvalidBudgetError(InvalidInputError):
    """A reserve ratio or size budget cannot produce a valid model."""


class InvalidPartitionError(InvalidInputError):
    pass


class InfeasibleError(GSBudgetError):
    """The size budget is below the smallest representable configuration."""


class InstanceTooLargeError(GSBudgetError):
    """Exact solving was refused because the instance exceeds the cell cap."""


class CorruptStreamError(GSBudgetError, ValueError):
    """An entropy-coded or quantized stream failed validation while decoding."""


class CorruptContainerError(CorruptStreamError):
    """A container file is damaged; ``section`` names where it was detected."""

    def __init__(self, message, section=None):
        self.section = section
        if section is not None:
            message = f"[{section}] {message}"
        super().__init__(message)
