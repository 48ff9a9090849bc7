"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A distribution or protocol parameter is outside its valid domain."""


class DegenerateInputError(ParameterError):
    """The privacy budget is below 1/n; the protocol degenerates to outputting zero."""


class InfeasibleParametersError(ParameterError):
    """The derivation recipe produced parameters that cannot run (e.g. a drop probability >= 1)."""


class AuditInconclusiveError(RuntimeError):
    """An audit could not reach its required coverage within the configured grid cap.

    Distinct from an audit *failure*: the guarantee was neither confirmed nor
    refuted on the examined region.
    """
