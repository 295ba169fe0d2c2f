"""Exception types shared across the package.

Every error raised on a contract violation derives from OcvarError so that
callers (CLI, service) can map failures to a single machine-readable shape.
"""


class OcvarError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class InvalidDesign(OcvarError):
    """Design description violates a structural constraint."""


class SupportTooLarge(OcvarError):
    """Exact enumeration would exceed the allowed support size."""


class ArmOutOfRange(OcvarError):
    """Assignment contains an arm label outside 1..k."""


class EmptySupport(OcvarError):
    """Distribution has no assignments to average over."""


class ZeroPi(OcvarError):
    """Some unit/arm slot has zero assignment probability."""


class ShapeMismatch(OcvarError):
    """Array arguments have incompatible shapes."""


class MatrixTooLarge(OcvarError):
    """kn exceeds the dense matrix-path guard."""


class TensorTooLarge(OcvarError):
    """kn exceeds the degree-4 tensor-path guard."""


class UncenteredByArm(OcvarError):
    """Per-arm covariate layout requires columns that sum to zero."""


class SingularNormalMatrix(OcvarError):
    """The weighted normal matrix of a least-squares fit is not invertible."""


class NonEstimableCell(OcvarError):
    """A bounded matrix is nonzero on a cell with zero joint probability."""


class DegenerateDoF(OcvarError):
    """A degrees-of-freedom or leverage correction has a nonpositive denominator."""


class SvdFailure(OcvarError):
    """Spectral decomposition of the moment tensor did not converge."""


class ConsistencyError(OcvarError):
    """Two algebraically equivalent evaluation paths disagreed."""


class SchemaError(OcvarError):
    """Input file is missing required columns or cannot be parsed."""


class StructureError(OcvarError):
    """Dataset cluster/pair structure is inconsistent."""


class AllMissing(OcvarError):
    """A column has no observed values to impute from."""


class OutOfScale(OcvarError):
    """An outcome value lies outside the declared scale."""
