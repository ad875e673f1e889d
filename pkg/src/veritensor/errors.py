"""Exception types shared across the package."""


class VeritensorError(Exception):
    """Base class for all package-specific errors."""


class OutOfRangeError(VeritensorError, ValueError):
    """Signed value outside the injective embedding window."""


class ShapeMismatchError(VeritensorError, ValueError):
    pass


class WindowOverflowError(VeritensorError, OverflowError):
    """An arithmetic result left the representable integer window."""


class NegativeInputError(VeritensorError, ValueError):
    pass


class NegativeDividendError(VeritensorError, ValueError):
    pass


class TokenOutOfRangeError(VeritensorError, IndexError):
    pass


class BadGroupingError(VeritensorError, ValueError):
    pass


class BadConfigError(VeritensorError, ValueError):
    pass


class EmptyTagError(VeritensorError, ValueError):
    pass


class AllPaddedError(VeritensorError, ValueError):
    """Softmax row where every lane is padding (sum of weights is zero)."""


class OddHeadDimError(VeritensorError, ValueError):
    pass


class CommitmentMismatchError(VeritensorError):
    """Weight data disagrees with the committed Merkle root."""


class WeightDigestMismatchError(CommitmentMismatchError):
    pass


class IncompatibleNodesError(VeritensorError, ValueError):
    """Proof nodes that cannot be merged."""


class ProofFormatError(VeritensorError, ValueError):
    """Malformed proof container bytes."""


class ManifestError(VeritensorError, ValueError):
    """Malformed model manifest."""


class TensorFileError(VeritensorError, ValueError):
    """Tensor file disagrees with the manifest (size, shape)."""
