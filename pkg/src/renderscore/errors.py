"""Exception classes shared across the package."""


class RenderscoreError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(RenderscoreError):
    """Two inputs that must share dimensions do not."""


class ImageTooSmall(RenderscoreError):
    """Image is below the minimum size an operation supports."""


class BlankImage(RenderscoreError):
    """Image carries (almost) no non-background content."""


class EmptySignature(RenderscoreError):
    """Signature has zero total mass on at least one side."""


class GridMismatch(RenderscoreError):
    """Patch grids have incompatible shapes."""


class DegenerateReference(RenderscoreError):
    """Reference image is equally distant from both constant images (zero denominator)."""


class ZeroVector(RenderscoreError):
    """Activation vector has zero norm."""


class InsufficientData(RenderscoreError):
    """Not enough rows to compute the requested statistic."""


class MalformedJson(RenderscoreError):
    """Response could not be parsed as the expected JSON shape."""


class PathTraversal(RenderscoreError):
    """A bundle entry tried to escape its sandbox directory."""


class Unfixable(RenderscoreError):
    """All post-processing fix stages were exhausted without a compilable structure."""


class MalformedManifest(RenderscoreError):
    """Instance manifest line is missing fields or unparseable."""


class DuplicateInstance(RenderscoreError):
    """Two manifest instances share the same image content hash."""


class ProviderUnavailable(RenderscoreError):
    """Completion provider could not be reached after retries."""


class RefusalDetected(RenderscoreError):
    """Model response is a refusal rather than a structure."""


class TooFewModels(RenderscoreError):
    """Win rates need at least two models."""


class EmptySet(RenderscoreError):
    """An aggregate was requested over zero records."""
