"""Exception hierarchy.

Every error carries the name of the pipeline stage that raised it so the
CLI can print a one-line diagnostic of the form ``module: cause``.
"""


class FusedFacesError(Exception):
    module = "fusedfaces"

    def __init__(self, message="", module=None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def __str__(self):
        return f"{self.module}: {super().__str__()}"


# imageio
class ImageIOError(FusedFacesError):
    module = "imageio"


class MissingFile(ImageIOError, FileNotFoundError):
    pass


class MalformedHeader(ImageIOError, ValueError):
    pass


class TruncatedPayload(ImageIOError, ValueError):
    pass


class UnwritablePath(ImageIOError, OSError):
    pass


class SchemaViolation(ImageIOError, ValueError):
    pass


class MissingImage(ImageIOError, FileNotFoundError):
    pass


class DimensionMismatch(FusedFacesError, ValueError):
    module = "imageio"


class InvalidConfig(FusedFacesError, ValueError):
    module = "config"


# fusion
class UnpairedEntry(FusedFacesError, ValueError):
    module = "fusion"


# eigenspace
class EigenspaceError(FusedFacesError):
    module = "eigenspace"


class NotSymmetric(EigenspaceError, ValueError):
    pass


class NoConvergence(EigenspaceError, ArithmeticError):
    pass


class TooFewImages(EigenspaceError, ValueError):
    pass


class LengthMismatch(EigenspaceError, ValueError):
    pass


# rbfnet
class RbfError(FusedFacesError):
    module = "rbfnet"


class TooFewPoints(RbfError, ValueError):
    pass


class SingularSystem(RbfError, ArithmeticError):
    pass


# harness
class InsufficientImages(FusedFacesError, ValueError):
    module = "harness"
