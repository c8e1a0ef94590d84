"""Exception hierarchy shared across the package."""


class TensfieldError(Exception):
    """Base class for all errors raised by this package."""


class MeshError(TensfieldError):
    """Invalid mesh data or an operation applied to an unusable mesh."""


class NastranParseError(MeshError):
    """Malformed NASTRAN bulk data; carries the line number and card image."""

    def __init__(self, message, line_number=None, card=None):
        detail = message
        if line_number is not None:
            detail = f"line {line_number}: {detail}"
        if card is not None:
            detail = f"{detail}: {card!r}"
        super().__init__(detail)
        self.line_number = line_number
        self.card = card


class MaterialError(TensfieldError):
    """Missing or non-physical conductivity assignment."""


class AssemblyError(TensfieldError):
    """Finite-element assembly or boundary-condition failure."""


class ConvergenceError(TensfieldError):
    """Iterative solve did not reach the requested residual."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class PostprocessError(TensfieldError):
    """Field post-processing or report extraction failure."""


class PhantomError(TensfieldError):
    """Inconsistent phantom geometry specification."""


class ConfigError(TensfieldError):
    """Invalid scenario configuration; carries a JSON pointer when known."""

    def __init__(self, message, pointer=None):
        if pointer:
            message = f"{pointer}: {message}"
        super().__init__(message)
        self.pointer = pointer


class ScenarioError(TensfieldError):
    """Pipeline failure inside a scenario run, tagged with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class ConservationError(TensfieldError):
    """Electrode current balance violated the conservation gate."""
