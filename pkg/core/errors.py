"""
Exception hierarchy shared by every module of the simulator.

Errors that describe a bad numeric domain also derive from ``ValueError``
so callers that only know the standard library can still catch them.
"""


class EsoaflError(Exception):
    """Base class for all simulator errors."""


class InvalidSpecError(EsoaflError, ValueError):
    """A dataset, partition or model specification is unusable."""


class ShapeError(EsoaflError, ValueError):
    """Array dimensions do not agree."""


class DegenerateScaleError(EsoaflError, ValueError):
    """Every update is zero, so no quantization scale exists."""


class ClippingForbiddenError(EsoaflError, ValueError):
    """A coordinate lies outside the quantization range."""


class DomainError(EsoaflError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class DivergedClientError(EsoaflError, ArithmeticError):
    """A client produced a non-finite gradient."""

    def __init__(self, client_id: int, round_index: int):
        self.client_id = client_id
        self.round_index = round_index
        super().__init__(
            f'Client {client_id} diverged in round {round_index}: '
            'non-finite gradient.')


class NotApplicableError(EsoaflError):
    """The learning-rate condition of the convergence bound fails."""


class IllPosedFitError(EsoaflError, ValueError):
    """Fit samples cannot identify the round-model constants."""


class SolverStallError(EsoaflError, RuntimeError):
    """The convex subproblem solver ran out of iterations."""


class JcpDiagnosticError(EsoaflError, RuntimeError):
    """The outer JCP iteration increased the objective."""


class ConfigError(EsoaflError, ValueError):
    """An experiment configuration is invalid."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f'{field}: {message}')
