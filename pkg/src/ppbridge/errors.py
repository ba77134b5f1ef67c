"""Exception types shared across the package."""


class PPBridgeError(Exception):
    """Base class; ``code`` is a module-qualified identifier used by the CLI."""

    code = "ppbridge.error"


class DomainError(PPBridgeError, ValueError):
    code = "skellam.domain"


class DegenerateStateError(PPBridgeError, ArithmeticError):
    """The conditioning probability underflows even in log space."""

    code = "law.degenerate_state"


class QuadratureError(PPBridgeError, ArithmeticError):
    code = "numerics.quadrature_failure"


class GuardViolation(PPBridgeError, RuntimeError):
    code = "simulator.guard_violation"


class StepInstability(PPBridgeError, ArithmeticError):
    code = "kyle.step_instability"


class InsufficientSample(PPBridgeError, ValueError):
    code = "harness.insufficient_sample"


class ConfigInvalid(PPBridgeError, ValueError):
    code = "cli.config_invalid"


class IOFailure(PPBridgeError, OSError):
    code = "cli.io_failure"
