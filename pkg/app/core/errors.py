class ConnectorLabError(Exception):
    """Base class for every error raised by the library."""


# Validation family: bad input or configuration (CLI exit 1, HTTP 400)

class ConfigError(ConnectorLabError, ValueError):
    pass


class GeometryError(ConnectorLabError, ValueError):
    pass


class DimensionError(ConnectorLabError, ValueError):
    pass


class TaxonomyLookupError(ConnectorLabError, LookupError, ValueError):
    pass


# Runtime family: the computation itself failed (CLI exit 2, HTTP 500)

class NonFiniteError(ConnectorLabError, ArithmeticError):
    pass


class ContractError(ConnectorLabError, RuntimeError):
    pass


class ProbeError(ConnectorLabError, RuntimeError):
    pass


class DivergedRunError(ConnectorLabError, RuntimeError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        message = f"Training diverged at step {step}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


VALIDATION_ERRORS = (ConfigError, GeometryError, DimensionError, TaxonomyLookupError)
