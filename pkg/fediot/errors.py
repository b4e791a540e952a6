"""Exception hierarchy shared by every fediot module."""


class FedIoTError(Exception):
    """Base exception for simulator errors."""
    pass


class ConfigurationError(FedIoTError):
    """Raised when shapes, hyperparameters or row counts are invalid."""
    pass


class DataFormatError(FedIoTError):
    """Raised when an input file does not follow the CSV interchange format."""
    pass


class FederationError(FedIoTError):
    """Raised when the orchestrator cannot run a communication round."""
    pass


class MetricsError(FedIoTError):
    """Raised when detection metrics are requested on unusable inputs."""
    pass
