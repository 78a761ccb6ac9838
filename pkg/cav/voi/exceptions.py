"""Custom exceptions for the VoI toolkit."""

from typing import Any, Dict, List, Optional


class VoIError(Exception):
    """Base exception for all toolkit errors."""

    pass


class ContractViolationError(VoIError):
    """Raised when an operation's precondition or invariant is violated."""

    def __init__(self, message: str, module: Optional[str] = None):
        super().__init__(message)
        self.module = module


class ValidationError(VoIError):
    """Raised when input validation fails."""

    pass


class ConfigError(ValidationError):
    """Raised when an experiment configuration is invalid."""

    def __init__(self, message: str, violations: Optional[List[str]] = None):
        super().__init__(message)
        self.violations = violations or []


class UnsupportedError(VoIError):
    """Raised when a transform or estimator does not apply to the given input."""

    pass


class EstimatorUnavailableError(VoIError):
    """Raised when a VoI computation lacks the estimator it needs."""

    def __init__(self, message: str, estimator: Optional[str] = None):
        super().__init__(message)
        self.estimator = estimator


class DivergenceError(VoIError):
    """Raised when training diverges."""

    def __init__(self, message: str, diagnostic: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class RunTimeoutError(VoIError):
    """Raised when waiting on a background run times out."""

    def __init__(self, message: str, run_id: Optional[str] = None):
        super().__init__(message)
        self.run_id = run_id
