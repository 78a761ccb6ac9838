"""Error descriptions, module tags and process exit codes."""

from typing import Any, Optional

# Process exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ACCEPTANCE_FAILURE = 2

# Exception class name to short description
ERROR_CODES = {
    "ContractViolationError": "Contract violation",
    "ValidationError": "Invalid input",
    "ConfigError": "Invalid configuration",
    "UnsupportedError": "Unsupported operation",
    "EstimatorUnavailableError": "Estimator unavailable",
    "DivergenceError": "Training diverged",
    "RunTimeoutError": "Run timed out",
}

# Python module to the toolkit module name used in user-facing messages
MODULE_TAGS = {
    "cav.voi.ssdp": "ssdp-core",
    "cav.voi.dp": "dp-solver",
    "cav.voi.nn": "neural-rl",
    "cav.voi.td3": "neural-rl",
    "cav.voi.vehicle": "vehicle-env",
    "cav.voi.predecessor": "vehicle-env",
    "cav.voi.metrics": "voi",
    "cav.voi.comm": "comm-sim",
    "cav.voi.config": "cli",
    "cav.voi.runner": "cli",
    "cav.voi.async_runner": "cli",
    "cav.voi.cli": "cli",
    "cav.voi.scenarios": "cli",
}


def module_tag(module_name: Optional[str]) -> str:
    """Map a Python module path to its toolkit module name.

    Args:
        module_name: Dotted module path (e.g., "cav.voi.dp") or a toolkit name

    Returns:
        Toolkit module name, or "cli" when unknown
    """
    if not module_name:
        return "cli"
    if module_name in MODULE_TAGS:
        return MODULE_TAGS[module_name]
    if module_name in MODULE_TAGS.values():
        return module_name
    return "cli"


def get_error_message(error_type: Any) -> str:
    """Get the short description for an exception class or its name.

    Args:
        error_type: Exception class, instance, or class name

    Returns:
        Description string
    """
    if isinstance(error_type, BaseException):
        error_type = type(error_type)
    if isinstance(error_type, type):
        for klass in error_type.__mro__:
            if klass.__name__ in ERROR_CODES:
                return ERROR_CODES[klass.__name__]
        return error_type.__name__
    if isinstance(error_type, str) and error_type in ERROR_CODES:
        return ERROR_CODES[error_type]
    return "Unknown error"


def format_error_message(exc: BaseException) -> str:
    """Format an exception as a module-qualified message.

    Args:
        exc: The exception to format

    Returns:
        Message like "[dp-solver] Contract violation: P[3, 1, :] sums to 0.9"
    """
    module = getattr(exc, "module", None)
    if module is None:
        tb = exc.__traceback__
        while tb is not None and tb.tb_next is not None:
            tb = tb.tb_next
        if tb is not None:
            module = tb.tb_frame.f_globals.get("__name__")
    return f"[{module_tag(module)}] {get_error_message(exc)}: {exc}"
