"""Shared exception hierarchy, grouped to match the CLI exit codes."""


class WorkbenchError(Exception):
    """Base class for all workbench failures."""


class ConfigError(WorkbenchError):
    """Bad run configuration or unusable input paths (exit code 2)."""


class ClientError(WorkbenchError):
    """Upstream model/judge/embedding client failure (exit code 3)."""


class DataError(WorkbenchError):
    """Validation failure in datasets or artifacts (exit code 4)."""
