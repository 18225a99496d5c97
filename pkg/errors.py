class DemoBotError(Exception):
    """Base class for all errors raised by the retrieval engine."""


class DataError(DemoBotError, ValueError):
    """Malformed or inconsistent input data (files, trajectories, references)."""

    def __init__(self, message, path=None, line=None, traj_id=None):
        self.path = path
        self.line = line
        self.traj_id = traj_id
        prefix = ''
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            prefix = f"line {line}: "
        if traj_id is not None:
            message = f"traj '{traj_id}' {message}"
        super().__init__(prefix + message)


class ConfigurationError(DemoBotError, ValueError):
    """Invalid configuration key or value."""


class InvariantError(DemoBotError, RuntimeError):
    """An internal invariant was broken."""


class ExpertError(DemoBotError):
    """The scripted expert refused a start state or failed to finish."""

    def __init__(self, message, seed=None):
        self.seed = seed
        if seed is not None:
            message = f"seed {seed}: {message}"
        super().__init__(message)
