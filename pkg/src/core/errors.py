"""Exceptions raised by the apsde core modules."""


class ApsdeError(Exception):
    """Base class for every contract error of the library."""


class NonPsdError(ApsdeError):
    """A covariance matrix has an eigenvalue below the PSD tolerance."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class StepTooLargeError(ApsdeError):
    """Propagator error estimate stays above tolerance after one refinement."""

    def __init__(self, message, err_est=None, step=None):
        super().__init__(message)
        self.err_est = err_est
        self.step = step


class NotStableError(ApsdeError):
    """No positive decay-rate certificate, so tail truncation is unjustified."""


class UnstableError(ApsdeError):
    """Propagator norm grows past the instability threshold."""

    def __init__(self, message, max_norm=None):
        super().__init__(message)
        self.max_norm = max_norm


class DivergedError(ApsdeError):
    """An Euler-Maruyama path left the admissible range."""


class WindowTooShortError(ApsdeError):
    """The sampled window cannot host the requested shift range."""


class InconclusiveError(ApsdeError):
    """A falsification attempt could not separate the infimum from zero."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class UndecidedError(ApsdeError):
    """Monte Carlo confidence intervals straddle a decision threshold."""

    def __init__(self, message, verdict=None):
        super().__init__(message)
        self.verdict = verdict


class ConfigError(ApsdeError):
    """Experiment configuration failed to parse or validate."""

    def __init__(self, message, field=None, line=None, column=None):
        super().__init__(message)
        self.field = field
        self.line = line
        self.column = column

    def __str__(self):
        where = []
        if self.field:
            where.append(f"field '{self.field}'")
        if self.line is not None:
            where.append(f"line {self.line}, column {self.column}")
        base = super().__str__()
        return f"{base} ({', '.join(where)})" if where else base
