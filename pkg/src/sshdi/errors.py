"""Exception hierarchy. CLI exit codes hang off these classes."""


class SSHDIError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(SSHDIError):
    pass


class NotSymmetric(SSHDIError):
    pass


class RankDeficient(SSHDIError):
    def __init__(self, rank, dropped):
        self.rank = rank
        self.dropped = tuple(dropped)
        super().__init__(f"design has rank {rank}; dropped columns {list(self.dropped)}")


class NonConvergence(SSHDIError):
    pass


class SelectionTooLarge(SSHDIError):
    pass


class DegenerateResamples(SSHDIError):
    pass


class RunAborted(SSHDIError):
    """Too many resamples failed."""


class ConfigError(SSHDIError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class IngestError(SSHDIError):
    pass


class DimensionError(SSHDIError):
    pass
