"""Exception hierarchy. Each class maps to one CLI exit code."""


class VulnwatchError(Exception):
    exit_code = 2
    stage = None


class ConfigError(VulnwatchError):
    exit_code = 1


class DataError(VulnwatchError):
    exit_code = 2


class MalformedRecordError(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"malformed record at line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateIdError(DataError):
    pass


class ExternalServiceError(VulnwatchError):
    exit_code = 3


class AuthenticationError(ExternalServiceError):
    pass


class ScorerUnavailableError(ExternalServiceError):
    pass


class NvdUnavailableError(ExternalServiceError):
    pass
