"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: ConfigError -> 2, InputError (and
subclasses) -> 3, DivergenceError -> 4.
"""


class WudiffError(Exception):
    """Base class for all library errors."""


class ConfigError(WudiffError):
    """Invalid configuration (bad keys, bad values, inconsistent options)."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InputError(WudiffError):
    """Invalid data or arguments (out-of-range ids, bad ratings, ...)."""


class ParseError(InputError):
    """Malformed input file; carries file path and 1-based line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class DivergenceError(WudiffError):
    """Training produced a non-finite parameter; carries diagnostics."""

    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        super().__init__(message)
