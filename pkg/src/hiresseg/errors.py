"""Exception hierarchy. ``exit_code`` is what the CLI returns for each kind."""


class HiResSegError(Exception):
    exit_code = 2


class ConfigError(HiResSegError, ValueError):
    """Invalid configuration, argument, or shape/dtype contract violation."""


class ShapeError(ConfigError):
    pass


class DTypeError(ConfigError):
    pass


class InputError(ConfigError):
    pass


class DegenerateMaskError(HiResSegError, ValueError):
    """A mask with no active token where at least one is required."""


class NumericError(HiResSegError, ArithmeticError):
    pass


class TrainingError(HiResSegError, RuntimeError):
    pass


class FormatError(HiResSegError):
    """Malformed HRTF file. ``offset`` is the byte position of the problem."""

    exit_code = 3

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
