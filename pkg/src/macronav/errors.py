"""Exception types raised across the package."""


class MacroNavError(Exception):
    pass


class InvalidConfig(MacroNavError):
    pass


class ParseError(MacroNavError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownNode(MacroNavError, KeyError):
    pass


class NotAnObject(MacroNavError):
    pass


class NoPath(MacroNavError):
    pass


class EmptyMap(MacroNavError):
    pass


class InvalidArch(MacroNavError):
    pass


class ShapeMismatch(MacroNavError, ValueError):
    pass


class EmptyActionSet(MacroNavError):
    pass


class EmptySeries(MacroNavError):
    pass
