"""Exception hierarchy shared by all modules."""


class Mono3DError(Exception):
    pass


class InvalidInputError(Mono3DError, ValueError):
    pass


class BehindCameraError(Mono3DError, ValueError):
    """Point at or behind the camera plane (z <= EPS_Z)."""


class OutOfBoundsError(Mono3DError, IndexError):
    pass


class InsufficientSupportError(Mono3DError):
    """Too few usable pixels / keypoints to evaluate an energy."""


class NoSupportError(Mono3DError):
    """An energy was undefined over an entire search range or volume."""


class ParseError(Mono3DError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.line = line
        self.path = path


class CorruptFileError(Mono3DError):
    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
