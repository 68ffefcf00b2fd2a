"""Exception hierarchy shared by every hpcdetect module."""


class HPCDetectError(Exception):
    """Base class for all toolkit errors."""


# event source
class PlatformUnsupported(HPCDetectError):
    pass


class PermissionDenied(HPCDetectError):
    pass


class NoSuchProcess(HPCDetectError):
    pass


class EventUnavailable(HPCDetectError):
    def __init__(self, name, reason=""):
        self.name = name
        super().__init__(f"event {name} unavailable" + (f": {reason}" if reason else ""))


class InvalidConfig(HPCDetectError, ValueError):
    pass


class InvalidProfile(HPCDetectError, ValueError):
    pass


class MalformedTrace(HPCDetectError, ValueError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class MissingHeader(MalformedTrace):
    def __init__(self, reason="missing or empty header"):
        super().__init__(1, reason)


class InconsistentWidth(MalformedTrace):
    def __init__(self, line, expected, got):
        super().__init__(line, f"expected {expected} values, got {got}")


# dataset
class ClassTooSmall(HPCDetectError, ValueError):
    pass


class TooFewRows(HPCDetectError, ValueError):
    pass


# feature selection / learners
class UnlabeledData(HPCDetectError, ValueError):
    pass


class SingleClass(HPCDetectError, ValueError):
    pass


class NonFiniteFeature(HPCDetectError, ValueError):
    pass


class SchemaMismatch(HPCDetectError, ValueError):
    pass


class VersionMismatch(HPCDetectError):
    pass


class CorruptModel(HPCDetectError):
    pass


# evaluation
class EmptyMatrix(HPCDetectError, ValueError):
    pass


class ClassAbsent(HPCDetectError, ValueError):
    pass


# detector
class MissingFeature(SchemaMismatch):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing feature {name}")


class ConvergenceFailure(UserWarning):
    """An iterative learner hit its epoch cap before the loss settled."""
