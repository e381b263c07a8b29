"""Exception hierarchy."""


class CsoError(Exception):
    pass


class StructureError(CsoError):
    """Mesh topology is not what an operation requires."""


class DomainError(CsoError, ValueError):
    pass


class ResourceError(CsoError, MemoryError):
    pass


class InversionError(CsoError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class AssemblyError(CsoError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class SolverError(CsoError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = [] if history is None else list(history)


class MeshAssumptionError(CsoError):
    """The 2D mesh admits no gradient-jump correction function."""


class ParseError(CsoError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(CsoError, ValueError):
    pass


class DimensionError(CsoError, ValueError):
    """Point set does not span three dimensions."""
