"""Exception hierarchy shared by all modules."""


class VemError(Exception):
    """Base class for all package errors."""


class MeshError(VemError):
    pass


class NonManifoldEdge(MeshError):
    pass


class DegenerateCell(MeshError):
    pass


class DuplicateVertexInLoop(MeshError):
    pass


class DegenerateSeedConfiguration(MeshError):
    pass


class ParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InconsistentCounts(ParseError):
    pass


class UnsupportedOrder(VemError):
    pass


class TriangulationFailure(VemError):
    pass


class SingularLocalSystem(VemError):
    pass


class UnlabeledBoundary(VemError):
    pass


class SingularSystem(VemError):
    pass


class ResidualTooLarge(VemError):
    pass


class UnknownProblem(VemError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class MissingExactSolution(VemError):
    pass
