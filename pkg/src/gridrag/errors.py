"""Exception hierarchy shared across gridrag modules."""


class GridragError(Exception):
    """Base class for all library errors."""


# workbook
class MalformedWorkbook(GridragError):
    pass


class UnsupportedFormat(GridragError):
    pass


class InvalidCoordinate(GridragError, ValueError):
    pass


# chunker
class ChunkTooLarge(GridragError):
    pass


# index
class DuplicateChunkId(GridragError):
    pass


class EmbedderFailure(GridragError):
    def __init__(self, chunk_id, cause, embedded=0):
        self.chunk_id = chunk_id
        self.cause = cause
        self.embedded = embedded
        super().__init__(f"embedding failed for {chunk_id} after {embedded} chunks: {cause}")


class IncompatibleVersion(GridragError):
    pass


class CorruptIndex(GridragError):
    pass


# agent
class BackendFailure(GridragError):
    def __init__(self, cause, trace=None):
        self.cause = cause
        self.trace = trace if trace is not None else []
        super().__init__(str(cause))


class ScriptMismatch(BackendFailure):
    """A scripted backend step did not match the conversation it was given."""


class ToolFailure(GridragError):
    pass


# planner
class PlanInvalid(GridragError):
    def __init__(self, details, responses=()):
        self.details = list(details)
        self.responses = list(responses)
        super().__init__("; ".join(self.details))


class UnknownExecutorType(GridragError, ValueError):
    pass


# executors
class SheetNotFound(GridragError):
    pass


class BadRange(GridragError, ValueError):
    pass


class WriteConflict(GridragError):
    pass


class NonNumericCell(GridragError):
    def __init__(self, ref):
        self.ref = ref
        super().__init__(f"cell {ref} is not numeric")


class FormulaError(GridragError):
    """Base for formula parse and evaluation failures; ``code`` is the Excel-style error value."""

    code = "#VALUE!"

    def __init__(self, message, code=None):
        if code is not None:
            self.code = code
        super().__init__(message)


class ParseError(FormulaError):
    code = "#NAME?"


class UnknownFunction(FormulaError):
    code = "#NAME?"


class CycleDetected(FormulaError):
    code = "#REF!"


class EvalError(GridragError):
    def __init__(self, cell, cause):
        self.cell = cell
        self.cause = cause
        super().__init__(f"{cell}: {cause}")


class ImageNotFound(GridragError):
    pass


class IOParseError(GridragError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


# evalkit
class EmptyRelevantSet(GridragError, ValueError):
    pass


class UnresolvedLabel(GridragError):
    def __init__(self, query_id, chunk_id):
        self.query_id = query_id
        self.chunk_id = chunk_id
        super().__init__(f"query {query_id}: label {chunk_id} is not an indexed chunk")
