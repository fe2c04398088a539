"""Exception hierarchy shared by every prodkg module."""

from __future__ import annotations


class ProdKGError(Exception):
    """Base class for all errors raised by prodkg."""


# --- schema ---------------------------------------------------------------


class InvalidInput(ProdKGError, ValueError):
    pass


class InductionError(ProdKGError):
    """A schema-induction step got unusable model output twice in a row."""


class EmptyResult(InductionError):
    pass


class UnparseableTypeLabel(InductionError):
    pass


class EmptyUnit(InductionError):
    pass


class TooFewChoices(InductionError):
    pass


class SchemaInvariantViolation(ProdKGError, ValueError):
    pass


class ParseError(ProdKGError, ValueError):
    """Malformed document text. ``line`` is 1-based when known."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


# --- constraints ----------------------------------------------------------


class OutputValidationError(ProdKGError, ValueError):
    """Model output does not parse into a schema-valid assignment."""

    field: str | None = None


class MalformedObject(OutputValidationError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"output is not a single JSON object: {detail}")


class MissingField(OutputValidationError):
    def __init__(self, field: str):
        self.field = field
        super().__init__(f"missing field {field!r}")


class ExtraField(OutputValidationError):
    def __init__(self, field: str):
        self.field = field
        super().__init__(f"unexpected field {field!r}")


class TypeMismatch(OutputValidationError):
    def __init__(self, field: str, expected: str, got: object):
        self.field = field
        self.expected = expected
        self.got = got
        super().__init__(f"field {field!r} expects {expected}, got {got!r}")


class UnknownChoice(OutputValidationError):
    def __init__(self, field: str, got: str, allowed: tuple[str, ...]):
        self.field = field
        self.got = got
        self.allowed = allowed
        super().__init__(f"field {field!r} got {got!r}, allowed: {', '.join(allowed)}")


# --- model_client ---------------------------------------------------------


class BackendError(ProdKGError):
    pass


class TransportError(BackendError):
    def __init__(self, message: str, *, status: int | None = None):
        self.status = status
        super().__init__(message)


class ConstraintViolation(BackendError):
    def __init__(self, reply: str, pattern: str):
        self.reply = reply
        self.pattern = pattern
        super().__init__(f"reply does not match the generation constraint: {reply[:120]!r}")


class FixtureMiss(BackendError):
    def __init__(self, key: str, hint: str = ""):
        self.key = key
        msg = f"no replay fixture for key {key}"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)


class DuplicateKey(BackendError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"fixture {key} already recorded with different replies")


# --- graph ----------------------------------------------------------------


class EmptyLabel(ProdKGError, ValueError):
    pass


class ChainEndpointMismatch(ProdKGError, ValueError):
    pass


class InvalidSubgraph(ProdKGError, ValueError):
    pass


# --- pipeline -------------------------------------------------------------


class ConfigError(ProdKGError, ValueError):
    pass


class EmptyDescription(ProdKGError):
    pass


class ImageDecodeError(ProdKGError):
    pass


class StageError(ProdKGError):
    """Wraps a failure inside one enrollment stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


# --- eval -----------------------------------------------------------------


class EmptyPairs(ProdKGError, ValueError):
    pass


class AnnotationError(ProdKGError, ValueError):
    pass


# --- persist --------------------------------------------------------------


class VersionMismatch(ProdKGError):
    pass


class InvariantViolation(ProdKGError):
    pass
