"""Exception taxonomy shared by all pipeline stages."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors."""


# --- configuration ---------------------------------------------------------

class ConfigParseError(EngineError):
    """Configuration document is not valid JSON."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(EngineError):
    """Configuration violates the schema; carries the offending path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# --- expression language ---------------------------------------------------

class ExprError(EngineError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"at offset {offset}: {message}")
        self.offset = offset


class UnboundVariable(ExprError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


class DivisionByZero(ExprError):
    pass


class NonFiniteResult(ExprError):
    pass


# --- ingestion -------------------------------------------------------------

class TranslateError(EngineError):
    pass


class PayloadParseError(TranslateError):
    pass


class FieldMissing(TranslateError):
    def __init__(self, path: str):
        super().__init__(f"field {path!r} missing from payload")
        self.path = path


class NonFiniteValue(TranslateError):
    pass


class TimestampInvalid(TranslateError):
    pass


class UnknownSource(EngineError):
    pass


class UnknownEnvironment(EngineError):
    pass


# --- windowing -------------------------------------------------------------

class TimestampBeforeOrigin(EngineError):
    pass


class NoSamples(EngineError):
    pass


class GapUnfillable(EngineError):
    def __init__(self, signal_id: str, reason: str):
        super().__init__(f"signal {signal_id!r}: {reason}")
        self.signal_id = signal_id
        self.reason = reason


class MemberUnresolved(EngineError):
    def __init__(self, signal_id: str, member_id: str):
        super().__init__(f"derived {signal_id!r}: member {member_id!r} unresolved")
        self.signal_id = signal_id
        self.member_id = member_id


# --- inference -------------------------------------------------------------

class MissingFeature(EngineError):
    def __init__(self, feature: str):
        super().__init__(f"frame is missing feature {feature!r}")
        self.feature = feature


class NonFiniteEncoding(EngineError):
    pass


# --- model clients ---------------------------------------------------------

class ModelError(EngineError):
    pass


class ModelTimeout(ModelError):
    pass


class ModelUnreachable(ModelError):
    pass


class ModelBadResponse(ModelError):
    pass


# --- persistence / replay --------------------------------------------------

class StoreUnavailable(EngineError):
    pass


class TraceFormatError(EngineError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
