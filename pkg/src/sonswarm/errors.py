"""Exception types raised across the package."""


class SonswarmError(Exception):
    """Base class for all package errors."""


class ParseError(SonswarmError):
    pass


class ValidationError(SonswarmError):
    pass


class UnknownRobot(SonswarmError, KeyError):
    def __str__(self) -> str:
        return f"unknown robot id {self.args[0]!r}" if self.args else "unknown robot"


class DisconnectedSwarm(SonswarmError):
    pass


class NotBrain(SonswarmError):
    pass


class UnassignedRobot(SonswarmError):
    pass


# mission runtime
class ScriptError(SonswarmError):
    """Anything wrong with a mission script."""


class ScriptSyntaxError(ScriptError):
    pass


class MissingEntryPoint(ScriptError):
    pass


class ForbiddenApi(ScriptError):
    pass


class ScriptRuntimeError(ScriptError):
    pass


class BudgetExceeded(ScriptError):
    pass


class CompileFailed(ScriptError):
    pass


# llm gateway
class LlmError(SonswarmError):
    pass


class PendingReply(LlmError):
    pass


class AuthError(LlmError):
    pass


class RateLimited(LlmError):
    pass


class ServerError(LlmError):
    pass


class Timeout(LlmError):
    pass


class MalformedReply(LlmError):
    pass


class NoCodeBlock(LlmError):
    pass


# harness
class InvalidCount(SonswarmError, ValueError):
    pass


class EmptyMetrics(SonswarmError):
    pass
