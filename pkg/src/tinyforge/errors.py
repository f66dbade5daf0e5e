"""Exception hierarchy shared across the package.

Domain-level failures (a bad attempt, a failing execution) are represented as
data, not exceptions; the classes here cover contract violations and
infrastructure faults.
"""

from __future__ import annotations


class TinyforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(TinyforgeError):
    """Configuration file missing, unparsable, or inconsistent."""


# --- stage input validation ---

class MissingField(TinyforgeError):
    def __init__(self, field: str) -> None:
        super().__init__(f"missing required field: {field}")
        self.field = field


class PathNotFound(TinyforgeError):
    def __init__(self, field: str, path: str) -> None:
        super().__init__(f"{field}: path does not exist: {path}")
        self.field = field
        self.path = path


class WrongStageFields(TinyforgeError):
    def __init__(self, fields: list[str]) -> None:
        super().__init__(f"fields not valid for this stage: {', '.join(fields)}")
        self.fields = fields


# --- pipeline chaining ---

class PreviousStageFailed(TinyforgeError):
    pass


class IncompatibleStagePair(TinyforgeError):
    pass


# --- prompt engine ---

class LintFailure(TinyforgeError):
    def __init__(self, issues: list[str]) -> None:
        super().__init__("template lint failed: " + "; ".join(issues))
        self.issues = issues


class UnresolvedPlaceholder(TinyforgeError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unresolved placeholder: {name}")
        self.name = name


class TemplateNotRegistered(TinyforgeError):
    pass


# --- llm gateway ---

class ProviderError(TinyforgeError):
    """Base for provider faults surfaced during a completion call."""


class ProviderUnreachable(ProviderError):
    pass


class FixtureExhausted(ProviderError):
    pass


class RateLimited(ProviderError):
    pass


class NoCode(TinyforgeError):
    pass


class NegativeTokens(TinyforgeError):
    pass


# --- executor ---

class InterpreterNotFound(TinyforgeError):
    pass


class ToolchainNotFound(TinyforgeError):
    pass


class BoardUnknown(TinyforgeError):
    pass


class PortUnavailable(TinyforgeError):
    pass


class NotAFailure(TinyforgeError):
    pass


# --- trace store ---

class StoreUnwritable(TinyforgeError):
    pass


class DuplicateEvent(TinyforgeError):
    pass


class RunNotFound(TinyforgeError):
    pass


# --- metrics ---

class EmptySampleSet(TinyforgeError):
    pass


class MixedStages(TinyforgeError):
    pass


class UnknownFormat(TinyforgeError):
    pass
