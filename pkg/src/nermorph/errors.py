"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class NerMorphError(Exception):
    """Base class for every error raised by nermorph."""


class EmptyText(NerMorphError, ValueError):
    pass


class InvalidOutput(NerMorphError, ValueError):
    """An NER output violates ordering, overlap or span/text agreement."""


class DimensionMismatch(NerMorphError, ValueError):
    pass


class ZeroNorm(NerMorphError, ValueError):
    pass


class EmptySpan(NerMorphError, ValueError):
    pass


class UnscriptedQuery(NerMorphError, KeyError):
    def __init__(self, oracle: str, query: object):
        self.oracle = oracle
        self.query = query
        super().__init__(f"{oracle}: no scripted response for {query!r}")

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class TreeError(NerMorphError, ValueError):
    """Malformed bracketed tree or a tree whose yield disagrees with the sentence."""


class NoRewrite(NerMorphError):
    """The structural transformation does not apply to this sentence."""


class BackendError(NerMorphError):
    pass


class BackendUnavailable(BackendError):
    retryable = True


class NetworkDisabled(BackendUnavailable):
    retryable = False


class SpanMismatch(BackendError, ValueError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class SchemaError(BackendError, ValueError):
    pass


class WrongKind(NerMorphError, ValueError):
    pass


class EmptySample(NerMorphError, ValueError):
    pass


class ZeroDenominator(NerMorphError, ZeroDivisionError):
    def __init__(self, denominator: str):
        self.denominator = denominator
        super().__init__(f"{denominator} is zero")


class NoChange(NerMorphError, ValueError):
    pass


class IdMismatch(NerMorphError, ValueError):
    def __init__(self, unmatched: list[str]):
        self.unmatched = sorted(unmatched)
        super().__init__(f"unmatched issue ids: {', '.join(self.unmatched)}")


class ConfigError(NerMorphError, ValueError):
    pass
