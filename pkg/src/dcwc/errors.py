class DcwcError(Exception):
    """Base class for protocol-level rejections."""


class InvalidParams(DcwcError):
    pass


class InsufficientFunds(DcwcError):
    pass


class FeeExceedsPool(DcwcError):
    pass


class RemainderTooSmall(DcwcError):
    pass


class InvalidTimelock(DcwcError):
    pass


class SetupIncomplete(DcwcError):
    pass


class InvalidGraph(DcwcError):
    pass


class DecreasingCommitment(DcwcError):
    pass


class InsolventPayment(DcwcError):
    pass


class Unprovable(DcwcError):
    pass


class MixedChannelStates(DcwcError):
    pass


class ScenarioError(DcwcError):
    """Scenario file failed to parse or validate; ``line`` points into the source."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
