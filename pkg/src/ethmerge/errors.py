"""Exception hierarchy. Every operational failure derives from EthMergeError."""


class EthMergeError(Exception):
    """Base class; the CLI maps these to exit status 1."""

    @property
    def kind(self) -> str:
        return type(self).__name__


# ingestion
class InvalidRange(EthMergeError, ValueError):
    pass


class EndpointUnreachable(EthMergeError):
    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class MalformedResponse(EthMergeError):
    pass


class GapDetected(EthMergeError):
    def __init__(self, gaps: list[tuple[int, int]]):
        self.gaps = list(gaps)
        text = ", ".join(f"[{a},{b}]" for a, b in self.gaps)
        super().__init__(f"missing blocks {text}")


class UnknownBlock(EthMergeError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class SlotOutOfRange(EthMergeError, IndexError):
    pass


class StoreWriteFailure(EthMergeError):
    pass


# dataset
class InconsistentRecord(EthMergeError, ValueError):
    pass


class DegenerateDistribution(EthMergeError, ValueError):
    pass


class ZeroMedian(EthMergeError, ValueError):
    pass


class UnmappedBlock(EthMergeError):
    pass


# miners
class InsufficientProducers(EthMergeError, ValueError):
    pass


class SampleTooShort(EthMergeError, ValueError):
    pass


# synth
class InvalidConfig(EthMergeError, ValueError):
    pass


# predictor
class InsufficientHistory(EthMergeError, ValueError):
    pass


class InvalidSpec(EthMergeError, ValueError):
    pass


class DegenerateDesign(EthMergeError):
    pass


class FeatureMismatch(EthMergeError, ValueError):
    pass


class TargetMismatch(EthMergeError, ValueError):
    pass


class UncalibratedModel(EthMergeError):
    pass


class EmptyHorizon(EthMergeError, ValueError):
    pass


class VersionMismatch(EthMergeError):
    pass


class CorruptModelFile(EthMergeError):
    pass


# metrics
class LengthMismatch(EthMergeError, ValueError):
    pass
