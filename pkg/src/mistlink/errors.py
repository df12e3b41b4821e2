"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for bad or inconsistent input data, 3 for training divergence.
"""


class MistlinkError(Exception):
    exit_code = 1


class DataError(MistlinkError):
    exit_code = 2


class EmptyDocument(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class UnencodableText(DataError):
    pass


class EmptyFCG(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class TrainingError(MistlinkError):
    exit_code = 3


class DivergedGradient(TrainingError):
    pass


class NegativeSamplingExhausted(TrainingError):
    pass
