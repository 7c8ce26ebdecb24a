"""Exception hierarchy.

Each family carries the exit code the CLI returns for it:
    - ConfigError: 2
    - MissingStage: 3
    - DataError: 4
    - anything else derived from EcgFreqError: 1
"""


class EcgFreqError(Exception):
    exit_code = 1


# config
class ConfigError(EcgFreqError):
    exit_code = 2


class NonPositiveLimit(ConfigError, ValueError):
    pass


class NonPositiveTarget(ConfigError, ValueError):
    pass


# pipeline stages
class MissingStage(EcgFreqError):
    exit_code = 3

    def __init__(self, artifact, stage: str = None):
        self.artifact = artifact
        self.stage = stage
        hint = f' (run `ecgfreq {stage}` first)' if stage else ''
        super().__init__(f'missing artifact: {artifact}{hint}')


# data
class DataError(EcgFreqError, ValueError):
    exit_code = 4


class MissingColumn(DataError):
    pass


class DuplicateRecordId(DataError):
    pass


class UnparsableRow(DataError):
    def __init__(self, row_index: int | None, reason: str, line: int = None):
        self.row_index = row_index
        self.line = line
        if row_index is not None:
            where = f'row {row_index}'
        elif line is not None:
            where = f'line {line}'
        else:
            where = 'unknown line'
        super().__init__(f'{where}: {reason}')


class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TruncatedPayload(DataError):
    def __init__(self, expected: int, actual: int, path=None):
        self.expected = expected
        self.actual = actual
        where = f'{path}: ' if path is not None else ''
        super().__init__(f'{where}expected {expected} payload bytes, got {actual}')


class IoFailure(DataError):
    pass


class InvariantViolation(DataError):
    pass


class TooShort(DataError):
    pass


class FsMismatch(DataError):
    pass


class EmptyManifest(DataError):
    pass


class SingleClassInput(DataError):
    pass


class TooFewPatients(DataError):
    pass


class InputTooShort(DataError):
    pass


class PatientLeak(DataError):
    pass


class NonFiniteLogit(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class SingleClass(DataError):
    pass


class DegenerateCurve(DataError):
    pass


class EmptyInput(DataError):
    pass


class MisalignedRecords(DataError):
    pass


class FoldCountMismatch(DataError):
    pass


class OverlapDetected(DataError):
    pass


# training
class TrainingError(EcgFreqError):
    pass


class DivergedLoss(TrainingError):
    pass


class NonFiniteActivation(TrainingError):
    pass
